//! Command-line driver.
//!
//! ```text
//! mongeboltz <command> [--config <path>] [--out <dir>] [--seed <u64>] [--<section>.<key>=<value> ...]
//! ```
//!
//! Exit codes: 0 success, 2 invalid config or usage, 3 size limit,
//! 4 numerical failure, 1 anything else. Failures print one line
//! `error: kind=<kind> code=<code> message=<text>` on stderr.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;
pub use commands::{execute, validate, MANIFEST_NAME};
pub use config::{Manifest, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Metropolis ensemble and its statistics.
    IsingSample,
    /// Exact enumeration and partition function.
    IsingExact,
    /// CD-k training on Ising data.
    RbmTrain,
    /// Exact marginal of a saved checkpoint.
    RbmEval,
    /// Effective Hamiltonian of block-majority coarse-graining.
    Coarsegrain,
    /// Wishart-cone membership, closure and trace-duality checks.
    WishartVerify,
    /// Monge–Ampère residual fixtures and Gaussian transport checks.
    TransportCheck,
    /// Ising data, RBM training, coarse-graining and latent transport in one run.
    Pipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::IsingSample => "ising-sample",
            Command::IsingExact => "ising-exact",
            Command::RbmTrain => "rbm-train",
            Command::RbmEval => "rbm-eval",
            Command::Coarsegrain => "coarsegrain",
            Command::WishartVerify => "wishart-verify",
            Command::TransportCheck => "transport-check",
            Command::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mongeboltz",
    version,
    about = "Ising, RBM, coarse-graining, Wishart and transport experiments",
    after_help = "Any parameter can be overridden with --<section>.<key>=<value>, e.g. --ising.beta=0.6"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config or a previous manifest.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parse(_)
        | Error::InvalidInput(_)
        | Error::DimensionMismatch { .. }
        | Error::Empty(_) => 2,
        Error::SizeLimit { .. } => 3,
        Error::Numerical(_)
        | Error::NotNormalized(_)
        | Error::NonSymmetric(_)
        | Error::NotPositiveDefinite(_)
        | Error::Singular(_)
        | Error::OutsideSupport(_)
        | Error::VanishingDensity(_)
        | Error::Degenerate(_) => 4,
        Error::Io(_) | Error::Json(_) => 1,
    }
}

pub fn error_line(kind: &str, code: i32, message: &str) -> String {
    format!(
        "error: kind={kind} code={code} message={}",
        message.replace(['\n', '\r'], " ")
    )
}

/// Shortest round-trip form, in exponent notation for very small or large
/// magnitudes.
pub fn fmt_float(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Separate `--section.key=value` overrides from the arguments clap sees.
pub fn split_overrides(
    args: Vec<OsString>,
) -> Result<(Vec<OsString>, Vec<(String, String)>), Error> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    for arg in args {
        let Some(s) = arg.to_str().and_then(|s| s.strip_prefix("--")) else {
            rest.push(arg);
            continue;
        };
        let name = s.split('=').next().unwrap_or("");
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let (k, v) = s.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "override --{s} needs the form --<section>.<key>=<value>"
            ))
        })?;
        overrides.push((k.to_string(), v.to_string()));
    }
    Ok((rest, overrides))
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let fail = |e: &Error| {
        let code = exit_code(e);
        eprintln!("{}", error_line(e.kind(), code, &e.to_string()));
        code
    };
    let (rest, overrides) = match split_overrides(args) {
        Ok(x) => x,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.kind().to_string();
            eprint!("{}", e.render());
            eprintln!("{}", error_line("usage", 2, &msg));
            return 2;
        }
    };
    let mut cfg = match RunConfig::load(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(out) = cli.out {
        cfg.run.out = out;
    }
    if let Some(seed) = cli.seed {
        if seed > i64::MAX as u64 {
            return fail(&Error::Config(format!("seed {seed} exceeds {}", i64::MAX)));
        }
        cfg.run.seed = seed;
    }
    match execute(cli.command, &cfg) {
        Ok(manifest) => {
            let mut stdout = std::io::stdout().lock();
            for (k, v) in &manifest.results {
                let _ = writeln!(stdout, "{k}={}", fmt_float(*v));
            }
            let _ = writeln!(
                stdout,
                "manifest={}",
                cfg.run.out.join(MANIFEST_NAME).display()
            );
            0
        }
        Err(e) => fail(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_split_out() {
        let args: Vec<OsString> = [
            "mb",
            "pipeline",
            "--ising.beta=0.5",
            "--seed",
            "3",
            "--out=x",
        ]
        .iter()
        .map(OsString::from)
        .collect();
        let (rest, ov) = split_overrides(args).unwrap();
        assert_eq!(rest, ["mb", "pipeline", "--seed", "3", "--out=x"]);
        assert_eq!(ov, vec![("ising.beta".to_string(), "0.5".to_string())]);
        assert!(split_overrides(vec!["--ising.beta".into()]).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(
            exit_code(&Error::SizeLimit {
                what: "sites",
                got: 25,
                max: 20
            }),
            3
        );
        assert_eq!(exit_code(&Error::Numerical("x".into())), 4);
        assert_eq!(
            error_line("config", 2, "a\nb"),
            "error: kind=config code=2 message=a b"
        );
    }
}
