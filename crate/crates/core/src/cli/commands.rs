//! The work behind each subcommand. Every command writes its artifacts into
//! the output directory and returns a [`Manifest`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use super::config::{DataSource, Manifest, RunConfig};
use super::Command;
use crate::coarsegrain::{
    effective_hamiltonian, hidden_block_agreement, permutation_null, pushforward_measure, quantile,
    rbm_weight_locality,
};
use crate::error::{Error, Result};
use crate::ising::{
    empirical_distribution, ensemble_stats, exact_enumerate, index_to_spins, sample_ensemble,
    total_variation, write_ensemble, EnsembleHeader, ExactTable, SpinLattice, MAX_ENUM_SITES,
};
use crate::rbm::{
    free_energy, kl_exact, log_partition, train, visible_distribution, Checkpoint, HistoryMetric,
    RbmModel, MAX_KL_UNITS,
};
use crate::rng::{derive_seed, from_seed};
use crate::transport::{
    gaussian_ot_map, latent_to_data_check, ma_residual_map, magnetization_per_site,
    monotone_transport_1d, w2_gaussian, write_residual_csv, Axis, Density, DensityGrid, FnDensity,
    GaussianDensity, LatentCheckConfig, MapSpec, ResidualField,
};
use crate::wishart::{
    cone_add, cone_membership, cone_scale, covariance, sample_wishart, trace_duality_check,
    write_samples_csv, Generator,
};

pub const MANIFEST_NAME: &str = "manifest.toml";
pub const CHECKPOINT_NAME: &str = "rbm_checkpoint.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write via a temporary file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

struct Sink {
    dir: PathBuf,
    manifest: Manifest,
    failures: Vec<String>,
}

impl Sink {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest::default(),
            failures: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        atomic_write(&self.dir.join(name), &buf)?;
        self.manifest
            .artifacts
            .insert(name.to_string(), sha256_hex(&buf));
        Ok(())
    }

    fn result(&mut self, key: &str, value: f64) {
        self.manifest.results.insert(key.to_string(), value);
    }

    fn write_checks(&mut self, name: &str, checks: &[Check]) -> Result<()> {
        for c in checks.iter().filter(|c| !c.pass) {
            self.failures.push(format!(
                "{} = {} (threshold {})",
                c.name, c.value, c.threshold
            ));
        }
        self.write(name, |out| {
            writeln!(out, "check,value,threshold,pass")?;
            for c in checks {
                writeln!(out, "{},{},{},{}", c.name, c.value, c.threshold, c.pass)?;
            }
            Ok(())
        })
    }
}

struct Check {
    name: &'static str,
    value: f64,
    threshold: f64,
    pass: bool,
}

impl Check {
    fn at_most(name: &'static str, value: f64, threshold: f64) -> Self {
        Self {
            name,
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    fn at_least(name: &'static str, value: f64, threshold: f64) -> Self {
        Self {
            name,
            value,
            threshold,
            pass: value >= threshold,
        }
    }
}

/// Wrap precondition failures as configuration errors; size limits keep
/// their own kind.
fn as_config(e: Error) -> Error {
    match e {
        Error::SizeLimit { .. } | Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// Check the parameters `command` will use before doing any work.
pub fn validate(command: Command, cfg: &RunConfig) -> Result<()> {
    let v = || -> Result<()> {
        cfg.ising.shape()?;
        cfg.ising.params()?;
        match command {
            Command::IsingSample => {
                cfg.ising.schedule()?;
            }
            Command::RbmTrain | Command::Pipeline => {
                cfg.rbm.train_config(cfg.run.seed)?;
                if cfg.rbm.data == DataSource::Metropolis {
                    cfg.ising.schedule()?;
                }
                if command == Command::Pipeline {
                    cfg.block_map()?;
                    check_transport(cfg)?;
                }
            }
            Command::Coarsegrain => {
                cfg.block_map()?;
            }
            Command::WishartVerify => {
                let w = &cfg.wishart;
                if w.n == 0
                    || w.m == 0
                    || w.count == 0
                    || w.closure_cases == 0
                    || w.duality_pairs == 0
                {
                    return Err(Error::Config(
                        "wishart n, m, count, closure_cases and duality_pairs must be positive"
                            .into(),
                    ));
                }
            }
            Command::TransportCheck => check_transport(cfg)?,
            Command::IsingExact | Command::RbmEval => {}
        }
        Ok(())
    };
    v().map_err(as_config)
}

fn check_transport(cfg: &RunConfig) -> Result<()> {
    let t = &cfg.transport;
    if t.grid_points < 3 {
        return Err(Error::Config(
            "transport.grid_points must be at least 3".into(),
        ));
    }
    for (name, x) in [
        ("fd_step", t.fd_step),
        ("latent_half_width", t.latent_half_width),
        ("margin", t.margin),
        ("residual_tol", t.residual_tol),
    ] {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::Config(format!(
                "transport.{name} must be positive, got {x}"
            )));
        }
    }
    if let Some(b) = t.bandwidth {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::Config(format!(
                "transport.bandwidth must be positive, got {b}"
            )));
        }
    }
    Ok(())
}

/// Validate, run `command`, and write the manifest. Failed verification
/// checks still leave their artifacts and manifest behind, then surface as
/// a numerical error.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<Manifest> {
    validate(command, cfg)?;
    let mut sink = Sink::new(&cfg.run.out)?;
    match command {
        Command::IsingSample => ising_sample(cfg, &mut sink)?,
        Command::IsingExact => {
            ising_exact(cfg, &mut sink)?;
        }
        Command::RbmTrain => {
            let (data, table) = training_data(cfg)?;
            rbm_train(cfg, &data, table.as_ref(), &mut sink)?;
        }
        Command::RbmEval => rbm_eval(cfg, &mut sink)?,
        Command::Coarsegrain => {
            let table = ising_exact(cfg, &mut sink)?;
            coarsegrain(cfg, &table, &mut sink)?;
        }
        Command::WishartVerify => wishart_verify(cfg, &mut sink)?,
        Command::TransportCheck => transport_check(cfg, &mut sink)?,
        Command::Pipeline => pipeline(cfg, &mut sink)?,
    }
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let text = sink.manifest.render(command.name(), cfg, created)?;
    atomic_write(&sink.dir.join(MANIFEST_NAME), text.as_bytes())?;
    if !sink.failures.is_empty() {
        return Err(Error::Numerical(format!(
            "checks failed: {}",
            sink.failures.join("; ")
        )));
    }
    Ok(sink.manifest)
}

fn ising_exact(cfg: &RunConfig, sink: &mut Sink) -> Result<ExactTable> {
    let table = exact_enumerate(cfg.ising.shape()?, cfg.ising.params()?)?;
    sink.write("exact.csv", |out| {
        writeln!(out, "index,energy,probability")?;
        for (i, (e, p)) in table
            .energies()
            .iter()
            .zip(table.probabilities())
            .enumerate()
        {
            writeln!(out, "{i},{e},{p}")?;
        }
        Ok(())
    })?;
    let mean_energy: f64 = table
        .energies()
        .iter()
        .zip(table.probabilities())
        .map(|(e, p)| e * p)
        .sum();
    sink.result("log_z", table.log_partition());
    sink.result("z", table.partition_z());
    sink.result("mean_energy", mean_energy);
    Ok(table)
}

fn ising_sample(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let shape = cfg.ising.shape()?;
    let params = cfg.ising.params()?;
    let seed = derive_seed(cfg.run.seed, "ising");
    let samples = sample_ensemble(shape, params, cfg.ising.schedule()?, seed)?;
    let header = EnsembleHeader {
        shape,
        coupling: params.coupling(),
        beta: params.beta(),
        seed,
    };
    sink.write("ensemble.txt", |out| write_ensemble(out, &header, &samples))?;
    let stats = ensemble_stats(&samples, &params)?;
    sink.write("ising_stats.csv", |out| {
        writeln!(out, "mean_energy,mean_abs_magnetization")?;
        writeln!(
            out,
            "{},{}",
            stats.mean_energy, stats.mean_abs_magnetization
        )?;
        Ok(())
    })?;
    sink.result("mean_energy", stats.mean_energy);
    sink.result("mean_abs_magnetization", stats.mean_abs_magnetization);
    if shape.sites() <= MAX_ENUM_SITES {
        let table = exact_enumerate(shape, params)?;
        let tv = total_variation(&empirical_distribution(&samples)?, table.probabilities())?;
        sink.result("tv_to_exact", tv);
    }
    Ok(())
}

/// Training set and, when the lattice is enumerable, its exact table.
fn training_data(cfg: &RunConfig) -> Result<(Vec<SpinLattice>, Option<ExactTable>)> {
    let shape = cfg.ising.shape()?;
    let params = cfg.ising.params()?;
    let seed = derive_seed(cfg.run.seed, "rbm.data");
    match cfg.rbm.data {
        DataSource::Exact => {
            let table = exact_enumerate(shape, params)?;
            let idx = table.sample_indices(cfg.rbm.n_data, &mut from_seed(seed));
            let data = idx
                .iter()
                .map(|&i| SpinLattice::from_index(shape, i))
                .collect();
            Ok((data, Some(table)))
        }
        DataSource::Metropolis => {
            let mut schedule = cfg.ising.schedule()?;
            schedule.n_samples = cfg.rbm.n_data;
            let data = sample_ensemble(shape, params, schedule, seed)?;
            let table = if shape.sites() <= MAX_ENUM_SITES {
                Some(exact_enumerate(shape, params)?)
            } else {
                None
            };
            Ok((data, table))
        }
    }
}

fn rbm_train(
    cfg: &RunConfig,
    data: &[SpinLattice],
    table: Option<&ExactTable>,
    sink: &mut Sink,
) -> Result<RbmModel> {
    let nv = cfg.ising.shape()?.sites();
    let tc = cfg.rbm.train_config(cfg.run.seed)?;
    let model0 = RbmModel::initialize(
        nv,
        cfg.rbm.n_hidden,
        &mut from_seed(derive_seed(cfg.run.seed, "rbm.init")),
    )?;
    let dataset: Vec<Vec<i8>> = data.iter().map(|s| s.spins().to_vec()).collect();
    let outcome = train(&dataset, &model0, &tc, table.map(|t| t.probabilities()))?;
    let ckpt = Checkpoint {
        model: outcome.model.clone(),
        train_config: Some(tc),
    };
    sink.write(CHECKPOINT_NAME, |out| ckpt.save(out))?;
    let metric = match outcome.metric {
        HistoryMetric::ExactKl => "exact_kl",
        HistoryMetric::ReconstructionError => "reconstruction_error",
    };
    sink.write("rbm_history.csv", |out| {
        writeln!(out, "epoch,{metric}")?;
        for (e, v) in outcome.history.iter().enumerate() {
            writeln!(out, "{e},{v}")?;
        }
        Ok(())
    })?;
    sink.result(&format!("initial_{metric}"), outcome.history[0]);
    sink.result(
        &format!("final_{metric}"),
        *outcome.history.last().unwrap_or(&f64::NAN),
    );
    Ok(outcome.model)
}

fn rbm_eval(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let path = cfg
        .rbm
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.run.out.join(CHECKPOINT_NAME));
    let bytes = fs::read(&path)
        .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    sink.manifest
        .inputs
        .insert(path.display().to_string(), sha256_hex(&bytes));
    let model = Checkpoint::load(bytes.as_slice())?.model;
    let nv = model.n_visible();
    let log_z = log_partition(&model)?;
    let probs = visible_distribution(&model)?;
    sink.write("rbm_marginal.csv", |out| {
        writeln!(out, "index,free_energy,probability")?;
        for (i, p) in probs.iter().enumerate() {
            let f = free_energy(&index_to_spins(i as u64, nv), &model)?;
            writeln!(out, "{i},{f},{p}")?;
        }
        Ok(())
    })?;
    sink.result("log_z", log_z);
    let shape = cfg.ising.shape()?;
    if shape.sites() == nv {
        let table = exact_enumerate(shape, cfg.ising.params()?)?;
        if model.n_visible() <= MAX_KL_UNITS && model.n_hidden() <= MAX_KL_UNITS {
            sink.result("kl_to_ising", kl_exact(table.probabilities(), &model)?);
        }
        if let Ok(map) = cfg.block_map() {
            sink.result("weight_locality", rbm_weight_locality(&model, &map)?);
        }
    }
    Ok(())
}

fn coarsegrain(cfg: &RunConfig, table: &ExactTable, sink: &mut Sink) -> Result<()> {
    let map = cfg.block_map()?;
    let eff = effective_hamiltonian(cfg.ising.boundary, cfg.ising.params()?, &map)?;
    sink.write("effective.csv", |out| eff.write_csv(out))?;
    let push = pushforward_measure(table.probabilities(), &map)?;
    let induced = eff.induced_distribution();
    sink.write("macro_distribution.csv", |out| {
        writeln!(out, "macro_index,pushforward,induced")?;
        for (y, (p, q)) in push.iter().zip(&induced).enumerate() {
            writeln!(out, "{y},{p},{q}")?;
        }
        Ok(())
    })?;
    let total: u64 = eff.entries().iter().map(|e| e.multiplicity).sum();
    let measure_err = push
        .iter()
        .zip(&induced)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    sink.result("log_z_eff", eff.log_partition());
    sink.result(
        "z_relative_error",
        (eff.log_partition() - table.log_partition()).exp_m1().abs(),
    );
    sink.result("total_multiplicity", total as f64);
    sink.result("max_measure_error", measure_err);
    Ok(())
}

/// Random `n x m` generator with `m` drawn from `1..=max_m`.
fn random_generator(n: usize, max_m: usize, rng: &mut crate::rng::Rng) -> Result<Generator> {
    let m = rng.random_range(1..=max_m);
    Generator::random(n, m, rng)
}

fn wishart_verify(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let w = &cfg.wishart;
    let seed = derive_seed(cfg.run.seed, "wishart");
    let samples = sample_wishart(w.n, w.m, w.count, seed)?;
    sink.write("wishart_samples.csv", |out| {
        write_samples_csv(out, &samples, w.n, w.m, seed)
    })?;

    let mut min_eig = f64::INFINITY;
    let mut max_rank = 0usize;
    let mut members = 0usize;
    let mut mean = DMatrix::<f64>::zeros(w.n, w.n);
    for s in &samples {
        let mem = cone_membership(s.matrix(), w.n, w.m)?;
        min_eig = min_eig.min(mem.min_eigenvalue);
        max_rank = max_rank.max(mem.rank);
        members += usize::from(mem.member);
        mean += s.matrix();
    }
    mean /= samples.len() as f64;
    let mean_dev = (mean - DMatrix::<f64>::identity(w.n, w.n) * w.m as f64).amax();

    let mut rng = from_seed(derive_seed(cfg.run.seed, "wishart.closure"));
    let mut closure_ok = 0usize;
    for _ in 0..w.closure_cases {
        let a = covariance(&random_generator(w.n, w.m, &mut rng)?);
        let b = covariance(&random_generator(w.n, w.m, &mut rng)?);
        let lam = rng.random_range(-3.0f64..3.0).exp();
        let ma = a.witness().map_or(w.n, |x| x.ncols());
        let mb = b.witness().map_or(w.n, |x| x.ncols());
        let scaled = cone_membership(cone_scale(&a, lam)?.matrix(), w.n, ma)?;
        let summed = cone_membership(cone_add(&a, &b)?.matrix(), w.n, ma + mb)?;
        closure_ok += usize::from(scaled.member && summed.member);
    }

    let dual = sample_wishart(
        w.n,
        w.m,
        2 * w.duality_pairs,
        derive_seed(cfg.run.seed, "wishart.duality"),
    )?;
    let pairs: Vec<_> = dual
        .chunks(2)
        .map(|p| (p[0].matrix().clone(), p[1].matrix().clone()))
        .collect();
    let duality = trace_duality_check(&pairs)?;

    let checks = [
        Check::at_least(
            "member_fraction",
            members as f64 / samples.len() as f64,
            1.0,
        ),
        Check::at_least("min_eigenvalue", min_eig, -crate::wishart::PSD_TOL),
        Check::at_most("max_rank", max_rank as f64, w.n.min(w.m) as f64),
        Check::at_least(
            "closure_fraction",
            closure_ok as f64 / w.closure_cases as f64,
            1.0,
        ),
        Check::at_least(
            "min_trace_inner",
            duality.min_inner,
            -crate::wishart::PSD_TOL,
        ),
    ];
    sink.write_checks("wishart_checks.csv", &checks)?;
    for c in &checks {
        sink.result(c.name, c.value);
    }
    sink.result("mean_max_deviation", mean_dev);
    Ok(())
}

fn mixture_pdf(x: f64, parts: &[(f64, f64, f64)]) -> f64 {
    parts
        .iter()
        .map(|&(w, m, s)| {
            w * (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
        })
        .sum()
}

fn fd_fixture_residual(h: f64) -> Result<f64> {
    let t = MapSpec::function(1, h, |x| vec![x[0] + 0.1 * x[0].sinh()])?;
    let rho1 = GaussianDensity::standard(1)?;
    let r1 = rho1.clone();
    let rho0 = FnDensity::new(1, move |x| {
        let y = x[0] + 0.1 * x[0].sinh();
        r1.pdf(&[y]).unwrap_or(0.0) * (1.0 + 0.1 * x[0].cosh())
    });
    let ax = Axis::new(-3.0, 3.0, 61)?;
    let pts: Vec<Vec<f64>> = (0..ax.len()).map(|i| vec![ax.node(i)]).collect();
    Ok(ma_residual_map(&rho0, &rho1, &t, &pts)?.max_abs)
}

fn write_residual(sink: &mut Sink, name: &str, field: &ResidualField) -> Result<()> {
    sink.write(name, |out| write_residual_csv(out, field))
}

fn transport_check(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let t = &cfg.transport;
    let line = Axis::new(-4.0, 4.0, t.grid_points)?;
    let pts: Vec<Vec<f64>> = (0..line.len()).map(|i| vec![line.node(i)]).collect();
    let doubling = MapSpec::linear(DMatrix::from_element(1, 1, 2.0), vec![0.0])?;
    let r1d = ma_residual_map(
        &GaussianDensity::standard(1)?,
        &GaussianDensity::univariate(0.0, 4.0)?,
        &doubling,
        &pts,
    )?;
    write_residual(sink, "residual_1d.csv", &r1d)?;

    let mut rng = from_seed(derive_seed(cfg.run.seed, "transport"));
    let w = DMatrix::<f64>::from_fn(2, 2, |_, _| StandardNormal.sample(&mut rng));
    let sigma1 = &w * w.transpose() + DMatrix::identity(2, 2) * 0.5;
    let ot = gaussian_ot_map(&DMatrix::identity(2, 2), &sigma1)?;
    let ot_fn = ot.clone();
    let fd_map = MapSpec::function(2, t.fd_step, move |x| ot_fn.apply(x).unwrap_or_default())?;
    let sq = Axis::new(-3.0, 3.0, 41)?;
    let pts2: Vec<Vec<f64>> = (0..sq.len())
        .flat_map(|i| (0..sq.len()).map(move |j| vec![sq.node(i), sq.node(j)]))
        .collect();
    let r2d = ma_residual_map(
        &GaussianDensity::standard(2)?,
        &GaussianDensity::new(vec![0.0, 0.0], sigma1.clone())?,
        &fd_map,
        &pts2,
    )?;
    write_residual(sink, "residual_2d.csv", &r2d)?;

    let coarse = fd_fixture_residual(1e-2)?;
    let fine = fd_fixture_residual(5e-3)?;

    let ax = Axis::new(-10.0, 10.0, t.grid_points)?;
    let p0 = [(0.3, -1.5, 0.6), (0.7, 1.0, 1.1)];
    let p1 = [(0.5, -2.0, 1.0), (0.5, 2.5, 0.8)];
    let rho0 = DensityGrid::from_density(vec![ax], &FnDensity::new(1, |x| mixture_pdf(x[0], &p0)))?;
    let rho1 = DensityGrid::from_density(vec![ax], &FnDensity::new(1, |x| mixture_pdf(x[0], &p1)))?;
    let mono = monotone_transport_1d(&rho0, &rho1)?;
    let rmono = ma_residual_map(&rho0, &rho1, &mono, &rho0.grid().nodes())?;
    write_residual(sink, "residual_monotone.csv", &rmono)?;

    let (a, _) = ot
        .linear_parts()
        .ok_or_else(|| Error::Numerical("OT map is not linear".into()))?;
    let push_err = (a * DMatrix::<f64>::identity(2, 2) * a.transpose() - &sigma1).amax();
    let w2_1d = w2_gaussian(
        &DMatrix::from_element(1, 1, 1.0),
        &DMatrix::from_element(1, 1, 4.0),
    )?;
    let checks = [
        Check::at_most("linear_1d_max_abs", r1d.max_abs, 1e-10),
        Check::at_most("gaussian_2d_max_abs", r2d.max_abs, 1e-5),
        Check::at_least("fd_refinement_ratio", coarse / fine, 4.0),
        Check::at_most("monotone_max_abs", rmono.max_abs, t.residual_tol),
        Check::at_most("ot_pushforward_error", push_err, 1e-10),
        Check::at_most("w2_1d_error", (w2_1d - 1.0).abs(), 1e-10),
    ];
    sink.write_checks("transport_checks.csv", &checks)?;
    for c in &checks {
        sink.result(c.name, c.value);
    }
    sink.result(
        "w2_gaussian_2d",
        w2_gaussian(&DMatrix::identity(2, 2), &sigma1)?,
    );
    Ok(())
}

fn latent_config(cfg: &RunConfig) -> LatentCheckConfig {
    LatentCheckConfig {
        bandwidth: cfg.transport.bandwidth,
        grid_points: cfg.transport.grid_points,
        latent_half_width: cfg.transport.latent_half_width,
        margin: cfg.transport.margin,
    }
}

fn pipeline(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let shape = cfg.ising.shape()?;
    let params = cfg.ising.params()?;
    let (data, table) = training_data(cfg)?;
    let header = EnsembleHeader {
        shape,
        coupling: params.coupling(),
        beta: params.beta(),
        seed: derive_seed(cfg.run.seed, "rbm.data"),
    };
    sink.write("ensemble.txt", |out| write_ensemble(out, &header, &data))?;
    let table = match table {
        Some(t) => t,
        None => exact_enumerate(shape, params)?,
    };
    let model = rbm_train(cfg, &data, Some(&table), sink)?;

    let map = cfg.block_map()?;
    coarsegrain(cfg, &table, sink)?;
    let n_agree = cfg.coarsegrain.agreement_samples.min(data.len()).max(1);
    let agree_set = &data[..n_agree];
    let mut rng = from_seed(derive_seed(cfg.run.seed, "coarsegrain.null"));
    let loc = rbm_weight_locality(&model, &map)?;
    let loc_null = permutation_null(
        &model,
        cfg.coarsegrain.null_shuffles.max(1),
        &mut rng,
        |m| rbm_weight_locality(m, &map),
    )?;
    let agr = hidden_block_agreement(&model, &map, agree_set)?;
    let agr_null = permutation_null(
        &model,
        cfg.coarsegrain.null_shuffles.max(1),
        &mut rng,
        |m| hidden_block_agreement(m, &map, agree_set),
    )?;
    let rows = [
        ("weight_locality", loc, quantile(&loc_null, 0.95)?),
        ("hidden_block_agreement", agr, quantile(&agr_null, 0.95)?),
    ];
    sink.write("features.csv", |out| {
        writeln!(out, "metric,score,null_q95,exceeds_null")?;
        for (name, s, q) in rows {
            writeln!(out, "{name},{s},{q},{}", s > q)?;
        }
        Ok(())
    })?;
    for (name, s, q) in rows {
        sink.result(name, s);
        sink.result(&format!("{name}_null_q95"), q);
    }

    let lc = latent_config(cfg);
    let data_rep = latent_to_data_check(&magnetization_per_site(&data), None, &lc)?;
    write_residual(sink, "transport_data.csv", &data_rep.residual)?;
    sink.result("transport_data_w2", data_rep.w2);
    sink.result("transport_data_max_abs", data_rep.residual.max_abs);
    sink.result("transport_data_bandwidth", data_rep.bandwidth);

    let probs = visible_distribution(&model)?;
    let mags: Vec<f64> = (0..probs.len())
        .map(|i| {
            let s = index_to_spins(i as u64, shape.sites());
            s.iter().map(|&v| f64::from(v)).sum::<f64>() / shape.sites() as f64
        })
        .collect();
    let model_rep = latent_to_data_check(&mags, Some(&probs), &lc)?;
    write_residual(sink, "transport_model.csv", &model_rep.residual)?;
    sink.result("transport_model_w2", model_rep.w2);
    sink.result("transport_model_max_abs", model_rep.residual.max_abs);
    if model.n_visible() <= MAX_KL_UNITS && model.n_hidden() <= MAX_KL_UNITS {
        sink.result("kl_data_to_model", kl_exact(table.probabilities(), &model)?);
    }
    Ok(())
}
