//! Run configuration: TOML with one table per module, plus the manifest that
//! records a finished run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::coarsegrain::{BlockMap, TieRule};
use crate::error::{Error, Result};
use crate::ising::{Boundary, IsingParams, LatticeShape, SampleSchedule};
use crate::rbm::TrainConfig;
use crate::rng::derive_seed;

/// Tables a manifest adds on top of a config; ignored when loading.
const MANIFEST_TABLES: [&str; 4] = ["results", "artifacts", "inputs", "meta"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 42,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IsingSection {
    pub rows: usize,
    pub cols: usize,
    pub boundary: Boundary,
    pub coupling: f64,
    pub beta: f64,
    pub n_samples: usize,
    pub sweeps_between: usize,
    pub burn_in: usize,
}

impl Default for IsingSection {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            boundary: Boundary::Free,
            coupling: 1.0,
            beta: 0.4,
            n_samples: 10_000,
            sweeps_between: 1,
            burn_in: 1_000,
        }
    }
}

impl IsingSection {
    pub fn shape(&self) -> Result<LatticeShape> {
        LatticeShape::new(self.rows, self.cols, self.boundary)
    }

    pub fn params(&self) -> Result<IsingParams> {
        IsingParams::new(self.coupling, self.beta)
    }

    pub fn schedule(&self) -> Result<SampleSchedule> {
        if self.n_samples == 0 || self.sweeps_between == 0 {
            return Err(Error::Config(
                "ising.n_samples and ising.sweeps_between must be positive".into(),
            ));
        }
        Ok(SampleSchedule {
            n_samples: self.n_samples,
            sweeps_between: self.sweeps_between,
            burn_in: self.burn_in,
        })
    }
}

/// Where `rbm-train` gets its training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// I.i.d. draws from the exact Boltzmann distribution.
    #[default]
    Exact,
    /// States of a Metropolis chain on the `[ising]` schedule.
    Metropolis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbmSection {
    pub n_hidden: usize,
    pub cd_steps: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_data: usize,
    pub data: DataSource,
    /// Checkpoint read by `rbm-eval`; `<out>/rbm_checkpoint.json` if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for RbmSection {
    fn default() -> Self {
        Self {
            n_hidden: 4,
            cd_steps: 5,
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 50,
            n_data: 5_000,
            data: DataSource::Exact,
            checkpoint: None,
        }
    }
}

impl RbmSection {
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        if self.n_hidden == 0 || self.n_data == 0 {
            return Err(Error::Config(
                "rbm.n_hidden and rbm.n_data must be positive".into(),
            ));
        }
        let cfg = TrainConfig {
            cd_steps: self.cd_steps,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: derive_seed(seed, "rbm.train"),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoarsegrainSection {
    pub block: usize,
    pub tie_rule: TieRule,
    pub null_shuffles: usize,
    pub agreement_samples: usize,
}

impl Default for CoarsegrainSection {
    fn default() -> Self {
        Self {
            block: 2,
            tie_rule: TieRule::PlusOne,
            null_shuffles: 1_000,
            agreement_samples: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WishartSection {
    pub n: usize,
    pub m: usize,
    pub count: usize,
    pub closure_cases: usize,
    pub duality_pairs: usize,
}

impl Default for WishartSection {
    fn default() -> Self {
        Self {
            n: 3,
            m: 5,
            count: 1_000,
            closure_cases: 1_000,
            duality_pairs: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportSection {
    pub grid_points: usize,
    pub fd_step: f64,
    pub latent_half_width: f64,
    pub margin: f64,
    /// Kernel bandwidth for the data density; Silverman's rule if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Largest accepted max-abs residual of grid-based transports.
    pub residual_tol: f64,
}

impl Default for TransportSection {
    fn default() -> Self {
        Self {
            grid_points: 2048,
            fd_step: 1e-3,
            latent_half_width: 8.0,
            margin: 6.0,
            bandwidth: None,
            residual_tol: 5e-3,
        }
    }
}

/// Every parameter of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub ising: IsingSection,
    pub rbm: RbmSection,
    pub coarsegrain: CoarsegrainSection,
    pub wishart: WishartSection,
    pub transport: TransportSection,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string().trim().replace('\n', " "))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(config_err)?;
        Self::from_table(table, &[])
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    pub fn to_table(&self) -> Result<Table> {
        Table::try_from(self).map_err(config_err)
    }

    /// Build from a parsed document after applying `section.key=value`
    /// overrides. Manifest-only tables are dropped first.
    pub fn from_table(mut table: Table, overrides: &[(String, String)]) -> Result<Self> {
        for name in MANIFEST_TABLES {
            table.remove(name);
        }
        if let Some(Value::Table(run)) = table.get_mut("run") {
            run.remove("command");
        }
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        let cfg: RunConfig = table.try_into().map_err(config_err)?;
        if cfg.run.seed > i64::MAX as u64 {
            return Err(Error::Config(format!(
                "seed {} exceeds {}",
                cfg.run.seed,
                i64::MAX
            )));
        }
        Ok(cfg)
    }

    /// Read `path` (defaults when `None`) and apply overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<Table>().map_err(config_err)?
            }
            None => RunConfig::default().to_table()?,
        };
        Self::from_table(table, overrides)
    }

    pub fn block_map(&self) -> Result<BlockMap> {
        if self.ising.rows != self.ising.cols {
            return Err(Error::Config(format!(
                "coarse-graining needs a square lattice, got {}x{}",
                self.ising.rows, self.ising.cols
            )));
        }
        BlockMap::new(
            self.ising.rows,
            self.coarsegrain.block,
            self.coarsegrain.tie_rule,
        )
    }
}

/// Parse `value` as a TOML literal, falling back to a bare string.
fn parse_value(value: &str) -> Value {
    format!("v = {value}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()))
}

fn apply_override(table: &mut Table, key: &str, value: &str) -> Result<()> {
    let (section, field) = key
        .split_once('.')
        .filter(|(s, f)| !s.is_empty() && !f.is_empty() && !f.contains('.'))
        .ok_or_else(|| {
            Error::Config(format!("override key must be <section>.<key>, got {key:?}"))
        })?;
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    let Value::Table(t) = entry else {
        return Err(Error::Config(format!("{section} is not a table")));
    };
    let mut v = parse_value(value);
    // Integers given to float fields, e.g. `--ising.beta=1`.
    if let (Some(Value::Float(_)), Value::Integer(i)) = (
        RunConfig::default()
            .to_table()?
            .get(section)
            .and_then(|s| s.get(field)),
        &v,
    ) {
        v = Value::Float(*i as f64);
    }
    t.insert(field.to_string(), v);
    Ok(())
}

/// Record of a completed command.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub results: BTreeMap<String, f64>,
    /// Artifact file name to SHA-256 hex digest.
    pub artifacts: BTreeMap<String, String>,
    /// External input files to SHA-256 hex digest.
    pub inputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn render(&self, command: &str, config: &RunConfig, created_unix: u64) -> Result<String> {
        let mut doc = config.to_table()?;
        if let Some(Value::Table(run)) = doc.get_mut("run") {
            run.insert("command".into(), Value::String(command.into()));
        }
        let results: Table = self
            .results
            .iter()
            .map(|(k, v)| (k.clone(), Value::Float(*v)))
            .collect();
        let strings = |m: &BTreeMap<String, String>| -> Table {
            m.iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect()
        };
        doc.insert("results".into(), Value::Table(results));
        doc.insert("artifacts".into(), Value::Table(strings(&self.artifacts)));
        if !self.inputs.is_empty() {
            doc.insert("inputs".into(), Value::Table(strings(&self.inputs)));
        }
        let mut meta = Table::new();
        meta.insert(
            "version".into(),
            Value::String(env!("CARGO_PKG_VERSION").into()),
        );
        meta.insert("rng".into(), Value::String(crate::rng::RNG_NAME.into()));
        meta.insert(
            "created_unix".into(),
            Value::Integer(created_unix.min(i64::MAX as u64) as i64),
        );
        doc.insert("meta".into(), Value::Table(meta));
        toml::to_string(&doc).map_err(config_err)
    }
}
