//! Run configuration: a TOML document, validated into [`Config`].
//!
//! ```toml
//! n = 60
//! steps = 30000
//! mode = "deterministic"      # or "stochastic" / "both"
//! seed = 7
//! trace_stride = 10           # optional; default is dense below k = 1000, then every 10th
//!
//! [[resources]]
//! name = "RAM"
//! unit = "GB"
//! capacity = 32.0
//! alpha = 0.025
//! beta = 0.7
//! gamma_cap = 1.0             # optional, default 1.0
//! normalization = 0.011111111111111112   # optional, default 1/90
//!
//! [costs]
//! kind = "sample"             # or "explicit" with functions = [{ case = 1, a = .., b = .., c = .., d = .. }, ..]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aimd::{Mode, ResourceParams};
use crate::cost::{self, CostFunction, FAMILY_DIM};
use crate::error::{Error, Result, ValidationErrors};

pub const DEFAULT_NORMALIZATION: f64 = 1.0 / 90.0;
pub const DEFAULT_ORACLE_TOL: f64 = 1e-8;
pub const DEFAULT_PG_TOL: f64 = 1e-6;
pub const DEFAULT_PG_MAX_ITERS: u64 = 200_000;
pub const DEFAULT_SPREAD_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Deterministic,
    Stochastic,
    Both,
}

impl RunMode {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            RunMode::Deterministic => vec![Mode::Deterministic],
            RunMode::Stochastic => vec![Mode::Stochastic],
            RunMode::Both => vec![Mode::Deterministic, Mode::Stochastic],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Display label only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    pub capacity: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "one")]
    pub gamma_cap: f64,
    #[serde(default = "default_normalization")]
    pub normalization: f64,
}

impl ResourceConfig {
    pub fn params(&self) -> ResourceParams {
        ResourceParams {
            capacity: self.capacity,
            alpha: self.alpha,
            beta: self.beta,
            gamma_cap: self.gamma_cap,
            normalization: self.normalization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CostSpec {
    /// Draw each device's function; `seed` defaults to the run seed.
    Sample {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Explicit { functions: Vec<CostFunction> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_oracle_tol")]
    pub tol: f64,
    #[serde(default = "default_pg_tol")]
    pub pg_tol: f64,
    #[serde(default = "default_pg_max_iters")]
    pub pg_max_iters: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            tol: DEFAULT_ORACLE_TOL,
            pg_tol: DEFAULT_PG_TOL,
            pg_max_iters: DEFAULT_PG_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Normalized derivative spread under which a mode counts as converged.
    #[serde(default = "default_spread_threshold")]
    pub spread_threshold: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            spread_threshold: DEFAULT_SPREAD_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub n: usize,
    pub steps: u64,
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_stride: Option<u64>,
    pub resources: Vec<ResourceConfig>,
    pub costs: CostSpec,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> f64 {
    1.0
}
fn default_normalization() -> f64 {
    DEFAULT_NORMALIZATION
}
fn default_oracle_tol() -> f64 {
    DEFAULT_ORACLE_TOL
}
fn default_pg_tol() -> f64 {
    DEFAULT_PG_TOL
}
fn default_pg_max_iters() -> u64 {
    DEFAULT_PG_MAX_ITERS
}
fn default_spread_threshold() -> f64 {
    DEFAULT_SPREAD_THRESHOLD
}
fn default_mode() -> RunMode {
    RunMode::Deterministic
}

impl Config {
    pub fn m(&self) -> usize {
        self.resources.len()
    }

    pub fn params(&self) -> Vec<ResourceParams> {
        self.resources.iter().map(ResourceConfig::params).collect()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.resources.iter().map(|r| r.capacity).collect()
    }

    /// Device cost functions, sampled or as listed.
    pub fn cost_functions(&self) -> Result<Vec<CostFunction>> {
        match &self.costs {
            CostSpec::Sample { seed } => {
                cost::sample_population(seed.unwrap_or(self.seed), self.n, self.m())
            }
            CostSpec::Explicit { functions } => Ok(functions.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = ValidationErrors::default();
        if self.n == 0 {
            errs.push("n", "must be at least 1");
        }
        if self.steps == 0 {
            errs.push("steps", "must be at least 1");
        }
        // TOML integers are signed 64-bit.
        if self.seed > i64::MAX as u64 {
            errs.push("seed", format!("must be at most {}", i64::MAX));
        }
        if let CostSpec::Sample { seed: Some(s) } = self.costs {
            if s > i64::MAX as u64 {
                errs.push("costs.seed", format!("must be at most {}", i64::MAX));
            }
        }
        if self.trace_stride == Some(0) {
            errs.push("trace_stride", "must be at least 1");
        }
        if self.resources.is_empty() {
            errs.push("resources", "at least one resource is required");
        }
        for (j, r) in self.resources.iter().enumerate() {
            for (field, msg) in r.params().invalid_fields() {
                errs.push(format!("resources[{j}].{field}"), msg);
            }
        }
        if self.m() != FAMILY_DIM {
            errs.push(
                "resources",
                format!(
                    "the polynomial cost family needs exactly {FAMILY_DIM} resources, got {}",
                    self.m()
                ),
            );
        }
        if let CostSpec::Explicit { functions } = &self.costs {
            if functions.len() != self.n {
                errs.push(
                    "costs.functions",
                    format!("expected {} functions (one per device), got {}", self.n, functions.len()),
                );
            }
            for (i, f) in functions.iter().enumerate() {
                for name in f.coeffs.out_of_range() {
                    errs.push(format!("costs.functions[{i}].{name}"), "coefficient out of range");
                }
            }
        }
        if !(self.oracle.tol > 0.0 && self.oracle.tol < 1.0) {
            errs.push("oracle.tol", format!("must be in (0, 1), got {}", self.oracle.tol));
        }
        if !(self.oracle.pg_tol > 0.0 && self.oracle.pg_tol < 1.0) {
            errs.push("oracle.pg_tol", format!("must be in (0, 1), got {}", self.oracle.pg_tol));
        }
        if self.oracle.pg_max_iters == 0 {
            errs.push("oracle.pg_max_iters", "must be at least 1");
        }
        if !(self.compare.spread_threshold > 0.0) {
            errs.push("compare.spread_threshold", "must be positive");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config is always serializable");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_config_str(text: &str) -> Result<Config> {
    let config: Config = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<Config> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn serialize_config(config: &Config) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::Parse(e.to_string()))
}

/// The 3-resource cloudlet setup with `n` devices and sampled costs.
pub fn cloudlet_config(n: usize, steps: u64, seed: u64) -> Config {
    let resource = |name: &str, unit: &str, capacity, alpha, beta| ResourceConfig {
        name: Some(name.into()),
        unit: Some(unit.into()),
        capacity,
        alpha,
        beta,
        gamma_cap: 1.0,
        normalization: DEFAULT_NORMALIZATION,
    };
    Config {
        n,
        steps,
        mode: RunMode::Deterministic,
        seed,
        trace_stride: None,
        resources: vec![
            resource("RAM", "GB", 32.0, 0.025, 0.7),
            resource("CPU", "GHz", 20.0, 0.02, 0.85),
            resource("storage", "10GB", 25.0, 0.0225, 0.75),
        ],
        costs: CostSpec::Sample { seed: None },
        oracle: OracleConfig::default(),
        compare: CompareConfig::default(),
        output: OutputConfig::default(),
    }
}
