//! Run configuration: one TOML file drives every verb.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use safenet_core::experiment::{default_methods, BenchmarkConfig, Method};
use safenet_core::nn::TrainConfig;
use safenet_core::qp::DecayMode;
use safenet_core::sim::{scenario_single_integrator, Scenario};

use crate::CliError;

/// Decay gain used by the filters and learned controllers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaConfig {
    /// Constant `alpha(h) = omega h`; bare `qp` / `od_qp` entries take this gain.
    Fixed { omega: f64 },
    /// State-dependent gain `alpha_tilde(x) omega` learned with the controller.
    Learned { omega: f64 },
}

impl Default for AlphaConfig {
    fn default() -> Self {
        AlphaConfig::Learned { omega: 10.0 }
    }
}

impl AlphaConfig {
    pub fn omega(self) -> f64 {
        match self {
            AlphaConfig::Fixed { omega } | AlphaConfig::Learned { omega } => omega,
        }
    }
}

/// A method entry as written in the config: either a full [`Method`] or a
/// bare `qp` / `od_qp` whose gain comes from the `alpha` table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodEntry {
    Exact(Method),
    BareQp,
    BareOdQp,
}

impl fmt::Display for MethodEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodEntry::Exact(m) => m.fmt(f),
            MethodEntry::BareQp => f.write_str("qp"),
            MethodEntry::BareOdQp => f.write_str("od_qp"),
        }
    }
}

impl FromStr for MethodEntry {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "qp" => Ok(MethodEntry::BareQp),
            "od_qp" => Ok(MethodEntry::BareOdQp),
            other => other.parse().map(MethodEntry::Exact),
        }
    }
}

impl Serialize for MethodEntry {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodEntry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    /// Start states; empty means the scenario's canonical starts.
    pub starts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Constraint counts to sweep.
    pub n_c: Vec<usize>,
    /// Control dimension of the synthetic scenario.
    pub m: usize,
    /// Timed calls per (n_c, decomposition).
    pub repetitions: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { n_c: (4..=12).collect(), m: 3, repetitions: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Scenario TOML; relative paths resolve against the config file. Unset
    /// means the built-in single-integrator scenario.
    pub scenario: Option<PathBuf>,
    pub methods: Vec<MethodEntry>,
    pub alpha: AlphaConfig,
    pub seeds: Vec<u64>,
    /// Safe states sampled per seed for training and evaluation.
    pub samples: usize,
    pub out: PathBuf,
    /// Exponent of the candidate-selection norm.
    pub norm_p: f64,
    /// Feasibility slack used when screening projection candidates.
    pub feas_tol: f64,
    /// Relative singular-value cutoff of the pseudoinverse.
    pub pinv_rtol: f64,
    pub od_penalty: f64,
    pub od_mode: DecayMode,
    pub train: TrainConfig,
    pub rollout: RolloutConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bench = BenchmarkConfig::default();
        Self {
            scenario: None,
            methods: default_methods().into_iter().map(MethodEntry::Exact).collect(),
            alpha: AlphaConfig::default(),
            seeds: bench.seeds,
            samples: bench.samples,
            out: PathBuf::from("runs"),
            norm_p: 2.0,
            feas_tol: 1e-9,
            pinv_rtol: 1e-10,
            od_penalty: bench.od_penalty,
            od_mode: bench.od_mode,
            train: bench.train,
            rollout: RolloutConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Parses `path`, resolving a relative scenario path against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(s) = cfg.scenario.as_mut().filter(|s| s.is_relative()) {
            if let Some(dir) = path.parent() {
                *s = dir.join(&*s);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let err = |msg: String| Err(CliError::Config(msg));
        if self.seeds.is_empty() {
            return err("seeds must not be empty".into());
        }
        if self.methods.is_empty() {
            return err("methods must not be empty".into());
        }
        let omega = self.alpha.omega();
        if !(omega > 0.0 && omega.is_finite()) {
            return err(format!("alpha.omega must be positive, got {omega}"));
        }
        for entry in &self.methods {
            match (entry, self.alpha) {
                (MethodEntry::BareQp | MethodEntry::BareOdQp, AlphaConfig::Learned { .. }) => {
                    return err(format!("method `{entry}` needs a gain: write `{entry}(<omega>)` or set alpha.mode = \"fixed\""));
                }
                (MethodEntry::Exact(Method::Learned(_)), AlphaConfig::Fixed { .. }) => {
                    return err(format!("method `{entry}` learns its decay gain and needs alpha.mode = \"learned\""));
                }
                _ => {}
            }
        }
        if !(self.norm_p >= 1.0) {
            return err(format!("norm_p must be >= 1, got {}", self.norm_p));
        }
        for (name, v) in [("feas_tol", self.feas_tol), ("pinv_rtol", self.pinv_rtol)] {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.rollout.starts.iter().any(|s| s.is_empty()) {
            return err("rollout.starts entries must not be empty".into());
        }
        if self.bench.n_c.is_empty() || self.bench.n_c.contains(&0) {
            return err("bench.n_c must be a nonempty list of positive counts".into());
        }
        if self.bench.m == 0 || self.bench.repetitions == 0 {
            return err("bench.m and bench.repetitions must be positive".into());
        }
        self.benchmark_config().validate().map_err(|e| CliError::Config(e.to_string()))
    }

    /// Methods with bare entries resolved against `alpha`.
    pub fn resolved_methods(&self) -> Vec<Method> {
        let omega = self.alpha.omega();
        self.methods
            .iter()
            .map(|e| match e {
                MethodEntry::Exact(m) => *m,
                MethodEntry::BareQp => Method::Qp { omega },
                MethodEntry::BareOdQp => Method::OdQp { omega0: omega },
            })
            .collect()
    }

    /// The experiment-driver view of this config.
    pub fn benchmark_config(&self) -> BenchmarkConfig {
        let mut train = self.train.clone();
        if let AlphaConfig::Learned { omega } = self.alpha {
            train.policy.omega = omega;
        }
        train.policy.selector.norm_p = self.norm_p;
        train.policy.selector.feas_tol = self.feas_tol;
        train.policy.selector.pinv_rtol = self.pinv_rtol;
        BenchmarkConfig {
            seeds: self.seeds.clone(),
            samples: self.samples,
            methods: self.resolved_methods(),
            od_penalty: self.od_penalty,
            od_mode: self.od_mode,
            train,
        }
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        match &self.scenario {
            None => Ok(scenario_single_integrator()),
            Some(path) => Scenario::load(path).map_err(|e| CliError::Config(e.to_string())),
        }
    }
}
