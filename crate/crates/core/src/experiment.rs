//! The method sweep behind the benchmark table: sample states per seed,
//! evaluate the QP filters, train and evaluate the learned controllers.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::affine::AffineConstraintSet;
use crate::cbf::{cbf_rows, CbfRows};
use crate::nn::{train, Architecture, Policy, TrainConfig, TrainingSet};
use crate::qp::{od_qp_filter, project_onto, DecayMode, OdQpConfig};
use crate::sim::{
    aggregate, compute_metrics, nominal_control, sample_safe_states, MetricSummary, RolloutMetrics, Scenario, SimError,
};

/// One row of the benchmark table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Qp { omega: f64 },
    OdQp { omega0: f64 },
    Learned(Architecture),
}

impl Method {
    pub fn architecture(&self) -> Option<Architecture> {
        match self {
            Method::Learned(a) => Some(*a),
            _ => None,
        }
    }

    /// Every method except the soft-penalty network enforces its constraints exactly.
    pub fn enforces_constraints(&self) -> bool {
        self.architecture().is_none_or(Architecture::enforces_constraints)
    }
}

/// `qp(0.1)`, `od_qp(10)`, `nn_penalty`, `caffnet`, `caffnet_lite`.
impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Qp { omega } => write!(f, "qp({omega})"),
            Method::OdQp { omega0 } => write!(f, "od_qp({omega0})"),
            Method::Learned(Architecture::NnPenalty) => f.write_str("nn_penalty"),
            Method::Learned(Architecture::Caffnet) => f.write_str("caffnet"),
            Method::Learned(Architecture::CaffnetLite) => f.write_str("caffnet_lite"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let gain = |inner: &str| -> Result<f64, String> {
            let v: f64 = inner.parse().map_err(|_| format!("bad gain in method `{s}`"))?;
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(format!("gain in method `{s}` must be positive"))
            }
        };
        match s {
            "nn_penalty" => return Ok(Method::Learned(Architecture::NnPenalty)),
            "caffnet" => return Ok(Method::Learned(Architecture::Caffnet)),
            "caffnet_lite" => return Ok(Method::Learned(Architecture::CaffnetLite)),
            _ => {}
        }
        if let Some(inner) = s.strip_prefix("od_qp(").and_then(|r| r.strip_suffix(')')) {
            return Ok(Method::OdQp { omega0: gain(inner)? });
        }
        if let Some(inner) = s.strip_prefix("qp(").and_then(|r| r.strip_suffix(')')) {
            return Ok(Method::Qp { omega: gain(inner)? });
        }
        Err(format!(
            "unknown method `{s}`; expected qp(<omega>), od_qp(<omega>), nn_penalty, caffnet or caffnet_lite"
        ))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// The seven rows of the single-integrator table, in display order.
pub fn default_methods() -> Vec<Method> {
    vec![
        Method::Qp { omega: 0.1 },
        Method::OdQp { omega0: 0.1 },
        Method::Qp { omega: 10.0 },
        Method::OdQp { omega0: 10.0 },
        Method::Learned(Architecture::NnPenalty),
        Method::Learned(Architecture::Caffnet),
        Method::Learned(Architecture::CaffnetLite),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub seeds: Vec<u64>,
    /// Safe states sampled per seed; used both for training and evaluation.
    pub samples: usize,
    pub methods: Vec<Method>,
    /// Decay penalty weight of the optimal-decay filter.
    pub od_penalty: f64,
    pub od_mode: DecayMode,
    pub train: TrainConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            samples: 300,
            methods: default_methods(),
            od_penalty: 1.0,
            od_mode: DecayMode::Shared,
            train: TrainConfig::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.seeds.is_empty() {
            return Err(SimError::Config("at least one seed is required".into()));
        }
        if self.samples == 0 {
            return Err(SimError::Config("samples must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(SimError::Config("at least one method is required".into()));
        }
        if !(self.od_penalty > 0.0 && self.od_penalty.is_finite()) {
            return Err(SimError::Config(format!("od_penalty must be positive, got {}", self.od_penalty)));
        }
        self.train.validate()?;
        Ok(())
    }
}

/// Sampled states of one seed with their nominal labels and constraint rows.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub states: Vec<DVector<f64>>,
    pub labels: Vec<DVector<f64>>,
    pub set: TrainingSet,
}

pub fn seed_data(scenario: &Scenario, samples: usize, seed: u64) -> Result<SeedData, SimError> {
    let states = sample_safe_states(scenario, samples, seed)?;
    let labels: Vec<_> = states.iter().map(|x| nominal_control(scenario, x)).collect();
    let rows = states.iter().map(|x| rows_at(scenario, x)).collect::<Result<Vec<_>, _>>()?;
    let set = TrainingSet::new(&states, labels.clone(), rows)?;
    Ok(SeedData { seed, states, labels, set })
}

fn rows_at(scenario: &Scenario, x: &DVector<f64>) -> Result<CbfRows, SimError> {
    Ok(cbf_rows(x, &scenario.barriers, &scenario.input, &scenario.dynamics, scenario.lie_rule)?)
}

/// Outputs, their constraint sets and the wall-clock seconds of a sweep.
type SweepResult = (Vec<DVector<f64>>, Vec<AffineConstraintSet>, f64);

/// Runs `step` on every sample, timing the whole sweep including row assembly.
fn sweep<F>(scenario: &Scenario, data: &SeedData, mut step: F) -> Result<SweepResult, SimError>
where
    F: FnMut(&DVector<f64>, &DVector<f64>, &CbfRows) -> Result<(DVector<f64>, AffineConstraintSet), SimError>,
{
    let mut outputs = Vec::with_capacity(data.states.len());
    let mut sets = Vec::with_capacity(data.states.len());
    let start = Instant::now();
    for (x, u_nom) in data.states.iter().zip(&data.labels) {
        let rows = rows_at(scenario, x)?;
        let (u, cs) = step(x, u_nom, &rows)?;
        outputs.push(u);
        sets.push(cs);
    }
    Ok((outputs, sets, start.elapsed().as_secs_f64()))
}

/// Metrics of a training-free filter on one seed's samples.
pub fn evaluate_filter(
    method: Method,
    scenario: &Scenario,
    data: &SeedData,
    od: &OdQpConfig,
) -> Result<RolloutMetrics, SimError> {
    let (outputs, sets, secs) = match method {
        Method::Qp { omega } => sweep(scenario, data, |_, u_nom, rows| {
            let cs = rows.constraint_set(omega)?;
            Ok((project_onto(u_nom, &cs)?, cs))
        })?,
        Method::OdQp { omega0 } => {
            let cfg = OdQpConfig { omega0, ..*od };
            sweep(scenario, data, |x, u_nom, _| {
                let sol = od_qp_filter(x, u_nom, &scenario.barriers, &cfg, &scenario.input, &scenario.dynamics, scenario.lie_rule)?;
                Ok((sol.u, sol.constraints))
            })?
        }
        Method::Learned(_) => return Err(SimError::Config(format!("{method} needs a trained policy"))),
    };
    compute_metrics(&outputs, &sets, &data.labels, 0.0, secs)
}

/// Metrics of a trained policy on one seed's samples.
pub fn evaluate_policy(policy: &Policy, scenario: &Scenario, data: &SeedData, t_train_ms: f64) -> Result<RolloutMetrics, SimError> {
    let (outputs, sets, secs) = sweep(scenario, data, |x, _, rows| {
        let out = policy.act(x, rows)?;
        Ok((out.u, out.constraints))
    })?;
    compute_metrics(&outputs, &sets, &data.labels, t_train_ms, secs)
}

/// Outcome of one method on one seed.
#[derive(Debug)]
pub struct MethodRun {
    pub method: Method,
    pub seed: u64,
    pub metrics: RolloutMetrics,
    pub policy: Option<Policy>,
    /// Per-epoch training loss; empty for filters.
    pub losses: Vec<f64>,
}

/// Training settings for `scenario`: an unset decay cap becomes `1 / dt`.
pub fn train_config_for(scenario: &Scenario, cfg: &TrainConfig) -> TrainConfig {
    let mut out = cfg.clone();
    out.policy.max_decay = out.policy.max_decay.or(Some(1.0 / scenario.dt));
    out
}

pub fn run_method(method: Method, scenario: &Scenario, data: &SeedData, cfg: &BenchmarkConfig) -> Result<MethodRun, SimError> {
    let od = OdQpConfig { omega0: 1.0, penalty: cfg.od_penalty, mode: cfg.od_mode };
    match method {
        Method::Learned(arch) => {
            let (policy, report) = train(arch, &data.set, &train_config_for(scenario, &cfg.train), data.seed)?;
            let metrics = evaluate_policy(&policy, scenario, data, report.ms_per_epoch)?;
            Ok(MethodRun { method, seed: data.seed, metrics, policy: Some(policy), losses: report.losses })
        }
        _ => {
            let metrics = evaluate_filter(method, scenario, data, &od)?;
            Ok(MethodRun { method, seed: data.seed, metrics, policy: None, losses: Vec::new() })
        }
    }
}

fn run_seed(scenario: &Scenario, cfg: &BenchmarkConfig, seed: u64) -> Result<Vec<MethodRun>, SimError> {
    let data = seed_data(scenario, cfg.samples, seed)?;
    cfg.methods.iter().map(|&m| run_method(m, scenario, &data, cfg)).collect()
}

/// Every configured method on every seed, ordered by seed then method.
///
/// With `parallel` each seed runs on its own thread; timings then share the CPU.
pub fn run_benchmark(scenario: &Scenario, cfg: &BenchmarkConfig, parallel: bool) -> Result<Vec<MethodRun>, SimError> {
    cfg.validate()?;
    let per_seed: Vec<Result<Vec<MethodRun>, SimError>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfg.seeds.iter().map(|&seed| s.spawn(move || run_seed(scenario, cfg, seed))).collect();
            handles.into_iter().map(|h| h.join().expect("benchmark worker panicked")).collect()
        })
    } else {
        cfg.seeds.iter().map(|&seed| run_seed(scenario, cfg, seed)).collect()
    };
    let mut out = Vec::new();
    for runs in per_seed {
        out.extend(runs?);
    }
    Ok(out)
}

/// Mean and std per method, in order of first appearance.
pub fn summarize(runs: &[MethodRun]) -> Vec<(Method, MetricSummary)> {
    let mut order: Vec<Method> = Vec::new();
    for r in runs {
        if !order.contains(&r.method) {
            order.push(r.method);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let metrics: Vec<RolloutMetrics> = runs.iter().filter(|r| r.method == m).map(|r| r.metrics).collect();
            (m, aggregate(&metrics))
        })
        .collect()
}
