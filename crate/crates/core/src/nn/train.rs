use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::loss::{loss_mse, loss_mse_grad, loss_penalty, loss_penalty_grad, projection_backward, DEFAULT_PENALTY_WEIGHT};
use super::mlp::MlpGrads;
use super::policy::{Architecture, Policy, PolicySpec};
use super::NnError;
use crate::affine::{AffineConstraintSet, PreparedProjection};
use crate::cbf::CbfRows;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Weight on `ReLU(A u - b)` for the soft-constrained baseline.
    pub penalty_weight: f64,
    pub policy: PolicySpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            adam: AdamConfig::default(),
            penalty_weight: DEFAULT_PENALTY_WEIGHT,
            policy: PolicySpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return Err(NnError::Config(format!("penalty_weight must be >= 0, got {}", self.penalty_weight)));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(NnError::Config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        self.policy.selector.validate()?;
        Ok(())
    }
}

/// Fixed training states with nominal labels and alpha-independent rows.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    states: DMatrix<f64>,
    labels: Vec<DVector<f64>>,
    rows: Vec<CbfRows>,
}

impl TrainingSet {
    pub fn new(states: &[DVector<f64>], labels: Vec<DVector<f64>>, rows: Vec<CbfRows>) -> Result<Self, NnError> {
        if states.is_empty() || states.len() != labels.len() || states.len() != rows.len() {
            return Err(NnError::Shape(format!(
                "{} states, {} labels, {} row sets",
                states.len(),
                labels.len(),
                rows.len()
            )));
        }
        let n = states[0].len();
        if states.iter().any(|s| s.len() != n) {
            return Err(NnError::Shape("states have different lengths".into()));
        }
        Ok(Self { states: DMatrix::from_columns(states), labels, rows })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.labels[0].len()
    }

    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn labels(&self) -> &[DVector<f64>] {
        &self.labels
    }

    pub fn rows(&self) -> &[CbfRows] {
        &self.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss, one entry per epoch.
    pub losses: Vec<f64>,
    /// Wall-clock milliseconds per epoch.
    pub ms_per_epoch: f64,
    /// Largest constraint residual of any training output at any epoch.
    pub max_train_violation: f64,
}

/// Mean loss over a training set and its gradients w.r.t. both networks.
#[derive(Debug, Clone)]
pub struct BatchGrads {
    pub loss: f64,
    /// Largest constraint residual among the outputs (zero for the penalty baseline).
    pub max_violation: f64,
    pub controller: MlpGrads,
    pub alpha: MlpGrads,
}

/// Per-sample projectors for a projection architecture; empty otherwise.
pub fn prepare_projections(policy: &Policy, set: &TrainingSet) -> Result<Vec<PreparedProjection>, NnError> {
    match policy.layer() {
        Some(layer) => Ok(set.rows.iter().map(|r| layer.prepare(r.a())).collect::<Result<_, _>>()?),
        None => Ok(Vec::new()),
    }
}

/// Forward and reverse pass over the whole set, selection branches held fixed.
pub fn loss_and_grads(
    policy: &Policy,
    set: &TrainingSet,
    prepared: &[PreparedProjection],
    penalty_weight: f64,
) -> Result<BatchGrads, NnError> {
    if policy.architecture().enforces_constraints() && prepared.len() != set.len() {
        return Err(NnError::Shape(format!("{} projectors for {} samples", prepared.len(), set.len())));
    }
    let (ctrl_out, ctrl_cache) = policy.controller().forward_cached(set.states())?;
    let (alpha_out, alpha_cache) = policy.alpha().forward_cached(set.states())?;
    let res = epoch_gradients(policy, set, prepared, &ctrl_out, &alpha_out, penalty_weight)?;
    let (controller, _) = policy.controller().backward(&ctrl_cache, &res.grad_controller)?;
    let (alpha, _) = policy.alpha().backward(&alpha_cache, &res.grad_alpha)?;
    Ok(BatchGrads { loss: res.loss, max_violation: res.max_violation, controller, alpha })
}

struct EpochResult {
    loss: f64,
    max_violation: f64,
    grad_controller: DMatrix<f64>,
    grad_alpha: DMatrix<f64>,
}

fn epoch_gradients(
    policy: &Policy,
    set: &TrainingSet,
    prepared: &[PreparedProjection],
    ctrl_out: &DMatrix<f64>,
    alpha_out: &DMatrix<f64>,
    penalty_weight: f64,
) -> Result<EpochResult, NnError> {
    let n_samples = set.len();
    let m = set.input_dim();
    let scale = 1.0 / n_samples as f64;
    let selector = *policy.selector();
    let mut grad_controller = DMatrix::zeros(ctrl_out.nrows(), n_samples);
    let mut grad_alpha = DMatrix::zeros(1, n_samples);
    let mut loss = 0.0;
    let mut max_violation: f64 = 0.0;

    for i in 0..n_samples {
        let rows = &set.rows[i];
        let raw = alpha_out[(0, i)];
        let (decay, d_decay_d_raw) = policy.decay_from_raw(raw);
        let cs = AffineConstraintSet::new(rows.a().clone(), rows.offsets(decay))?;
        let label = &set.labels[i];
        let out = ctrl_out.column(i);

        let (g_b, violation) = match policy.architecture() {
            Architecture::NnPenalty => {
                let u = out.into_owned();
                loss += loss_mse(&u, label) + loss_penalty(&u, &cs, penalty_weight);
                let (pu, pb) = loss_penalty_grad(&u, &cs, penalty_weight);
                let g_u = (loss_mse_grad(&u, label) + pu) * scale;
                grad_controller.set_column(i, &g_u);
                (pb * scale, 0.0)
            }
            Architecture::Caffnet | Architecture::CaffnetLite => {
                let f = out.rows(0, m).into_owned();
                let w = out.rows(m, m).into_owned();
                let (u, trace) = prepared[i].select(&f, &w, &cs, &selector)?;
                loss += loss_mse(&u, label);
                let g_u = loss_mse_grad(&u, label) * scale;
                let g = projection_backward(&trace, &prepared[i], &cs, &g_u)?;
                grad_controller.rows_mut(0, m).column_mut(i).copy_from(&g.f);
                grad_controller.rows_mut(m, m).column_mut(i).copy_from(&g.w);
                (g.b, cs.max_residual(&u).max(0.0))
            }
        };
        max_violation = max_violation.max(violation);

        // b_j = L_f h_j + decay(raw) * h_j on barrier rows.
        let h = rows.barrier_values();
        let d_decay: f64 = (0..rows.n_barriers()).map(|j| g_b[j] * h[j]).sum();
        grad_alpha[(0, i)] = d_decay * d_decay_d_raw;
    }
    Ok(EpochResult { loss: loss * scale, max_violation, grad_controller, grad_alpha })
}

/// Full-batch training of a fresh policy on a fixed sample set.
pub fn train(
    arch: Architecture,
    set: &TrainingSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Policy, TrainReport), NnError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = Policy::new(arch, set.state_dim(), set.input_dim(), &cfg.policy, &mut rng)?;
    let prepared = prepare_projections(&policy, set)?;
    let mut opt_controller = Adam::new(cfg.adam);
    let mut opt_alpha = Adam::new(cfg.adam);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut max_train_violation: f64 = 0.0;
    let start = Instant::now();

    for epoch in 0..cfg.epochs {
        let res = loss_and_grads(&policy, set, &prepared, cfg.penalty_weight)?;
        if !res.loss.is_finite() {
            return Err(NnError::Diverged { epoch, loss: res.loss });
        }
        losses.push(res.loss);
        max_train_violation = max_train_violation.max(res.max_violation);

        let (controller, alpha) = policy.nets_mut();
        opt_controller.step(controller.tensors_mut(), res.controller.tensors());
        opt_alpha.step(alpha.tensors_mut(), res.alpha.tensors());
    }

    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    let ms_per_epoch = if cfg.epochs == 0 { 0.0 } else { elapsed_ms / cfg.epochs as f64 };
    Ok((policy, TrainReport { losses, ms_per_epoch, max_train_violation }))
}
