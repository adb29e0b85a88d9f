use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpParams};
use super::NnError;
use crate::affine::{AffineConstraintSet, Decomposition, ProjectionLayer, SelectionTrace, SelectorConfig};
use crate::cbf::{CbfRows, GainTransform};

/// Trainable controller families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Plain network trained with a soft constraint penalty.
    NnPenalty,
    /// Projection layer over every subconstraint order.
    Caffnet,
    /// Projection layer over orders `1` and `min(n_c, m)` only.
    CaffnetLite,
}

impl Architecture {
    pub fn decomposition(self) -> Option<Decomposition> {
        match self {
            Architecture::NnPenalty => None,
            Architecture::Caffnet => Some(Decomposition::Full),
            Architecture::CaffnetLite => Some(Decomposition::Lite),
        }
    }

    /// Controller head width: `f` alone, or `f` stacked on `w`.
    pub fn head_outputs(self, m: usize) -> usize {
        match self {
            Architecture::NnPenalty => m,
            Architecture::Caffnet | Architecture::CaffnetLite => 2 * m,
        }
    }

    pub fn enforces_constraints(self) -> bool {
        self.decomposition().is_some()
    }
}

/// Shape and gain settings needed to build a fresh [`Policy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySpec {
    pub controller_hidden: Vec<usize>,
    pub alpha_hidden: Vec<usize>,
    /// Base decay gain multiplied by the learned scale.
    pub omega: f64,
    pub transform: GainTransform,
    /// Initial output bias of the gain network, so training starts near `omega`.
    pub alpha_bias_init: f64,
    pub selector: SelectorConfig,
    /// Upper bound on the decay `omega * scale`. With forward Euler at step
    /// `dt`, a cap of `1 / dt` keeps every convex barrier non-negative.
    pub max_decay: Option<f64>,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            controller_hidden: vec![200, 200, 200],
            alpha_hidden: vec![64, 64, 64],
            omega: 10.0,
            transform: GainTransform::Identity,
            alpha_bias_init: 1.0,
            selector: SelectorConfig::default(),
            max_decay: None,
        }
    }
}

/// Learned controller plus learned decay scale.
#[derive(Debug)]
pub struct Policy {
    arch: Architecture,
    controller: Mlp,
    alpha: Mlp,
    omega: f64,
    transform: GainTransform,
    selector: SelectorConfig,
    layer: Option<ProjectionLayer>,
    max_decay: Option<f64>,
}

/// Result of one policy evaluation.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub u: DVector<f64>,
    /// Constraint set with the learned decay substituted.
    pub constraints: AffineConstraintSet,
    pub decay: f64,
    /// Present for projection architectures.
    pub trace: Option<SelectionTrace>,
}

fn layer_for(arch: Architecture, selector: SelectorConfig) -> Result<Option<ProjectionLayer>, NnError> {
    arch.decomposition().map(|kind| ProjectionLayer::new(kind, selector)).transpose().map_err(NnError::from)
}

fn sizes(n: usize, hidden: &[usize], out: usize) -> Vec<usize> {
    std::iter::once(n).chain(hidden.iter().copied()).chain(std::iter::once(out)).collect()
}

impl Policy {
    pub fn new(arch: Architecture, n: usize, m: usize, spec: &PolicySpec, rng: &mut impl Rng) -> Result<Self, NnError> {
        if !(spec.omega.is_finite() && spec.omega > 0.0) {
            return Err(NnError::Config(format!("omega must be positive, got {}", spec.omega)));
        }
        let controller = Mlp::new_uniform(&sizes(n, &spec.controller_hidden, arch.head_outputs(m)), rng)?;
        let mut alpha = Mlp::new_uniform(&sizes(n, &spec.alpha_hidden, 1), rng)?;
        alpha.set_output_bias(spec.alpha_bias_init);
        Self::from_parts(arch, controller, alpha, spec.omega, spec.transform, spec.selector)?.with_max_decay(spec.max_decay)
    }

    pub fn from_parts(
        arch: Architecture,
        controller: Mlp,
        alpha: Mlp,
        omega: f64,
        transform: GainTransform,
        selector: SelectorConfig,
    ) -> Result<Self, NnError> {
        let n = controller.input_dim();
        if alpha.input_dim() != n || alpha.output_dim() != 1 {
            return Err(NnError::Shape(format!("gain network must map {n} inputs to 1 output")));
        }
        if !controller.output_dim().is_multiple_of(arch.head_outputs(1)) {
            return Err(NnError::Shape(format!(
                "controller output {} does not fit {arch:?}",
                controller.output_dim()
            )));
        }
        let layer = layer_for(arch, selector)?;
        Ok(Self { arch, controller, alpha, omega, transform, selector, layer, max_decay: None })
    }

    pub fn with_max_decay(mut self, cap: Option<f64>) -> Result<Self, NnError> {
        if let Some(c) = cap {
            if !(c > 0.0 && c.is_finite()) {
                return Err(NnError::Config(format!("max_decay must be positive, got {c}")));
            }
        }
        self.max_decay = cap;
        Ok(self)
    }

    pub fn max_decay(&self) -> Option<f64> {
        self.max_decay
    }

    /// Decay for a raw gain-network output, and its derivative w.r.t. that output.
    pub fn decay_from_raw(&self, raw: f64) -> (f64, f64) {
        let decay = self.transform.apply(raw) * self.omega;
        match self.max_decay {
            Some(cap) if decay > cap => (cap, 0.0),
            _ => (decay, self.transform.derivative(raw) * self.omega),
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn controller(&self) -> &Mlp {
        &self.controller
    }

    pub fn alpha(&self) -> &Mlp {
        &self.alpha
    }

    /// Mutable access to the controller and gain networks, in that order.
    pub fn nets_mut(&mut self) -> (&mut Mlp, &mut Mlp) {
        (&mut self.controller, &mut self.alpha)
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn transform(&self) -> GainTransform {
        self.transform
    }

    pub fn selector(&self) -> &SelectorConfig {
        &self.selector
    }

    pub fn layer(&self) -> Option<&ProjectionLayer> {
        self.layer.as_ref()
    }

    pub fn input_dim(&self) -> usize {
        self.controller.output_dim() / self.arch.head_outputs(1)
    }

    /// Transformed gain network output at `x`.
    pub fn gain_scale(&self, x: &DVector<f64>) -> Result<f64, NnError> {
        Ok(self.transform.apply(self.alpha.forward(x)?[0]))
    }

    pub fn act(&self, x: &DVector<f64>, rows: &CbfRows) -> Result<PolicyOutput, NnError> {
        let (decay, _) = self.decay_from_raw(self.alpha.forward(x)?[0]);
        if !decay.is_finite() {
            return Err(NnError::NonFinite("learned decay".into()));
        }
        let constraints = rows.constraint_set(decay)?;
        let out = self.controller.forward(x)?;
        let m = self.input_dim();
        match &self.layer {
            None => Ok(PolicyOutput { u: out, constraints, decay, trace: None }),
            Some(layer) => {
                let f = out.rows(0, m).into_owned();
                let w = out.rows(m, m).into_owned();
                let (u, trace) = layer.select(&f, &w, &constraints)?;
                Ok(PolicyOutput { u, constraints, decay, trace: Some(trace) })
            }
        }
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    /// Wall-clock training time per epoch.
    #[serde(default)]
    pub ms_per_epoch: Option<f64>,
}

/// Versioned JSON snapshot of a [`Policy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub omega: f64,
    pub transform: GainTransform,
    #[serde(default)]
    pub max_decay: Option<f64>,
    pub selector: SelectorConfig,
    pub controller: MlpParams,
    pub alpha: MlpParams,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_policy(policy: &Policy, meta: CheckpointMeta) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            architecture: policy.arch,
            omega: policy.omega,
            transform: policy.transform,
            max_decay: policy.max_decay,
            selector: policy.selector,
            controller: MlpParams::from(&policy.controller),
            alpha: MlpParams::from(&policy.alpha),
            meta,
        }
    }

    pub fn into_policy(self) -> Result<Policy, NnError> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.format_version
            )));
        }
        Policy::from_parts(
            self.architecture,
            Mlp::try_from(self.controller)?,
            Mlp::try_from(self.alpha)?,
            self.omega,
            self.transform,
            self.selector,
        )?
        .with_max_decay(self.max_decay)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let text = serde_json::to_string(self).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }
}
