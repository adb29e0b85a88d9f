//! Constraint decomposition and the pseudoinverse projection layer.
//!
//! A state-dependent polytope `{u | A u <= b}` is split into subconstraints
//! `(A_g, b_g)`, one per index tuple `g`. Each subconstraint yields a
//! candidate
//!
//! ```text
//!     P_g = f - A_g^+ (A_g f - b_g) + (I - A_g^+ A_g) w
//! ```
//!
//! where `f` is the unconstrained network output and `w` a learned null-space
//! component. The layer returns `f` when it is feasible and otherwise the
//! feasible candidate nearest to `f`.
//!
//! The lite decomposition keeps only orders `1` and `min(n_c, m)`; the full
//! one keeps every order up to `min(n_c, m)`. Both always contain a feasible
//! candidate when the polytope is nonempty and `A` has rank `min(n_c, m)`.
//! With a rank-deficient `A` the lite set can miss every feasible point (see
//! `lite_can_miss_with_rank_deficient_rows` in the tests), in which case
//! selection reports [`AffineError::NoFeasibleCandidate`].

mod constraints;
mod pinv;
mod projection;
mod subsets;

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};

pub use constraints::AffineConstraintSet;
pub use pinv::{pinv, DEFAULT_PINV_RTOL};
pub use projection::{
    feasible_candidates, lp_distance, project_subconstraint, recover_target, select_output, Branch,
    NotOnBoundary, PreparedProjection, ProjectionCandidate, Recovery, SelectionTrace,
    SelectorConfig, SubProjector, TieBreak, TIE_TOLERANCE,
};
pub use subsets::{
    binomial, enumerate_subsets_full, enumerate_subsets_lite, full_count, lite_count,
    Decomposition, SubsetIndex,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AffineError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite entry in constraint data")]
    NonFinite,
    #[error("singular value decomposition failed")]
    Decomposition,
    #[error("none of the {candidates} projection candidates is feasible")]
    NoFeasibleCandidate { candidates: usize },
    #[error("selection trace does not belong to this constraint set")]
    StaleTrace,
    #[error("invalid selector configuration: {0}")]
    InvalidConfig(String),
}

type SubsetKey = (Decomposition, usize, usize);

/// Read-mostly cache of subset enumerations keyed by `(kind, n_c, m)`.
#[derive(Debug, Default)]
pub struct SubsetCache {
    inner: RwLock<HashMap<SubsetKey, Arc<[SubsetIndex]>>>,
}

impl SubsetCache {
    pub fn get(&self, kind: Decomposition, n_c: usize, m: usize) -> Arc<[SubsetIndex]> {
        let key = (kind, n_c, m);
        if let Some(hit) = self.inner.read().expect("subset cache poisoned").get(&key) {
            return hit.clone();
        }
        let mut guard = self.inner.write().expect("subset cache poisoned");
        guard
            .entry(key)
            .or_insert_with(|| kind.enumerate(n_c, m).into())
            .clone()
    }
}

/// A decomposition strategy plus selector settings, reusable across states.
#[derive(Debug)]
pub struct ProjectionLayer {
    kind: Decomposition,
    cfg: SelectorConfig,
    cache: SubsetCache,
}

impl ProjectionLayer {
    pub fn new(kind: Decomposition, cfg: SelectorConfig) -> Result<Self, AffineError> {
        cfg.validate()?;
        Ok(Self { kind, cfg, cache: SubsetCache::default() })
    }

    pub fn kind(&self) -> Decomposition {
        self.kind
    }

    pub fn config(&self) -> &SelectorConfig {
        &self.cfg
    }

    pub fn subsets(&self, n_c: usize, m: usize) -> Arc<[SubsetIndex]> {
        self.cache.get(self.kind, n_c, m)
    }

    /// Caches `A_g^+` for every subset of `a`; offsets are supplied per call.
    pub fn prepare(&self, a: &DMatrix<f64>) -> Result<PreparedProjection, AffineError> {
        let subsets = self.subsets(a.nrows(), a.ncols());
        PreparedProjection::new(a, &subsets, self.cfg.pinv_rtol)
    }

    pub fn select(
        &self,
        f: &DVector<f64>,
        w: &DVector<f64>,
        cs: &AffineConstraintSet,
    ) -> Result<(DVector<f64>, SelectionTrace), AffineError> {
        self.prepare(cs.a())?.select(f, w, cs, &self.cfg)
    }
}
