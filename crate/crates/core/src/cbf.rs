//! Barrier functions, Lie derivatives and assembly of the state-dependent
//! affine constraint set.
//!
//! Every barrier `h_j` contributes one row `-L_g h_j u <= L_f h_j + alpha(h_j)`,
//! followed by the input rows `P u <= q`. The class-K term is either the fixed
//! `omega * h` or the learned `gain(x) * omega * h`; both vanish at `h = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::affine::{AffineConstraintSet, AffineError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CbfError {
    #[error("invalid barrier: {0}")]
    Invalid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Affine(#[from] AffineError),
}

/// `h(x) = a . x - c`, safe where non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceBarrier {
    normal: DVector<f64>,
    offset: f64,
}

impl HalfspaceBarrier {
    pub fn new(normal: DVector<f64>, offset: f64) -> Result<Self, CbfError> {
        if normal.iter().all(|&v| v == 0.0) {
            return Err(CbfError::Invalid("halfspace normal must be nonzero".into()));
        }
        if normal.iter().any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(CbfError::NonFinite("halfspace coefficients"));
        }
        Ok(Self { normal, offset })
    }

    pub fn normal(&self) -> &DVector<f64> {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.normal.dot(x) - self.offset
    }
}

/// Barriers `hi_i - x_i >= 0` and `x_i - lo_i >= 0` for every coordinate, in that order.
pub fn state_box_barriers(lo: &[f64], hi: &[f64]) -> Result<Vec<HalfspaceBarrier>, CbfError> {
    if lo.len() != hi.len() {
        return Err(CbfError::Shape("state box bounds differ in length".into()));
    }
    let n = lo.len();
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        if !(lo[i] < hi[i]) {
            return Err(CbfError::Invalid(format!("state box dimension {i} is empty")));
        }
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        out.push(HalfspaceBarrier::new(-&e, -hi[i])?);
        out.push(HalfspaceBarrier::new(e, lo[i])?);
    }
    Ok(out)
}

/// Log-sum-exp union of halfspace barriers with sharpness `kappa`:
///
/// ```text
///     h(x) = ln(sum_i exp(kappa h_i(x))) / kappa - ln(n) / kappa
/// ```
///
/// An obstacle is the region where every edge value is negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothUnion {
    edges: Vec<HalfspaceBarrier>,
    kappa: f64,
}

impl SmoothUnion {
    pub fn new(edges: Vec<HalfspaceBarrier>, kappa: f64) -> Result<Self, CbfError> {
        if edges.is_empty() {
            return Err(CbfError::Invalid("smooth union needs at least one edge".into()));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(CbfError::Invalid(format!("kappa must be positive, got {kappa}")));
        }
        let n = edges[0].dim();
        if edges.iter().any(|e| e.dim() != n) {
            return Err(CbfError::Shape("edges of a smooth union differ in dimension".into()));
        }
        Ok(Self { edges, kappa })
    }

    /// Convex polygon from counter-clockwise vertices; one outward edge per side.
    pub fn from_polygon(vertices: &[[f64; 2]], kappa: f64) -> Result<Self, CbfError> {
        if vertices.len() < 3 {
            return Err(CbfError::Invalid("polygon needs at least three vertices".into()));
        }
        let mut edges = Vec::with_capacity(vertices.len());
        for k in 0..vertices.len() {
            let p = vertices[k];
            let q = vertices[(k + 1) % vertices.len()];
            let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
            let len = dx.hypot(dy);
            if len == 0.0 {
                return Err(CbfError::Invalid(format!("repeated polygon vertex {k}")));
            }
            let normal = DVector::from_vec(vec![dy / len, -dx / len]);
            let offset = normal[0] * p[0] + normal[1] * p[1];
            edges.push(HalfspaceBarrier::new(normal, offset)?);
        }
        let union = Self::new(edges, kappa)?;
        // Counter-clockwise order puts the centroid strictly inside every edge.
        let c = vertices.iter().fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        let centroid = DVector::from_vec(vec![c[0] / vertices.len() as f64, c[1] / vertices.len() as f64]);
        if union.edges.iter().any(|e| e.value(&centroid) >= 0.0) {
            return Err(CbfError::Invalid(
                "polygon vertices must be convex and counter-clockwise".into(),
            ));
        }
        Ok(union)
    }

    pub fn edges(&self) -> &[HalfspaceBarrier] {
        &self.edges
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.edges[0].dim()
    }

    pub fn edge_values(&self, x: &DVector<f64>) -> Vec<f64> {
        self.edges.iter().map(|e| e.value(x)).collect()
    }

    /// Returns `(max_i h_i, ln sum_i exp(kappa (h_i - max)))`.
    fn shifted_lse(&self, hs: &[f64]) -> (f64, f64) {
        let top = hs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = hs.iter().map(|h| (self.kappa * (h - top)).exp()).sum();
        (top, sum.ln())
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let hs = self.edge_values(x);
        let (top, lse) = self.shifted_lse(&hs);
        top + (lse - (hs.len() as f64).ln()) / self.kappa
    }

    /// `lambda_i = exp(kappa (h_i - h))`; these sum to the number of edges.
    pub fn weights(&self, x: &DVector<f64>) -> Vec<f64> {
        let hs = self.edge_values(x);
        let (top, lse) = self.shifted_lse(&hs);
        let ln_n = (hs.len() as f64).ln();
        hs.iter()
            .map(|h| (self.kappa * (h - top) - lse + ln_n).exp())
            .collect()
    }

    /// Exact gradient of [`value`](Self::value): the softmax-weighted mean of the edge normals.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.edges.len() as f64;
        self.edge_weighted_gradient(x) / n
    }

    /// `sum_i lambda_i a_i` with the unnormalized weights of [`weights`](Self::weights).
    pub fn edge_weighted_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let lambdas = self.weights(x);
        let mut g = DVector::zeros(self.dim());
        for (lam, edge) in lambdas.iter().zip(&self.edges) {
            g.axpy(*lam, &edge.normal, 1.0);
        }
        g
    }
}

/// How the smooth-union gradient enters the Lie derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LieRule {
    /// The exact gradient of the smooth union.
    #[default]
    Analytic,
    /// `sum_i lambda_i grad h_i` with `lambda_i = exp(kappa (h_i - h))`, which is
    /// `n` times the exact gradient.
    EdgeWeighted,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Barrier {
    Halfspace(HalfspaceBarrier),
    SmoothUnion(SmoothUnion),
}

impl Barrier {
    pub fn dim(&self) -> usize {
        match self {
            Barrier::Halfspace(b) => b.dim(),
            Barrier::SmoothUnion(b) => b.dim(),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            Barrier::Halfspace(b) => b.value(x),
            Barrier::SmoothUnion(b) => b.value(x),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>, rule: LieRule) -> DVector<f64> {
        match (self, rule) {
            (Barrier::Halfspace(b), _) => b.normal.clone(),
            (Barrier::SmoothUnion(b), LieRule::Analytic) => b.gradient(x),
            (Barrier::SmoothUnion(b), LieRule::EdgeWeighted) => b.edge_weighted_gradient(x),
        }
    }
}

/// Control-affine dynamics `x' = f(x) + g(x) u`.
pub trait ControlAffine {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn velocity(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.input_matrix(x) * u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    /// `x' = u`.
    SingleIntegrator { dim: usize },
    /// `x' = drift x + input u`.
    Linear { drift: DMatrix<f64>, input: DMatrix<f64> },
}

impl Dynamics {
    pub fn linear(drift: DMatrix<f64>, input: DMatrix<f64>) -> Result<Self, CbfError> {
        if !drift.is_square() || drift.nrows() != input.nrows() {
            return Err(CbfError::Shape(format!(
                "drift {:?} and input {:?} are inconsistent",
                drift.shape(),
                input.shape()
            )));
        }
        Ok(Dynamics::Linear { drift, input })
    }
}

impl ControlAffine for Dynamics {
    fn state_dim(&self) -> usize {
        match self {
            Dynamics::SingleIntegrator { dim } => *dim,
            Dynamics::Linear { drift, .. } => drift.nrows(),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            Dynamics::SingleIntegrator { dim } => *dim,
            Dynamics::Linear { input, .. } => input.ncols(),
        }
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Dynamics::SingleIntegrator { dim } => DVector::zeros(*dim),
            Dynamics::Linear { drift, .. } => drift * x,
        }
    }

    fn input_matrix(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Dynamics::SingleIntegrator { dim } => DMatrix::identity(*dim, *dim),
            Dynamics::Linear { input, .. } => input.clone(),
        }
    }
}

/// `(L_f h(x), L_g h(x))`, the latter as a length-`m` vector.
pub fn lie_derivatives(
    barrier: &Barrier,
    dynamics: &dyn ControlAffine,
    x: &DVector<f64>,
    rule: LieRule,
) -> (f64, DVector<f64>) {
    let grad = barrier.gradient(x, rule);
    let lf = grad.dot(&dynamics.drift(x));
    let lg = dynamics.input_matrix(x).tr_mul(&grad);
    (lf, lg)
}

/// Input set `{u | P u <= q}`; boxes remember their bounds for saturation.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPolytope {
    p: DMatrix<f64>,
    q: DVector<f64>,
    bounds: Option<(DVector<f64>, DVector<f64>)>,
}

impl InputPolytope {
    pub fn new(p: DMatrix<f64>, q: DVector<f64>) -> Result<Self, CbfError> {
        if p.nrows() != q.len() {
            return Err(CbfError::Shape("input polytope P and q disagree".into()));
        }
        if p.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(CbfError::NonFinite("input polytope"));
        }
        Ok(Self { p, q, bounds: None })
    }

    /// `lo <= u <= hi` as rows `u_i <= hi_i`, `-u_i <= -lo_i` per coordinate.
    pub fn boxed(lo: &[f64], hi: &[f64]) -> Result<Self, CbfError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(CbfError::Shape("input bounds must be non-empty and equal length".into()));
        }
        let m = lo.len();
        let mut p = DMatrix::zeros(2 * m, m);
        let mut q = DVector::zeros(2 * m);
        for i in 0..m {
            if !(lo[i] <= hi[i]) {
                return Err(CbfError::Invalid(format!("input bound {i} is empty")));
            }
            p[(2 * i, i)] = 1.0;
            q[2 * i] = hi[i];
            p[(2 * i + 1, i)] = -1.0;
            q[2 * i + 1] = -lo[i];
        }
        let mut out = Self::new(p, q)?;
        out.bounds = Some((DVector::from_column_slice(lo), DVector::from_column_slice(hi)));
        Ok(out)
    }

    /// An input set with no rows.
    pub fn unconstrained(m: usize) -> Self {
        Self { p: DMatrix::zeros(0, m), q: DVector::zeros(0), bounds: None }
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.p.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.p.nrows()
    }

    pub fn bounds(&self) -> Option<(&DVector<f64>, &DVector<f64>)> {
        self.bounds.as_ref().map(|(lo, hi)| (lo, hi))
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        (&self.p * u - &self.q).iter().all(|&r| r <= tol)
    }

    /// Componentwise clamp; `None` for non-box polytopes.
    pub fn clamp(&self, u: &DVector<f64>) -> Option<DVector<f64>> {
        let (lo, hi) = self.bounds.as_ref()?;
        Some(DVector::from_iterator(
            u.len(),
            u.iter().enumerate().map(|(i, v)| v.clamp(lo[i], hi[i])),
        ))
    }
}

/// A state-dependent multiplier, e.g. a learned network output.
pub trait StateGain: Sync {
    fn gain(&self, x: &DVector<f64>) -> f64;
}

impl<F: Fn(&DVector<f64>) -> f64 + Sync> StateGain for F {
    fn gain(&self, x: &DVector<f64>) -> f64 {
        self(x)
    }
}

/// Optional output transform on the learned gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GainTransform {
    /// Unconstrained raw output.
    #[default]
    Identity,
    Softplus,
}

impl GainTransform {
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            GainTransform::Identity => raw,
            GainTransform::Softplus => {
                if raw > 30.0 {
                    raw
                } else {
                    raw.exp().ln_1p()
                }
            }
        }
    }

    pub fn derivative(self, raw: f64) -> f64 {
        match self {
            GainTransform::Identity => 1.0,
            GainTransform::Softplus => 1.0 / (1.0 + (-raw).exp()),
        }
    }
}

/// Class-K term: `omega * h` or `gain(x) * omega * h`.
#[derive(Clone, Copy)]
pub enum AlphaSpec<'a> {
    Fixed { omega: f64 },
    Learned { omega: f64, gain: &'a dyn StateGain },
}

impl AlphaSpec<'_> {
    pub fn omega(&self) -> f64 {
        match self {
            AlphaSpec::Fixed { omega } | AlphaSpec::Learned { omega, .. } => *omega,
        }
    }

    /// Multiplier on `omega * h` at `x`.
    pub fn scale(&self, x: &DVector<f64>) -> f64 {
        match self {
            AlphaSpec::Fixed { .. } => 1.0,
            AlphaSpec::Learned { gain, .. } => gain.gain(x),
        }
    }

    pub fn eval(&self, x: &DVector<f64>, h: f64) -> f64 {
        self.scale(x) * self.omega() * h
    }
}

impl std::fmt::Debug for AlphaSpec<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AlphaSpec::Fixed { omega } => write!(f, "Fixed {{ omega: {omega} }}"),
            AlphaSpec::Learned { omega, .. } => write!(f, "Learned {{ omega: {omega} }}"),
        }
    }
}

/// The alpha-independent part of the constraint set at one state.
///
/// Normals do not depend on alpha, so projections can be prepared once per
/// state and only the offsets recomputed when a learned gain changes.
#[derive(Debug, Clone, PartialEq)]
pub struct CbfRows {
    a: DMatrix<f64>,
    drift_terms: DVector<f64>,
    barrier_values: DVector<f64>,
    input_offsets: DVector<f64>,
}

impl CbfRows {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn n_barriers(&self) -> usize {
        self.barrier_values.len()
    }

    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    /// `L_f h_j` per barrier.
    pub fn drift_terms(&self) -> &DVector<f64> {
        &self.drift_terms
    }

    /// `h_j(x)` per barrier.
    pub fn barrier_values(&self) -> &DVector<f64> {
        &self.barrier_values
    }

    /// `[L_f h_j + decay * h_j ; q]` for a total decay gain `decay = scale * omega`.
    pub fn offsets(&self, decay: f64) -> DVector<f64> {
        let nb = self.n_barriers();
        let mut b = DVector::zeros(self.n_rows());
        for j in 0..nb {
            b[j] = self.drift_terms[j] + decay * self.barrier_values[j];
        }
        b.rows_mut(nb, self.input_offsets.len()).copy_from(&self.input_offsets);
        b
    }

    /// Offsets with a separate decay gain per barrier row.
    pub fn offsets_per_row(&self, decays: &[f64]) -> DVector<f64> {
        assert_eq!(decays.len(), self.n_barriers(), "one decay per barrier");
        let mut b = self.offsets(0.0);
        for (j, d) in decays.iter().enumerate() {
            b[j] += d * self.barrier_values[j];
        }
        b
    }

    pub fn constraint_set(&self, decay: f64) -> Result<AffineConstraintSet, CbfError> {
        Ok(AffineConstraintSet::new(self.a.clone(), self.offsets(decay))?)
    }
}

/// Computes normals, drift terms and barrier values for every barrier at `x`.
pub fn cbf_rows(
    x: &DVector<f64>,
    barriers: &[Barrier],
    input: &InputPolytope,
    dynamics: &dyn ControlAffine,
    rule: LieRule,
) -> Result<CbfRows, CbfError> {
    let n = dynamics.state_dim();
    let m = dynamics.input_dim();
    if x.len() != n {
        return Err(CbfError::Shape(format!("state has length {}, dynamics expect {n}", x.len())));
    }
    if input.dim() != m {
        return Err(CbfError::Shape(format!("input polytope has {} columns, dynamics expect {m}", input.dim())));
    }
    if let Some(bad) = barriers.iter().position(|b| b.dim() != n) {
        return Err(CbfError::Shape(format!("barrier {bad} has the wrong state dimension")));
    }
    let nb = barriers.len();
    let mut a = DMatrix::zeros(nb + input.n_rows(), m);
    let mut drift_terms = DVector::zeros(nb);
    let mut barrier_values = DVector::zeros(nb);
    for (j, barrier) in barriers.iter().enumerate() {
        let (lf, lg) = lie_derivatives(barrier, dynamics, x, rule);
        if !lf.is_finite() || lg.iter().any(|v| !v.is_finite()) {
            return Err(CbfError::NonFinite("Lie derivative"));
        }
        for c in 0..m {
            a[(j, c)] = -lg[c];
        }
        drift_terms[j] = lf;
        barrier_values[j] = barrier.value(x);
    }
    a.rows_mut(nb, input.n_rows()).copy_from(input.p());
    Ok(CbfRows { a, drift_terms, barrier_values, input_offsets: input.q().clone() })
}

/// Stacks one CBF row per barrier followed by the input rows.
pub fn assemble_constraints(
    x: &DVector<f64>,
    barriers: &[Barrier],
    alpha: &AlphaSpec<'_>,
    input: &InputPolytope,
    dynamics: &dyn ControlAffine,
    rule: LieRule,
) -> Result<AffineConstraintSet, CbfError> {
    let rows = cbf_rows(x, barriers, input, dynamics, rule)?;
    let decay = alpha.scale(x) * alpha.omega();
    if !decay.is_finite() {
        return Err(CbfError::NonFinite("class-K gain"));
    }
    rows.constraint_set(decay)
}
