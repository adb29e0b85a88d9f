use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{pinv, AffineConstraintSet, AffineError, SubsetIndex, DEFAULT_PINV_RTOL};

/// Distances closer than this are treated as a tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Among equally distant candidates keep the lexicographically smallest index tuple.
    #[default]
    LowestLexicographic,
}

/// Knobs for candidate screening and output selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectorConfig {
    /// Exponent of the selection norm; `f64::INFINITY` selects the max norm.
    pub norm_p: f64,
    /// Slack on `A y <= b` when screening candidates.
    pub feas_tol: f64,
    /// Relative singular-value cutoff for the pseudoinverse.
    pub pinv_rtol: f64,
    pub tie_break: TieBreak,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            norm_p: 2.0,
            feas_tol: 1e-9,
            pinv_rtol: DEFAULT_PINV_RTOL,
            tie_break: TieBreak::LowestLexicographic,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), AffineError> {
        if !(self.norm_p >= 1.0) {
            return Err(AffineError::InvalidConfig(format!("norm_p must be >= 1, got {}", self.norm_p)));
        }
        if !(self.feas_tol >= 0.0) || !self.feas_tol.is_finite() {
            return Err(AffineError::InvalidConfig(format!("feas_tol must be >= 0, got {}", self.feas_tol)));
        }
        if !(self.pinv_rtol > 0.0) || !self.pinv_rtol.is_finite() {
            return Err(AffineError::InvalidConfig(format!("pinv_rtol must be > 0, got {}", self.pinv_rtol)));
        }
        Ok(())
    }
}

/// `|x - y|_p`.
pub fn lp_distance(x: &DVector<f64>, y: &DVector<f64>, p: f64) -> f64 {
    let diffs = x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs());
    if p.is_infinite() {
        diffs.fold(0.0, f64::max)
    } else if p == 2.0 {
        diffs.map(|d| d * d).sum::<f64>().sqrt()
    } else if p == 1.0 {
        diffs.sum()
    } else {
        diffs.map(|d| d.powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// `f - A_g^+ (A_g f - b_g) + (I - A_g^+ A_g) w`.
pub fn project_subconstraint(
    f: &DVector<f64>,
    w: &DVector<f64>,
    a_gamma: &DMatrix<f64>,
    b_gamma: &DVector<f64>,
    pinv_rtol: f64,
) -> Result<DVector<f64>, AffineError> {
    let m = f.len();
    if w.len() != m || a_gamma.ncols() != m || a_gamma.nrows() != b_gamma.len() {
        return Err(AffineError::Shape(format!(
            "f: {}, w: {}, A_gamma: {}x{}, b_gamma: {}",
            m,
            w.len(),
            a_gamma.nrows(),
            a_gamma.ncols(),
            b_gamma.len()
        )));
    }
    let a_pinv = pinv(a_gamma, pinv_rtol)?;
    let correction = &a_pinv * (a_gamma * f - b_gamma);
    let null_part = w - &a_pinv * (a_gamma * w);
    Ok(f - correction + null_part)
}

/// One subconstraint with its pseudoinverse and null-space projector cached.
#[derive(Debug, Clone)]
pub struct SubProjector {
    gamma: SubsetIndex,
    /// `A_g^+`, `m x k`.
    pinv: DMatrix<f64>,
    /// `I - A_g^+ A_g`, `m x m`.
    null: DMatrix<f64>,
}

impl SubProjector {
    pub fn new(a: &DMatrix<f64>, gamma: SubsetIndex, rtol: f64) -> Result<Self, AffineError> {
        let a_gamma = a.select_rows(gamma.indices());
        let pinv = pinv(&a_gamma, rtol)?;
        let m = a.ncols();
        let null = DMatrix::identity(m, m) - &pinv * &a_gamma;
        Ok(Self { gamma, pinv, null })
    }

    pub fn gamma(&self) -> &SubsetIndex {
        &self.gamma
    }

    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    pub fn null_projector(&self) -> &DMatrix<f64> {
        &self.null
    }

    /// Writes `(I - A_g^+ A_g)(f + w) + A_g^+ b_g` into `out`; `b` is the full offset vector.
    pub fn apply_into(&self, f_plus_w: &DVector<f64>, b: &DVector<f64>, out: &mut DVector<f64>) {
        let m = f_plus_w.len();
        let idx = self.gamma.indices();
        for r in 0..m {
            let mut acc = 0.0;
            for c in 0..m {
                acc += self.null[(r, c)] * f_plus_w[c];
            }
            for (c, &j) in idx.iter().enumerate() {
                acc += self.pinv[(r, c)] * b[j];
            }
            out[r] = acc;
        }
    }

    pub fn apply(&self, f: &DVector<f64>, w: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(f.len());
        self.apply_into(&(f + w), b, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionCandidate {
    pub gamma: SubsetIndex,
    pub value: DVector<f64>,
    pub feasible: bool,
    /// `|value - f|_p`.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// `f` was already feasible and is returned unchanged.
    Passthrough,
    /// The closest feasible candidate; `candidate` indexes the subset list.
    Projected { candidate: usize, gamma: SubsetIndex },
}

/// Which branch of the selection fired, recorded for gradient routing and audits.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    pub branch: Branch,
    /// Number of feasible candidates found (zero on passthrough, where none are evaluated).
    pub feasible_count: usize,
    /// Distance from `f` to the returned output.
    pub distance: f64,
    /// Fingerprint of the constraint set the selection was made against.
    pub fingerprint: u64,
}

impl SelectionTrace {
    pub fn is_passthrough(&self) -> bool {
        matches!(self.branch, Branch::Passthrough)
    }
}

/// Subconstraint projectors for one normal matrix `A(x)`; offsets may vary.
#[derive(Debug, Clone)]
pub struct PreparedProjection {
    a: DMatrix<f64>,
    projectors: Vec<SubProjector>,
}

impl PreparedProjection {
    pub fn new(a: &DMatrix<f64>, subsets: &[SubsetIndex], rtol: f64) -> Result<Self, AffineError> {
        if let Some(bad) = subsets.iter().find(|g| g.indices().iter().any(|&j| j >= a.nrows())) {
            return Err(AffineError::Shape(format!(
                "subset {bad} out of range for {} rows",
                a.nrows()
            )));
        }
        let projectors = subsets
            .iter()
            .map(|g| SubProjector::new(a, g.clone(), rtol))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { a: a.clone(), projectors })
    }

    pub fn projectors(&self) -> &[SubProjector] {
        &self.projectors
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.a
    }

    fn check(&self, f: &DVector<f64>, w: &DVector<f64>, cs: &AffineConstraintSet) -> Result<(), AffineError> {
        if cs.a().shape() != self.a.shape() || f.len() != cs.dim() || w.len() != cs.dim() {
            return Err(AffineError::Shape(format!(
                "prepared for {:?}, got constraints {}x{}, f: {}, w: {}",
                self.a.shape(),
                cs.n_rows(),
                cs.dim(),
                f.len(),
                w.len()
            )));
        }
        debug_assert!(cs.a() == &self.a, "constraint normals differ from the prepared ones");
        Ok(())
    }

    pub fn candidates(
        &self,
        f: &DVector<f64>,
        w: &DVector<f64>,
        cs: &AffineConstraintSet,
        cfg: &SelectorConfig,
    ) -> Result<Vec<ProjectionCandidate>, AffineError> {
        self.check(f, w, cs)?;
        let fw = f + w;
        Ok(self
            .projectors
            .iter()
            .map(|proj| {
                let mut value = DVector::zeros(f.len());
                proj.apply_into(&fw, cs.b(), &mut value);
                ProjectionCandidate {
                    gamma: proj.gamma.clone(),
                    feasible: cs.is_feasible(&value, cfg.feas_tol),
                    distance: lp_distance(&value, f, cfg.norm_p),
                    value,
                }
            })
            .collect())
    }

    pub fn select(
        &self,
        f: &DVector<f64>,
        w: &DVector<f64>,
        cs: &AffineConstraintSet,
        cfg: &SelectorConfig,
    ) -> Result<(DVector<f64>, SelectionTrace), AffineError> {
        self.check(f, w, cs)?;
        let fingerprint = cs.fingerprint();
        if cs.is_feasible(f, cfg.feas_tol) {
            let trace = SelectionTrace {
                branch: Branch::Passthrough,
                feasible_count: 0,
                distance: 0.0,
                fingerprint,
            };
            return Ok((f.clone(), trace));
        }
        let fw = f + w;
        let mut scratch = DVector::zeros(f.len());
        let mut best: Option<(usize, f64)> = None;
        let mut best_value = DVector::zeros(f.len());
        let mut feasible_count = 0;
        for (i, proj) in self.projectors.iter().enumerate() {
            proj.apply_into(&fw, cs.b(), &mut scratch);
            if !cs.is_feasible(&scratch, cfg.feas_tol) {
                continue;
            }
            feasible_count += 1;
            let d = lp_distance(&scratch, f, cfg.norm_p);
            let better = match best {
                None => true,
                Some((j, bd)) => {
                    d < bd - TIE_TOLERANCE
                        || ((d - bd).abs() <= TIE_TOLERANCE
                            && proj.gamma < self.projectors[j].gamma)
                }
            };
            if better {
                best = Some((i, d));
                best_value.copy_from(&scratch);
            }
        }
        match best {
            None => Err(AffineError::NoFeasibleCandidate { candidates: self.projectors.len() }),
            Some((i, d)) => Ok((
                best_value,
                SelectionTrace {
                    branch: Branch::Projected { candidate: i, gamma: self.projectors[i].gamma.clone() },
                    feasible_count,
                    distance: d,
                    fingerprint,
                },
            )),
        }
    }
}

/// Evaluates every subconstraint projection in `subsets` and flags feasibility.
pub fn feasible_candidates(
    f: &DVector<f64>,
    w: &DVector<f64>,
    cs: &AffineConstraintSet,
    subsets: &[SubsetIndex],
    cfg: &SelectorConfig,
) -> Result<Vec<ProjectionCandidate>, AffineError> {
    PreparedProjection::new(cs.a(), subsets, cfg.pinv_rtol)?.candidates(f, w, cs, cfg)
}

/// Returns `f` when feasible, otherwise the feasible candidate closest to `f`.
pub fn select_output(
    f: &DVector<f64>,
    w: &DVector<f64>,
    cs: &AffineConstraintSet,
    subsets: &[SubsetIndex],
    cfg: &SelectorConfig,
) -> Result<(DVector<f64>, SelectionTrace), AffineError> {
    PreparedProjection::new(cs.a(), subsets, cfg.pinv_rtol)?.select(f, w, cs, cfg)
}

/// No constraint row is active at the target point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("target point is not on the boundary of the constraint set")]
pub struct NotOnBoundary;

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub gamma: SubsetIndex,
    /// Null-space input that reproduces the target, `y* - f`.
    pub null_input: DVector<f64>,
    pub value: DVector<f64>,
}

/// Reproduces a boundary point `y_star` through a single-row candidate.
///
/// Picks the first row with `|a_j y* - b_j| <= active_tol`, sets `w = y* - f`
/// and projects onto that row. The result equals `y_star` up to rounding.
pub fn recover_target(
    f: &DVector<f64>,
    y_star: &DVector<f64>,
    cs: &AffineConstraintSet,
    active_tol: f64,
) -> Result<Recovery, NotOnBoundary> {
    let j = (0..cs.n_rows())
        .find(|&j| cs.row_residual(j, y_star).abs() <= active_tol)
        .ok_or(NotOnBoundary)?;
    let gamma = SubsetIndex::single(j);
    let (a_j, b_j) = cs.select_rows(&gamma);
    let null_input = y_star - f;
    let value = project_subconstraint(f, &null_input, &a_j, &b_j, DEFAULT_PINV_RTOL)
        .expect("single finite row always projects");
    Ok(Recovery { gamma, null_input, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::{enumerate_subsets_full, enumerate_subsets_lite};
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn unit_box_2d() -> AffineConstraintSet {
        AffineConstraintSet::from_rows(
            &[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]],
            &[1.0, 1.0, 1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn projection_onto_a_face() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let out = project_subconstraint(&v(&[2.0, 0.0]), &v(&[0.0, 0.0]), &a, &v(&[0.0]), 1e-10).unwrap();
        assert_relative_eq!(out, v(&[0.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn null_space_term_moves_along_the_face() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let out = project_subconstraint(&v(&[2.0, 0.0]), &v(&[0.0, 3.0]), &a, &v(&[0.0]), 1e-10).unwrap();
        assert_relative_eq!(out, v(&[0.0, 3.0]), epsilon = 1e-15);
    }

    #[test]
    fn point_on_hyperplane_is_fixed() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]);
        let f = v(&[1.0, 0.25, 2.0]);
        let b = &a * &f;
        let out = project_subconstraint(&f, &DVector::zeros(3), &a, &b, 1e-10).unwrap();
        assert_relative_eq!(out, f, epsilon = 1e-14);
    }

    #[test]
    fn both_projection_forms_agree() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        let cs = AffineConstraintSet::new(a.clone(), v(&[0.5, -1.0])).unwrap();
        let gamma = SubsetIndex::new(vec![0, 1]).unwrap();
        let f = v(&[0.3, -2.0, 1.0]);
        let w = v(&[1.0, 1.0, -0.5]);
        let direct = project_subconstraint(&f, &w, &a, cs.b(), 1e-10).unwrap();
        let cached = SubProjector::new(&a, gamma, 1e-10).unwrap().apply(&f, &w, cs.b());
        assert_relative_eq!(direct, cached, epsilon = 1e-12);
    }

    #[test]
    fn box_candidates_from_interior_point() {
        let cs = unit_box_2d();
        let subsets = enumerate_subsets_lite(4, 2);
        let f = v(&[0.5, 0.5]);
        let w = v(&[0.3, -0.7]);
        let cands = feasible_candidates(&f, &w, &cs, &subsets, &SelectorConfig::default()).unwrap();
        assert_eq!(cands.len(), subsets.len());
        for c in cands.iter().filter(|c| c.gamma.order() == 1) {
            let j = c.gamma.indices()[0];
            assert!(cs.row_residual(j, &c.value).abs() < 1e-12);
        }
        assert!(cands.iter().any(|c| c.feasible));
    }

    #[test]
    fn empty_polytope_has_no_feasible_candidate() {
        // u <= -1 and -u <= 0 cannot both hold.
        let cs = AffineConstraintSet::from_rows(&[&[1.0], &[-1.0]], &[-1.0, 0.0]).unwrap();
        let subsets = enumerate_subsets_lite(2, 1);
        let cfg = SelectorConfig::default();
        let cands = feasible_candidates(&v(&[3.0]), &v(&[0.0]), &cs, &subsets, &cfg).unwrap();
        assert!(cands.iter().all(|c| !c.feasible));
        let err = select_output(&v(&[3.0]), &v(&[0.0]), &cs, &subsets, &cfg).unwrap_err();
        assert!(matches!(err, AffineError::NoFeasibleCandidate { candidates: 2 }));
    }

    #[test]
    fn feasible_input_passes_through() {
        let cs = unit_box_2d();
        let subsets = enumerate_subsets_lite(4, 2);
        let f = v(&[0.2, -0.9]);
        let (out, trace) =
            select_output(&f, &v(&[5.0, 5.0]), &cs, &subsets, &SelectorConfig::default()).unwrap();
        assert_eq!(out, f);
        assert!(trace.is_passthrough());
    }

    #[test]
    fn single_halfspace_gives_euclidean_projection() {
        let cs = AffineConstraintSet::from_rows(&[&[1.0, 0.0]], &[0.0]).unwrap();
        let subsets = enumerate_subsets_lite(1, 2);
        let (out, trace) =
            select_output(&v(&[1.0, 0.0]), &v(&[0.0, 0.0]), &cs, &subsets, &SelectorConfig::default()).unwrap();
        assert_relative_eq!(out, v(&[0.0, 0.0]), epsilon = 1e-15);
        assert_eq!(
            trace.branch,
            Branch::Projected { candidate: 0, gamma: SubsetIndex::single(0) }
        );
    }

    #[test]
    fn ties_go_to_lowest_index_tuple() {
        // f = (2, 2) outside the unit box: projections onto x <= 1 and y <= 1 are
        // both infeasible, the vertex (1, 1) is feasible; with w chosen so that
        // the two single-row candidates land on (1, 1) as well, all three tie.
        let cs = unit_box_2d();
        let subsets = enumerate_subsets_full(4, 2);
        let f = v(&[2.0, 2.0]);
        let w = v(&[-1.0, -1.0]);
        let (out, trace) = select_output(&f, &w, &cs, &subsets, &SelectorConfig::default()).unwrap();
        assert_relative_eq!(out, v(&[1.0, 1.0]), epsilon = 1e-15);
        assert_eq!(
            trace.branch,
            Branch::Projected { candidate: 0, gamma: SubsetIndex::single(0) }
        );
        assert_eq!(trace.feasible_count, 10);
    }

    #[test]
    fn max_norm_and_one_norm_distances() {
        let x = v(&[1.0, -2.0, 0.5]);
        let y = v(&[0.0, 0.0, 0.0]);
        assert_eq!(lp_distance(&x, &y, f64::INFINITY), 2.0);
        assert_eq!(lp_distance(&x, &y, 1.0), 3.5);
        assert_relative_eq!(lp_distance(&x, &y, 3.0), (1.0f64 + 8.0 + 0.125).powf(1.0 / 3.0), epsilon = 1e-14);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SelectorConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.norm_p = 0.5;
        assert!(cfg.validate().is_err());
        cfg = SelectorConfig { feas_tol: -1.0, ..SelectorConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = SelectorConfig { pinv_rtol: 0.0, ..SelectorConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn recovery_on_a_face_and_a_vertex() {
        let cs = unit_box_2d();
        let f = v(&[-3.0, 7.0]);
        let face = v(&[1.0, 0.3]);
        let rec = recover_target(&f, &face, &cs, 1e-9).unwrap();
        assert_eq!(rec.gamma, SubsetIndex::single(0));
        assert_relative_eq!(rec.value, face, epsilon = 1e-9);

        let vertex = v(&[-1.0, 1.0]);
        for j in [1, 2] {
            let (a_j, b_j) = cs.select_rows(&SubsetIndex::single(j));
            let w = &vertex - &f;
            let out = project_subconstraint(&f, &w, &a_j, &b_j, 1e-10).unwrap();
            assert_relative_eq!(out, vertex, epsilon = 1e-9);
        }
        assert_eq!(recover_target(&f, &vertex, &cs, 1e-9).unwrap().gamma, SubsetIndex::single(1));
    }

    #[test]
    fn interior_target_is_not_on_boundary() {
        let cs = unit_box_2d();
        assert_eq!(recover_target(&v(&[0.0, 0.0]), &v(&[0.1, 0.2]), &cs, 1e-9), Err(NotOnBoundary));
    }
}
