use std::path::Path;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::cbf::{
    state_box_barriers, Barrier, ControlAffine, Dynamics, HalfspaceBarrier, InputPolytope, LieRule, SmoothUnion,
};

/// A closed-loop control problem: dynamics, constraints, nominal controller
/// and simulation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub dynamics: Dynamics,
    pub input: InputPolytope,
    /// Obstacles first, then state limits, then extra halfspaces.
    pub barriers: Vec<Barrier>,
    pub barrier_names: Vec<String>,
    pub k_p: f64,
    pub goal: DVector<f64>,
    /// Sampling box for training states; also the state limits.
    pub state_lo: DVector<f64>,
    pub state_hi: DVector<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub kappa: f64,
    pub lie_rule: LieRule,
    /// Canonical rollout start states.
    pub starts: Vec<DVector<f64>>,
}

impl Scenario {
    pub fn state_dim(&self) -> usize {
        self.goal.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input.dim()
    }

    /// Number of Euler steps in one rollout.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn barrier_values(&self, x: &DVector<f64>) -> Vec<f64> {
        self.barriers.iter().map(|b| b.value(x)).collect()
    }

    pub fn is_safe(&self, x: &DVector<f64>) -> bool {
        self.barriers.iter().all(|b| b.value(x) >= 0.0)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        file.build()
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SimError::Config(msg) => SimError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// `u_nom = k_p (goal - x)`, saturated onto the input set.
pub fn nominal_control(scenario: &Scenario, x: &DVector<f64>) -> DVector<f64> {
    let raw = (&scenario.goal - x) * scenario.k_p;
    super::saturate(&scenario.input, &raw)
}

/// Rejection sampling from the state box, keeping states where every barrier is non-negative.
pub fn sample_safe_states(scenario: &Scenario, count: usize, seed: u64) -> Result<Vec<DVector<f64>>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = scenario.state_dim();
    let mut out = Vec::with_capacity(count);
    let mut drawn: u64 = 0;
    while out.len() < count {
        let x = DVector::from_fn(n, |i, _| rng.random_range(scenario.state_lo[i]..=scenario.state_hi[i]));
        drawn += 1;
        if scenario.is_safe(&x) {
            out.push(x);
        }
        // Abort once the acceptance ratio is clearly below 1 in 1000.
        if drawn >= 10_000 && (out.len() as u64) * 1000 < drawn {
            return Err(SimError::Sampling { drawn, accepted: out.len() as u64 });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsSpec {
    SingleIntegrator { state_dim: usize },
    /// `x' = drift x + input u`, matrices given row by row.
    Linear { drift: Vec<Vec<f64>>, input: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `p u <= q`, rows given one by one.
    Polytope { p: Vec<Vec<f64>>, q: Vec<f64> },
    Unconstrained { dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleSpec {
    /// Convex polygon, vertices counter-clockwise.
    Polygon { vertices: Vec<[f64; 2]> },
    /// Edges `h_i(x) = normal_i . x - offset_i`; the obstacle is where all are negative.
    Halfspaces { normals: Vec<Vec<f64>>, offsets: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceSpec {
    pub normal: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn default_true() -> bool {
    true
}

/// On-disk scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub dt: f64,
    pub horizon: f64,
    pub kappa: f64,
    pub k_p: f64,
    pub goal: Vec<f64>,
    #[serde(default)]
    pub lie_rule: LieRule,
    /// Add `hi - x >= 0` and `x - lo >= 0` as barriers.
    #[serde(default = "default_true")]
    pub state_limits_as_barriers: bool,
    #[serde(default)]
    pub starts: Vec<Vec<f64>>,
    pub dynamics: DynamicsSpec,
    pub input: InputSpec,
    pub state_box: BoxSpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub halfspaces: Vec<HalfspaceSpec>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, SimError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(SimError::Config(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
}

impl ScenarioFile {
    pub fn build(&self) -> Result<Scenario, SimError> {
        let bad = |msg: String| SimError::Config(msg);
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(bad(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(bad(format!("horizon must be at least dt, got {}", self.horizon)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(bad(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !self.k_p.is_finite() {
            return Err(bad("k_p must be finite".into()));
        }
        let dynamics = match &self.dynamics {
            DynamicsSpec::SingleIntegrator { state_dim } => Dynamics::SingleIntegrator { dim: *state_dim },
            DynamicsSpec::Linear { drift, input } => {
                Dynamics::linear(matrix(drift, "dynamics.drift")?, matrix(input, "dynamics.input")?)?
            }
        };
        let n = dynamics.state_dim();
        let m = dynamics.input_dim();
        let input = match &self.input {
            InputSpec::Box { lo, hi } => InputPolytope::boxed(lo, hi)?,
            InputSpec::Polytope { p, q } => InputPolytope::new(matrix(p, "input.p")?, DVector::from_column_slice(q))?,
            InputSpec::Unconstrained { dim } => InputPolytope::unconstrained(*dim),
        };
        if input.dim() != m {
            return Err(bad(format!("input set acts on {} inputs, dynamics have {m}", input.dim())));
        }
        if self.goal.len() != n {
            return Err(bad(format!("goal has length {}, state dimension is {n}", self.goal.len())));
        }
        let BoxSpec { lo, hi } = &self.state_box;
        if lo.len() != n || hi.len() != n || lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
            return Err(bad(format!("state_box must have {n} strictly increasing bounds")));
        }

        let mut barriers = Vec::new();
        let mut names = Vec::new();
        for (i, obs) in self.obstacles.iter().enumerate() {
            let union = match obs {
                ObstacleSpec::Polygon { vertices } => {
                    if n != 2 {
                        return Err(bad("polygon obstacles need a 2-dimensional state".into()));
                    }
                    SmoothUnion::from_polygon(vertices, self.kappa)?
                }
                ObstacleSpec::Halfspaces { normals, offsets } => {
                    if normals.len() != offsets.len() || normals.is_empty() {
                        return Err(bad(format!("obstacle {i}: need one offset per normal")));
                    }
                    let edges = normals
                        .iter()
                        .zip(offsets)
                        .map(|(a, &c)| HalfspaceBarrier::new(DVector::from_column_slice(a), c))
                        .collect::<Result<Vec<_>, _>>()?;
                    SmoothUnion::new(edges, self.kappa)?
                }
            };
            if union.dim() != n {
                return Err(bad(format!("obstacle {i} has dimension {}, state has {n}", union.dim())));
            }
            barriers.push(Barrier::SmoothUnion(union));
            names.push(format!("obstacle_{}", i + 1));
        }
        if self.state_limits_as_barriers {
            for (k, wall) in state_box_barriers(lo, hi)?.into_iter().enumerate() {
                barriers.push(Barrier::Halfspace(wall));
                let (side, axis) = if k % 2 == 0 { ("hi", k / 2) } else { ("lo", k / 2) };
                names.push(format!("x{}_{side}", axis + 1));
            }
        }
        for (i, hs) in self.halfspaces.iter().enumerate() {
            let wall = HalfspaceBarrier::new(DVector::from_column_slice(&hs.normal), hs.offset)?;
            if wall.dim() != n {
                return Err(bad(format!("halfspace {i} has dimension {}, state has {n}", wall.dim())));
            }
            barriers.push(Barrier::Halfspace(wall));
            names.push(format!("halfspace_{}", i + 1));
        }
        let starts = self
            .starts
            .iter()
            .map(|s| {
                if s.len() == n {
                    Ok(DVector::from_column_slice(s))
                } else {
                    Err(bad(format!("start {s:?} has the wrong dimension")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Scenario {
            name: self.name.clone(),
            dynamics,
            input,
            barriers,
            barrier_names: names,
            k_p: self.k_p,
            goal: DVector::from_column_slice(&self.goal),
            state_lo: DVector::from_column_slice(lo),
            state_hi: DVector::from_column_slice(hi),
            dt: self.dt,
            horizon: self.horizon,
            kappa: self.kappa,
            lie_rule: self.lie_rule,
            starts,
        })
    }
}

/// Vertex lists of the three default obstacles (counter-clockwise).
pub const SINGLE_INTEGRATOR_OBSTACLES: [&[[f64; 2]]; 3] = [
    &[[-3.6, -2.4], [-2.6, -2.4], [-2.6, -1.4], [-3.6, -1.4]],
    &[[-2.2, -3.4], [-1.0, -3.1], [-1.8, -2.2]],
    &[[-1.2, -1.0], [-0.5, -1.3], [-0.2, -0.6], [-0.9, -0.3]],
];

/// Planar single integrator with three polygonal obstacles.
pub fn single_integrator_file() -> ScenarioFile {
    ScenarioFile {
        name: "single_integrator".into(),
        dt: 0.01,
        horizon: 10.0,
        kappa: 10.0,
        k_p: 2.0,
        goal: vec![0.0, 0.0],
        lie_rule: LieRule::Analytic,
        state_limits_as_barriers: true,
        starts: vec![vec![-4.5, -3.5], vec![-4.5, 1.0], vec![0.5, -3.5]],
        dynamics: DynamicsSpec::SingleIntegrator { state_dim: 2 },
        input: InputSpec::Box { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] },
        state_box: BoxSpec { lo: vec![-5.0, -4.0], hi: vec![1.0, 2.0] },
        obstacles: SINGLE_INTEGRATOR_OBSTACLES
            .iter()
            .map(|v| ObstacleSpec::Polygon { vertices: v.to_vec() })
            .collect(),
        halfspaces: Vec::new(),
    }
}

pub fn scenario_single_integrator() -> Scenario {
    single_integrator_file().build().expect("built-in scenario is valid")
}

/// Linear system with `m` inputs and exactly `n_c` constraint rows at every state.
///
/// When `n_c > 2m` the rows are `n_c - 2m` random halfspace barriers plus the
/// box `|u_i| <= 1`; otherwise all `n_c` rows are random halfspace barriers and
/// the input is unconstrained. The origin is strictly safe.
pub fn scenario_scalability(n_c: usize, m: usize, seed: u64) -> Result<Scenario, SimError> {
    if n_c == 0 || m == 0 {
        return Err(SimError::Config("n_c and m must be positive".into()));
    }
    let n = m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drift = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
    let input_matrix = DMatrix::identity(n, m) + DMatrix::from_fn(n, m, |_, _| rng.random_range(-0.3..0.3));
    let (n_barriers, input) = if n_c > 2 * m {
        (n_c - 2 * m, InputSpec::Box { lo: vec![-1.0; m], hi: vec![1.0; m] })
    } else {
        (n_c, InputSpec::Unconstrained { dim: m })
    };
    let halfspaces = (0..n_barriers)
        .map(|_| {
            let normal: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            HalfspaceSpec { normal, offset: -rng.random_range(0.5..2.0) }
        })
        .collect_vec();
    let file = ScenarioFile {
        name: format!("scalability_nc{n_c}_m{m}"),
        dt: 0.01,
        horizon: 1.0,
        kappa: 10.0,
        k_p: 1.0,
        goal: vec![0.0; n],
        lie_rule: LieRule::Analytic,
        state_limits_as_barriers: false,
        starts: Vec::new(),
        dynamics: DynamicsSpec::Linear {
            drift: drift.row_iter().map(|r| r.iter().copied().collect()).collect(),
            input: input_matrix.row_iter().map(|r| r.iter().copied().collect()).collect(),
        },
        input,
        state_box: BoxSpec { lo: vec![-0.2; n], hi: vec![0.2; n] },
        obstacles: Vec::new(),
        halfspaces,
    };
    file.build()
}
