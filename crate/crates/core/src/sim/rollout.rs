use std::io::Write;

use nalgebra::DVector;

use super::scenario::{nominal_control, Scenario};
use super::{saturate, SimError};
use crate::affine::AffineConstraintSet;
use crate::cbf::{cbf_rows, CbfRows, ControlAffine};
use crate::nn::Policy;
use crate::qp::{od_qp_filter, project_onto, OdQpConfig};

/// A control decision and the constraint set it answers to, if any.
#[derive(Debug, Clone)]
pub struct Action {
    pub u: DVector<f64>,
    pub constraints: Option<AffineConstraintSet>,
}

/// State feedback evaluated once per step.
pub trait Controller: Sync {
    fn act(&self, scenario: &Scenario, x: &DVector<f64>, u_nom: &DVector<f64>) -> Result<Action, SimError>;
}

fn rows_at(scenario: &Scenario, x: &DVector<f64>) -> Result<CbfRows, SimError> {
    Ok(cbf_rows(x, &scenario.barriers, &scenario.input, &scenario.dynamics, scenario.lie_rule)?)
}

/// Applies the nominal command unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct NominalController;

impl Controller for NominalController {
    fn act(&self, _: &Scenario, _: &DVector<f64>, u_nom: &DVector<f64>) -> Result<Action, SimError> {
        Ok(Action { u: u_nom.clone(), constraints: None })
    }
}

/// Always zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroController;

impl Controller for ZeroController {
    fn act(&self, scenario: &Scenario, _: &DVector<f64>, _: &DVector<f64>) -> Result<Action, SimError> {
        Ok(Action { u: DVector::zeros(scenario.input_dim()), constraints: None })
    }
}

/// CBF-QP safety filter with `alpha(h) = omega * h`.
#[derive(Debug, Clone, Copy)]
pub struct QpController {
    pub omega: f64,
}

impl Controller for QpController {
    fn act(&self, scenario: &Scenario, x: &DVector<f64>, u_nom: &DVector<f64>) -> Result<Action, SimError> {
        let cs = rows_at(scenario, x)?.constraint_set(self.omega)?;
        let u = project_onto(u_nom, &cs)?;
        Ok(Action { u, constraints: Some(cs) })
    }
}

/// Optimal-decay CBF-QP; constraints are reported with the chosen decays.
#[derive(Debug, Clone, Copy)]
pub struct OdQpController {
    pub cfg: OdQpConfig,
}

impl Controller for OdQpController {
    fn act(&self, scenario: &Scenario, x: &DVector<f64>, u_nom: &DVector<f64>) -> Result<Action, SimError> {
        let sol = od_qp_filter(x, u_nom, &scenario.barriers, &self.cfg, &scenario.input, &scenario.dynamics, scenario.lie_rule)?;
        Ok(Action { u: sol.u, constraints: Some(sol.constraints) })
    }
}

impl Controller for Policy {
    fn act(&self, scenario: &Scenario, x: &DVector<f64>, _: &DVector<f64>) -> Result<Action, SimError> {
        let out = Policy::act(self, x, &rows_at(scenario, x)?)?;
        Ok(Action { u: out.u, constraints: Some(out.constraints) })
    }
}

/// One closed-loop run. State-indexed fields have `steps + 1` entries, the
/// rest `steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Controls actually applied, after saturation.
    pub controls: Vec<DVector<f64>>,
    pub nominal: Vec<DVector<f64>>,
    /// Barrier values at each recorded state.
    pub barrier_values: Vec<Vec<f64>>,
    /// `max_j ReLU(a_j u - b_j)` of the raw controller output; NaN when the
    /// controller reports no constraints.
    pub residuals: Vec<f64>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// Smallest barrier value over every recorded state.
    pub fn min_barrier(&self) -> f64 {
        self.barrier_values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Columns `t, x.., u.., u_nom.., h.., r_max`; the last row has no control.
    pub fn write_csv<W: Write>(&self, out: W, barrier_names: &[String]) -> Result<(), SimError> {
        let n = self.states[0].len();
        let m = self.controls.first().map_or(0, |u| u.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend((1..=m).map(|i| format!("u_nom{i}")));
        header.extend(barrier_names.iter().map(|s| format!("h_{s}")));
        header.push("r_max".into());
        w.write_record(&header)?;
        for k in 0..self.states.len() {
            let mut row = vec![self.times[k].to_string()];
            row.extend(self.states[k].iter().map(f64::to_string));
            if k < self.steps() {
                row.extend(self.controls[k].iter().map(f64::to_string));
                row.extend(self.nominal[k].iter().map(f64::to_string));
            } else {
                row.extend(std::iter::repeat_n(String::new(), 2 * m));
            }
            row.extend(self.barrier_values[k].iter().map(f64::to_string));
            row.push(if k < self.steps() { self.residuals[k].to_string() } else { String::new() });
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| SimError::Io(e.to_string()))?;
        Ok(())
    }
}

/// Forward Euler over `T / dt` steps with every control saturated onto the input set.
pub fn rollout(scenario: &Scenario, controller: &dyn Controller, x0: &DVector<f64>) -> Result<Trajectory, SimError> {
    if x0.len() != scenario.state_dim() {
        return Err(SimError::Config(format!("x0 has length {}, expected {}", x0.len(), scenario.state_dim())));
    }
    let steps = scenario.steps();
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps),
        nominal: Vec::with_capacity(steps),
        barrier_values: Vec::with_capacity(steps + 1),
        residuals: Vec::with_capacity(steps),
    };
    let mut x = x0.clone();
    for k in 0..=steps {
        traj.times.push(k as f64 * scenario.dt);
        traj.barrier_values.push(scenario.barrier_values(&x));
        traj.states.push(x.clone());
        if k == steps {
            break;
        }
        let u_nom = nominal_control(scenario, &x);
        let action = controller.act(scenario, &x, &u_nom)?;
        let residual = action.constraints.as_ref().map_or(f64::NAN, |cs| cs.max_residual(&action.u).max(0.0));
        let u = saturate(&scenario.input, &action.u);
        x += scenario.dynamics.velocity(&x, &u) * scenario.dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteState { step: k + 1 });
        }
        traj.controls.push(u);
        traj.nominal.push(u_nom);
        traj.residuals.push(residual);
    }
    Ok(traj)
}
