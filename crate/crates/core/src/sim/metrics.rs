use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::affine::AffineConstraintSet;
use crate::nn::loss_mse;

/// Residuals at or below this count as satisfied when computing `viol_pct`;
/// projections land on the boundary up to rounding.
pub const VIOLATION_TOL: f64 = 1e-9;

/// One method evaluated once (one seed).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RolloutMetrics {
    /// Mean over samples of the MSE between output and nominal command.
    pub cost: f64,
    /// Largest entry of `ReLU(A u - b)` over samples and rows.
    pub viol_max: f64,
    /// Mean entry of `ReLU(A u - b)` over samples and rows.
    pub viol_mean: f64,
    /// Percentage of samples with any entry above [`VIOLATION_TOL`].
    pub viol_pct: f64,
    pub t_train_ms: f64,
    pub t_test_s: f64,
}

pub fn compute_metrics(
    outputs: &[DVector<f64>],
    constraints: &[AffineConstraintSet],
    labels: &[DVector<f64>],
    t_train_ms: f64,
    t_test_s: f64,
) -> Result<RolloutMetrics, SimError> {
    if outputs.len() != constraints.len() || outputs.len() != labels.len() || outputs.is_empty() {
        return Err(SimError::Config(format!(
            "misaligned metric inputs: {} outputs, {} constraint sets, {} labels",
            outputs.len(),
            constraints.len(),
            labels.len()
        )));
    }
    let mut cost = 0.0;
    let mut viol_max: f64 = 0.0;
    let mut viol_sum = 0.0;
    let mut entries = 0usize;
    let mut violating = 0usize;
    for ((u, cs), label) in outputs.iter().zip(constraints).zip(labels) {
        cost += loss_mse(u, label);
        let mut any = false;
        for j in 0..cs.n_rows() {
            let r = cs.row_residual(j, u).max(0.0);
            viol_max = viol_max.max(r);
            viol_sum += r;
            any |= r > VIOLATION_TOL;
        }
        entries += cs.n_rows();
        violating += usize::from(any);
    }
    let count = outputs.len() as f64;
    Ok(RolloutMetrics {
        cost: cost / count,
        viol_max,
        viol_mean: if entries == 0 { 0.0 } else { viol_sum / entries as f64 },
        viol_pct: 100.0 * violating as f64 / count,
        t_train_ms,
        t_test_s,
    })
}

/// Mean and sample standard deviation of every metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: RolloutMetrics,
    pub std: RolloutMetrics,
}

fn fields(m: &RolloutMetrics) -> [f64; 6] {
    [m.cost, m.viol_max, m.viol_mean, m.viol_pct, m.t_train_ms, m.t_test_s]
}

fn from_fields(f: [f64; 6]) -> RolloutMetrics {
    RolloutMetrics { cost: f[0], viol_max: f[1], viol_mean: f[2], viol_pct: f[3], t_train_ms: f[4], t_test_s: f[5] }
}

pub fn aggregate(runs: &[RolloutMetrics]) -> MetricSummary {
    if runs.is_empty() {
        return MetricSummary::default();
    }
    let n = runs.len() as f64;
    let mut mean = [0.0; 6];
    for r in runs {
        for (acc, v) in mean.iter_mut().zip(fields(r)) {
            *acc += v / n;
        }
    }
    let mut var = [0.0; 6];
    if runs.len() > 1 {
        for r in runs {
            for ((acc, v), mu) in var.iter_mut().zip(fields(r)).zip(mean) {
                *acc += (v - mu).powi(2) / (n - 1.0);
            }
        }
    }
    MetricSummary { mean: from_fields(mean), std: from_fields(var.map(f64::sqrt)) }
}

fn format_value(v: f64) -> String {
    if v == 0.0 || (0.01..1e5).contains(&v.abs()) {
        format!("{v:.2}")
    } else {
        format!("{v:.2e}")
    }
}

/// `main(std)`.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{}({})", format_value(mean), format_value(std))
}

/// Percentages keep their unit: `2.67%(1.35%)`.
pub fn format_pct_cell(mean: f64, std: f64) -> String {
    format!("{mean:.2}%({std:.2}%)")
}

pub const METRIC_COLUMNS: [&str; 6] = ["cost", "viol_max", "viol_mean", "viol_pct", "t_train_ms", "t_test_s"];

/// One row per method and seed: `method, seed, cost, viol_max, viol_mean, viol_pct, t_train_ms, t_test_s`.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[(String, u64, RolloutMetrics)]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["method", "seed"];
    header.extend(METRIC_COLUMNS);
    w.write_record(&header)?;
    for (method, seed, m) in rows {
        let mut rec = vec![method.clone(), seed.to_string()];
        rec.extend(fields(m).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| SimError::Io(e.to_string()))?;
    Ok(())
}

/// One row per method with `main(std)` cells in the same column order.
pub fn write_summary_csv<W: Write>(out: W, rows: &[(String, MetricSummary)]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["method"];
    header.extend(METRIC_COLUMNS);
    w.write_record(&header)?;
    for (method, s) in rows {
        let mut rec = vec![method.clone()];
        for (k, (mu, sd)) in fields(&s.mean).into_iter().zip(fields(&s.std)).enumerate() {
            rec.push(if k == 3 { format_pct_cell(mu, sd) } else { format_cell(mu, sd) });
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| SimError::Io(e.to_string()))?;
    Ok(())
}
