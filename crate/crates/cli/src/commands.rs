//! The five verbs. Each takes a validated [`RunConfig`] and writes under `cfg.out`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use safenet_core::affine::{full_count, lite_count, select_output, Decomposition, ProjectionLayer};
use safenet_core::cbf::cbf_rows;
use safenet_core::experiment::{evaluate_filter, evaluate_policy, seed_data, train_config_for, Method, SeedData};
use safenet_core::nn::{train, Architecture, Checkpoint, CheckpointMeta, Policy};
use safenet_core::qp::OdQpConfig;
use safenet_core::sim::{
    aggregate, rollout, sample_safe_states, scenario_scalability, write_metrics_csv, write_summary_csv, Controller,
    MetricSummary, OdQpController, QpController, RolloutMetrics, Scenario,
};

use crate::{CliError, RunConfig};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub epochs: Option<usize>,
    pub methods: Option<Vec<crate::MethodEntry>>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(m) = &self.methods {
            cfg.methods = m.clone();
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
    }
}

/// File-name form of a method: `qp(0.1)` becomes `qp_0.1`.
pub fn method_slug(m: &Method) -> String {
    m.to_string().replace('(', "_").replace(')', "")
}

pub fn checkpoint_path(dir: &Path, arch: Architecture, seed: u64) -> PathBuf {
    dir.join(format!("{}_seed{seed}.json", method_slug(&Method::Learned(arch))))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn od_config(cfg: &RunConfig, omega0: f64) -> OdQpConfig {
    OdQpConfig { omega0, penalty: cfg.od_penalty, mode: cfg.od_mode }
}

/// Runs `f` once per seed, on one thread per seed when `parallel` is set.
fn per_seed<T: Send>(
    seeds: &[u64],
    parallel: bool,
    f: impl Fn(u64) -> Result<T, CliError> + Sync,
) -> Result<Vec<T>, CliError> {
    if parallel {
        std::thread::scope(|s| {
            let f = &f;
            let handles: Vec<_> = seeds.iter().map(|&seed| s.spawn(move || f(seed))).collect();
            handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
        })
    } else {
        seeds.iter().map(|&seed| f(seed)).collect()
    }
}

fn learned_architectures(cfg: &RunConfig) -> Vec<Architecture> {
    cfg.resolved_methods().iter().filter_map(Method::architecture).collect()
}

struct TrainedRun {
    arch: Architecture,
    seed: u64,
    losses: Vec<f64>,
}

/// Trains every learned method on every seed; writes one checkpoint each and `losses.csv`.
pub fn cmd_train(cfg: &RunConfig, parallel: bool) -> Result<(), CliError> {
    let archs = learned_architectures(cfg);
    if archs.is_empty() {
        return Err(CliError::Config("no learned method selected; nothing to train".into()));
    }
    let scenario = cfg.scenario()?;
    let bench = cfg.benchmark_config();
    let train_cfg = train_config_for(&scenario, &bench.train);
    let dir = cfg.out.join("checkpoints");
    create_dir(&dir)?;
    let runs = per_seed(&cfg.seeds, parallel, |seed| {
        let data = seed_data(&scenario, cfg.samples, seed)?;
        let mut out = Vec::new();
        for &arch in &archs {
            let (policy, report) = train(arch, &data.set, &train_cfg, seed)?;
            let meta = CheckpointMeta {
                seed,
                epochs: train_cfg.epochs,
                final_loss: report.losses.last().copied(),
                ms_per_epoch: Some(report.ms_per_epoch),
            };
            let path = checkpoint_path(&dir, arch, seed);
            Checkpoint::from_policy(&policy, meta).save(&path)?;
            println!(
                "trained {} seed {seed}: final loss {:.6e}, {:.2} ms/epoch -> {}",
                Method::Learned(arch),
                report.losses.last().copied().unwrap_or(f64::NAN),
                report.ms_per_epoch,
                path.display()
            );
            out.push(TrainedRun { arch, seed, losses: report.losses });
        }
        Ok(out)
    })?;
    let mut w = csv::Writer::from_writer(create_file(&cfg.out.join("losses.csv"))?);
    w.write_record(["method", "seed", "epoch", "loss"])?;
    for run in runs.iter().flatten() {
        let name = Method::Learned(run.arch).to_string();
        for (epoch, loss) in run.losses.iter().enumerate() {
            w.write_record([name.clone(), run.seed.to_string(), (epoch + 1).to_string(), loss.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn load_policy(dir: &Path, arch: Architecture, seed: u64) -> Result<(Policy, f64), CliError> {
    let path = checkpoint_path(dir, arch, seed);
    if !path.exists() {
        return Err(CliError::Runtime(format!(
            "missing checkpoint {} for {}; run `safenet train` first",
            path.display(),
            Method::Learned(arch)
        )));
    }
    let ck = Checkpoint::load(&path)?;
    let ms = ck.meta.ms_per_epoch.unwrap_or(f64::NAN);
    Ok((ck.into_policy()?, ms))
}

fn evaluate(cfg: &RunConfig, scenario: &Scenario, data: &SeedData, method: Method, dir: &Path) -> Result<RolloutMetrics, CliError> {
    match method {
        Method::Learned(arch) => {
            let (policy, ms) = load_policy(dir, arch, data.seed)?;
            Ok(evaluate_policy(&policy, scenario, data, ms)?)
        }
        _ => Ok(evaluate_filter(method, scenario, data, &od_config(cfg, 1.0))?),
    }
}

/// Mean and std per method, in config order.
fn summarize_rows(methods: &[String], rows: &[(String, u64, RolloutMetrics)]) -> Vec<(String, MetricSummary)> {
    methods
        .iter()
        .map(|m| {
            let ms: Vec<RolloutMetrics> = rows.iter().filter(|(k, _, _)| k == m).map(|(_, _, r)| *r).collect();
            (m.clone(), aggregate(&ms))
        })
        .collect()
}

fn write_summary(out: &Path, summary: &[(String, MetricSummary)]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, summary)?;
    fs::write(out.join("summary.csv"), &buf)?;
    let table = render_table(&buf)?;
    fs::write(out.join("table.md"), &table)?;
    print!("{table}");
    Ok(())
}

/// Markdown rendering of a summary CSV.
fn render_table(summary_csv: &[u8]) -> Result<String, CliError> {
    let mut r = csv::Reader::from_reader(summary_csv);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut out = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for rec in r.records() {
        let rec = rec?;
        out.push_str(&format!("| {} |\n", rec.iter().collect::<Vec<_>>().join(" | ")));
    }
    Ok(out)
}

/// Evaluates every method on every seed; filters run directly, learned methods load checkpoints.
pub fn cmd_eval(cfg: &RunConfig, checkpoints: Option<&Path>, parallel: bool) -> Result<(), CliError> {
    let scenario = cfg.scenario()?;
    let methods = cfg.resolved_methods();
    let dir = checkpoints.map_or_else(|| cfg.out.join("checkpoints"), Path::to_path_buf);
    let per = per_seed(&cfg.seeds, parallel, |seed| {
        let data = seed_data(&scenario, cfg.samples, seed)?;
        methods
            .iter()
            .map(|&m| Ok((m.to_string(), seed, evaluate(cfg, &scenario, &data, m, &dir)?)))
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let rows: Vec<(String, u64, RolloutMetrics)> = per.into_iter().flatten().collect();
    create_dir(&cfg.out)?;
    write_metrics_csv(create_file(&cfg.out.join("metrics.csv"))?, &rows)?;
    let names: Vec<String> = methods.iter().map(Method::to_string).collect();
    write_summary(&cfg.out, &summarize_rows(&names, &rows))
}

#[derive(Debug, Deserialize)]
struct MetricRow {
    method: String,
    seed: u64,
    cost: f64,
    viol_max: f64,
    viol_mean: f64,
    viol_pct: f64,
    t_train_ms: f64,
    t_test_s: f64,
}

/// Rebuilds `summary.csv` and `table.md` from an existing `metrics.csv`.
pub fn cmd_report(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.out.join("metrics.csv");
    let file = File::open(&path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}; run `safenet eval` first", path.display())))?;
    let mut rows = Vec::new();
    let mut order: Vec<String> = Vec::new();
    for rec in csv::Reader::from_reader(file).deserialize::<MetricRow>() {
        let r = rec.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        if !order.contains(&r.method) {
            order.push(r.method.clone());
        }
        let m = RolloutMetrics {
            cost: r.cost,
            viol_max: r.viol_max,
            viol_mean: r.viol_mean,
            viol_pct: r.viol_pct,
            t_train_ms: r.t_train_ms,
            t_test_s: r.t_test_s,
        };
        rows.push((r.method, r.seed, m));
    }
    if rows.is_empty() {
        return Err(CliError::Runtime(format!("{} has no rows", path.display())));
    }
    write_summary(&cfg.out, &summarize_rows(&order, &rows))
}

fn rollout_starts(cfg: &RunConfig, scenario: &Scenario, x0: &[Vec<f64>]) -> Result<Vec<DVector<f64>>, CliError> {
    let raw: Vec<DVector<f64>> = if !x0.is_empty() {
        x0.iter().map(|v| DVector::from_column_slice(v)).collect()
    } else if !cfg.rollout.starts.is_empty() {
        cfg.rollout.starts.iter().map(|v| DVector::from_column_slice(v)).collect()
    } else {
        scenario.starts.clone()
    };
    if raw.is_empty() {
        return Err(CliError::Config("no rollout start states: pass --x0 or set rollout.starts".into()));
    }
    for x in &raw {
        if x.len() != scenario.state_dim() {
            return Err(CliError::Config(format!(
                "start state {:?} has length {}, scenario state has {}",
                x.as_slice(),
                x.len(),
                scenario.state_dim()
            )));
        }
    }
    Ok(raw)
}

/// Closed-loop runs of every method from every start state, on the first seed's checkpoints.
pub fn cmd_rollout(cfg: &RunConfig, checkpoints: Option<&Path>, x0: &[Vec<f64>]) -> Result<(), CliError> {
    let scenario = cfg.scenario()?;
    let starts = rollout_starts(cfg, &scenario, x0)?;
    let seed = cfg.seeds[0];
    let dir = checkpoints.map_or_else(|| cfg.out.join("checkpoints"), Path::to_path_buf);
    let out_dir = cfg.out.join("rollouts");
    create_dir(&out_dir)?;
    let n = scenario.state_dim();
    let mut paths = csv::Writer::from_writer(create_file(&out_dir.join("paths.csv"))?);
    let mut header = vec!["method".to_string(), "start".into(), "t".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.push("h_min".into());
    paths.write_record(&header)?;
    let mut summary = csv::Writer::from_writer(create_file(&out_dir.join("summary.csv"))?);
    summary.write_record(["method", "seed", "start", "min_h", "final_distance_to_goal"])?;

    for method in cfg.resolved_methods() {
        let policy;
        let controller: Box<dyn Controller> = match method {
            Method::Qp { omega } => Box::new(QpController { omega }),
            Method::OdQp { omega0 } => Box::new(OdQpController { cfg: od_config(cfg, omega0) }),
            Method::Learned(arch) => {
                policy = load_policy(&dir, arch, seed)?.0;
                Box::new(policy)
            }
        };
        let slug = method_slug(&method);
        for (k, x) in starts.iter().enumerate() {
            let traj = rollout(&scenario, controller.as_ref(), x)?;
            traj.write_csv(create_file(&out_dir.join(format!("{slug}_seed{seed}_start{k}.csv")))?, &scenario.barrier_names)?;
            for (t, (state, hs)) in traj.times.iter().zip(traj.states.iter().zip(&traj.barrier_values)) {
                let mut rec = vec![method.to_string(), k.to_string(), t.to_string()];
                rec.extend(state.iter().map(f64::to_string));
                rec.push(hs.iter().copied().fold(f64::INFINITY, f64::min).to_string());
                paths.write_record(&rec)?;
            }
            let dist = (traj.final_state() - &scenario.goal).norm();
            summary.write_record([method.to_string(), seed.to_string(), k.to_string(), traj.min_barrier().to_string(), dist.to_string()])?;
            println!("{method} start {k} {:?}: min h {:.3e}, final distance {dist:.4}", x.as_slice(), traj.min_barrier());
        }
    }
    paths.flush()?;
    summary.flush()?;
    Ok(())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Candidate counts and per-call selection latency for both decompositions.
pub fn cmd_bench(cfg: &RunConfig) -> Result<(), CliError> {
    let bench = &cfg.bench;
    let m = bench.m;
    let seed = cfg.seeds[0];
    let selector = cfg.benchmark_config().train.policy.selector;
    create_dir(&cfg.out)?;
    let mut w = csv::Writer::from_writer(create_file(&cfg.out.join("bench.csv"))?);
    w.write_record([
        "n_c",
        "m",
        "lite_candidates",
        "lite_closed_form",
        "full_candidates",
        "full_closed_form",
        "lite_median_us",
        "lite_p95_us",
        "full_median_us",
        "full_p95_us",
        "median_ratio",
    ])?;
    for &n_c in &bench.n_c {
        let scenario = scenario_scalability(n_c, m, seed)?;
        let states = sample_safe_states(&scenario, bench.repetitions, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cases = states
            .iter()
            .map(|x| {
                let rows = cbf_rows(x, &scenario.barriers, &scenario.input, &scenario.dynamics, scenario.lie_rule)
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                let cs = rows.constraint_set(1.0).map_err(|e| CliError::Runtime(e.to_string()))?;
                let f = DVector::from_fn(m, |_, _| rng.random_range(-5.0..5.0));
                Ok((cs, f))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let w0 = DVector::zeros(m);
        let latency = |kind: Decomposition| -> Result<(usize, Vec<f64>), CliError> {
            let layer = ProjectionLayer::new(kind, selector).map_err(|e| CliError::Config(e.to_string()))?;
            let rows = cases[0].0.n_rows();
            let subsets = layer.subsets(rows, m);
            let mut times: Vec<f64> = cases
                .iter()
                .map(|(cs, f)| {
                    let t = Instant::now();
                    let out = select_output(f, &w0, cs, &subsets, &selector);
                    let dt = t.elapsed().as_secs_f64() * 1e6;
                    std::hint::black_box(out).ok();
                    dt
                })
                .collect();
            times.sort_by(f64::total_cmp);
            Ok((subsets.len(), times))
        };
        let (lite_n, lite_t) = latency(Decomposition::Lite)?;
        let (full_n, full_t) = latency(Decomposition::Full)?;
        let rows = cases[0].0.n_rows();
        let (lm, fm) = (percentile(&lite_t, 0.5), percentile(&full_t, 0.5));
        w.write_record([
            rows.to_string(),
            m.to_string(),
            lite_n.to_string(),
            lite_count(rows, m).to_string(),
            full_n.to_string(),
            full_count(rows, m).to_string(),
            format!("{lm:.3}"),
            format!("{:.3}", percentile(&lite_t, 0.95)),
            format!("{fm:.3}"),
            format!("{:.3}", percentile(&full_t, 0.95)),
            format!("{:.3}", fm / lm),
        ])?;
        println!("n_c={rows} m={m}: lite {lite_n} candidates {lm:.2} us, full {full_n} candidates {fm:.2} us");
    }
    w.flush()?;
    Ok(())
}

/// Writes the config after overrides next to the outputs.
pub fn write_resolved_config(cfg: &RunConfig) -> Result<(), CliError> {
    create_dir(&cfg.out)?;
    let mut f = create_file(&cfg.out.join("config.resolved.toml"))?;
    f.write_all(cfg.to_toml_string()?.as_bytes())?;
    f.flush()?;
    Ok(())
}
