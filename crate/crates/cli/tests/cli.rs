use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use safenet_cli::RunConfig;

fn safenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safenet")).args(args).output().expect("spawn safenet")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

const TINY: &str = r#"
methods = ["caffnet_lite"]
seeds = [0, 1]
samples = 20
[train]
epochs = 5
"#;

#[test]
fn train_writes_one_checkpoint_per_seed_and_a_loss_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), TINY);
    let o = safenet(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for seed in [0, 1] {
        assert!(out.join(format!("checkpoints/caffnet_lite_seed{seed}.json")).exists());
    }
    let rows = csv_rows(&out.join("losses.csv"));
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r[0] == "caffnet_lite" && r[3].parse::<f64>().unwrap().is_finite()));
    assert!(out.join("config.resolved.toml").exists());
}

#[test]
fn training_is_deterministic_given_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let mut logs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = safenet(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"]);
        assert!(o.status.success(), "{}", stderr(&o));
        logs.push(fs::read_to_string(out.join("losses.csv")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn eval_runs_filters_without_checkpoints_and_report_rebuilds_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = safenet(&[
        "eval", "--method", "qp(0.1)", "--method", "od_qp(10)", "--seeds", "0,1", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[5] == "0"), "filters never violate: {rows:?}");
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,cost,viol_max,viol_mean,viol_pct,t_train_ms,t_test_s"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("| qp(0.1) |"));

    fs::remove_file(out.join("summary.csv")).unwrap();
    let o = safenet(&["report", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap(), summary);
}

#[test]
fn eval_after_train_covers_learned_methods() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), TINY);
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    assert!(safenet(&["train", "--config", c, "--out", o]).status.success());
    let e = safenet(&["eval", "--config", c, "--out", o, "--method", "caffnet_lite", "--method", "qp(10)"]);
    assert!(e.status.success(), "{}", stderr(&e));
    let rows = csv_rows(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 4);
    let lite: Vec<_> = rows.iter().filter(|r| r[0] == "caffnet_lite").collect();
    assert_eq!(lite.len(), 2);
    assert!(lite.iter().all(|r| r[5] == "0" && r[6].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = safenet(&["eval", "--method", "caffnet", "--seed", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("missing checkpoint"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let no_seeds = write_config(dir.path(), "seeds = []\n");
    let o = safenet(&["eval", "--config", no_seeds.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seeds"));

    let typo = write_config(dir.path(), "seeds = [0]\nsample = 10\n");
    let o = safenet(&["eval", "--config", typo.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let o = safenet(&["train", "--method", "qp(1)", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "nothing to train");
}

#[test]
fn unknown_method_is_a_usage_error() {
    let o = safenet(&["eval", "--method", "mpc"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown method"));
}

#[test]
fn rollout_writes_trajectories_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = safenet(&["rollout", "--method", "qp(10)", "--x0", "-4.5,1.0", "--x0", "0.5,-3.5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let traj = csv_rows(&out.join("rollouts/qp_10_seed0_start0.csv"));
    assert_eq!(traj.len(), 1001);
    let summary = csv_rows(&out.join("rollouts/summary.csv"));
    assert_eq!(summary.len(), 2);
    for r in &summary {
        assert!(r[3].parse::<f64>().unwrap() >= -1e-6, "left the safe set: {r:?}");
        assert!(r[4].parse::<f64>().unwrap() < 0.2, "did not reach the goal: {r:?}");
    }
    assert_eq!(csv_rows(&out.join("rollouts/paths.csv")).len(), 2 * 1001);
}

#[test]
fn bench_counts_match_the_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seeds = [0]\n[bench]\nn_c = [4, 6, 9]\nm = 3\nrepetitions = 50\n");
    let out = dir.path().join("out");
    let o = safenet(&["bench", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("bench.csv"));
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r[2], r[3]);
        assert_eq!(r[4], r[5]);
        assert!(r[2].parse::<u64>().unwrap() < r[4].parse::<u64>().unwrap());
    }
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.scenario().unwrap();
            assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap(), cfg);
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
