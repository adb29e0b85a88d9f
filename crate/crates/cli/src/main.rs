use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use safenet_cli::commands::{cmd_bench, cmd_eval, cmd_report, cmd_rollout, cmd_train, write_resolved_config, Overrides};
use safenet_cli::{CliError, MethodEntry, RunConfig};

#[derive(Parser)]
#[command(name = "safenet", version, about = "Train, evaluate and benchmark safe-by-construction controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the learned methods; one checkpoint per method and seed plus losses.csv.
    Train(Common),
    /// Evaluate every method; writes metrics.csv, summary.csv and table.md.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (default: <out>/checkpoints).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Closed-loop trajectories from each start state, on the first seed.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Start state as comma-separated values; repeatable.
        #[arg(long, value_parser = parse_state, allow_hyphen_values = true)]
        x0: Vec<Vec<f64>>,
    },
    /// Candidate counts and selection latency, Lite vs full enumeration.
    Bench(Common),
    /// Rebuild summary.csv and table.md from <out>/metrics.csv.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Run config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single seed; overrides the config.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Method name, e.g. qp(0.1), od_qp(10), caffnet_lite; repeatable.
    #[arg(long = "method")]
    methods: Vec<MethodEntry>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seeds on separate threads.
    #[arg(long)]
    parallel: bool,
}

fn parse_state(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"))).collect()
}

impl Common {
    fn config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(Path::new(path))?,
            None => RunConfig::default(),
        };
        let overrides = Overrides {
            seeds: self.seed.map(|s| vec![s]).or_else(|| self.seeds.clone()),
            epochs: self.epochs,
            methods: (!self.methods.is_empty()).then(|| self.methods.clone()),
            out: self.out.clone(),
        };
        overrides.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.config()?;
            write_resolved_config(&cfg)?;
            cmd_train(&cfg, c.parallel)
        }
        Command::Eval { common, checkpoints } => {
            let cfg = common.config()?;
            cmd_eval(&cfg, checkpoints.as_deref(), common.parallel)
        }
        Command::Rollout { common, checkpoints, x0 } => cmd_rollout(&common.config()?, checkpoints.as_deref(), &x0),
        Command::Bench(c) => cmd_bench(&c.config()?),
        Command::Report(c) => cmd_report(&c.config()?),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors, matching config errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("safenet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
