use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use genleak_cli::{
    parse_axis, run_attack, run_experiment, run_sweep, run_train, workers_from_env, write_report, AttackKind, CliError, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "genleak", version, about = "Membership inference against generative models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue an interrupted run in the same directory.
    #[arg(long)]
    resume: bool,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the target model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Also write a generator-only artifact.
        #[arg(long)]
        export_generator: bool,
    },
    /// Attack an existing target checkpoint.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Target artifact; defaults to the config's run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// whitebox, blackbox, discriminative_aux, generative_aux,
        /// euclidean or shadow; defaults to the config's attack kind.
        #[arg(long)]
        mode: Option<AttackKind>,
    },
    /// Repeat the full pipeline over an axis of values and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `name=v1,v2,...`, e.g. `train_fraction=0.1,0.5,0.9`.
        #[arg(long)]
        axis: String,
        /// Number of seeds, counting up from the base seed.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Render accuracy CSVs (or directories holding them) to an SVG chart.
    Report {
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Data, split, training, attack and evaluation in one go.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(dir) => {
            println!("manifest written to {}", dir.join("manifest.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<PathBuf, CliError> {
    match cmd {
        Command::Train { common, export_generator } => {
            let cfg = common.load()?;
            Ok(run_train(&cfg, common.resume, export_generator)?.dir)
        }
        Command::Attack { common, checkpoint, mode } => {
            let mut cfg = common.load()?;
            if let Some(m) = mode {
                cfg.attack.kind = m;
            }
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.output_dir.join(genleak_cli::pipeline::CHECKPOINT));
            let out = match &common.out {
                Some(o) => o.clone(),
                None => {
                    let kind = toml::Value::try_from(cfg.attack.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                    cfg.output_dir.join(format!("attack-{kind}"))
                }
            };
            let r = run_attack(&cfg, &checkpoint, &out, common.resume)?;
            if let Some(s) = &r.summary {
                println!("accuracy {:.4} (random {:.4}, improvement {:+.4})", s.result.accuracy, s.result.random_baseline, s.result.improvement);
            }
            Ok(r.dir)
        }
        Command::Sweep { common, axis, seeds } => {
            let cfg = common.load()?;
            let (axis, values) = parse_axis(&axis)?;
            let seeds: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
            let (_, sweep) = run_sweep(&cfg, axis, &values, &seeds, workers_from_env()?, common.resume)?;
            for p in &sweep.points {
                println!(
                    "{}={}: mean improvement {:+.4} [{:+.4}, {:+.4}], {} failed",
                    sweep.axis,
                    p.value,
                    p.mean_improvement,
                    p.min_improvement,
                    p.max_improvement,
                    p.failures.len()
                );
            }
            Ok(cfg.output_dir)
        }
        Command::Report { inputs, out, resume } => {
            write_report(&inputs, &out, resume)?;
            Ok(out)
        }
        Command::Run { common } => {
            let cfg = common.load()?;
            let r = run_experiment(&cfg, common.resume)?;
            if let Some(s) = &r.summary {
                println!("accuracy {:.4} (random {:.4}, improvement {:+.4})", s.result.accuracy, s.result.random_baseline, s.result.improvement);
            }
            Ok(r.dir)
        }
    }
}
