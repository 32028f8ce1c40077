use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use auxvae::cli::{self, Overrides, RunConfig, OUTPUT_DIR_ENV};
use auxvae::Result;

#[derive(Parser)]
#[command(
    name = "auxvae",
    version,
    about = "Hand-load estimation from gait with an auxiliary-input VAE"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use only the first N leave-one-participant-out folds.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to the data directory.
    Synth(Common),
    /// Train every fold and repeat of the configured model.
    Train(Common),
    /// Re-evaluate saved fold checkpoints.
    Evaluate(Common),
    /// Train and compare the configured ablation settings.
    Ablate(Common),
    /// Predict the load of one raw trial window.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory of a trained fold.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Raw little-endian f32 loaded window, time x channel.
        #[arg(long)]
        trial: PathBuf,
        /// Raw baseline window of the same participant.
        #[arg(long)]
        baseline: PathBuf,
        /// Also write the row as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every op and the full loss.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let o = Overrides {
        data_dir: c.data_dir.clone(),
        output_dir: c.output_dir.clone(),
        checkpoint_dir: c.checkpoint_dir.clone(),
        seed: c.seed,
        folds: c.folds,
        epochs: c.epochs,
    };
    let env = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
    RunConfig::load(c.config.as_deref())?.resolve(&o, env)
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Synth(c) => {
            let cfg = resolve(&c)?;
            let ds = cli::cmd_synth(&cfg)?;
            eprintln!(
                "wrote {} participants, {} trials to {}",
                ds.participants.len(),
                ds.num_trials(),
                cfg.paths.data_dir.display()
            );
            Ok(true)
        }
        Command::Train(c) => {
            let cfg = resolve(&c)?;
            let out = cli::cmd_train(&cfg)?;
            for r in &out.runs {
                eprintln!(
                    "fold {} repeat {}: mae {:.3} lbs, accuracy {}, {:.1}s",
                    r.fold_id,
                    r.repeat,
                    r.eval.mae_lbs,
                    r.eval
                        .style_accuracy
                        .map(|a| format!("{a:.3}"))
                        .unwrap_or_else(|| "-".into()),
                    r.report.wall_time_secs
                );
            }
            if out.failures > 0 {
                eprintln!("{} run(s) aborted; see folds.csv", out.failures);
            }
            Ok(out.failures == 0)
        }
        Command::Evaluate(c) => {
            let cfg = resolve(&c)?;
            for (fold, repeat, e) in cli::cmd_evaluate(&cfg)? {
                eprintln!("fold {fold} repeat {repeat}: mae {:.3} lbs", e.mae_lbs);
            }
            Ok(true)
        }
        Command::Ablate(c) => {
            let cfg = resolve(&c)?;
            let table = cli::cmd_ablate(&cfg)?;
            let mut ok = true;
            for r in &table.rows {
                ok &= r.failures.is_empty();
                eprintln!(
                    "{}: mae {:.3} +- {:.3}",
                    r.setting.name, r.aggregate.mae_mean, r.aggregate.mae_std
                );
            }
            Ok(ok)
        }
        Command::Predict {
            common,
            checkpoint,
            trial,
            baseline,
            out,
        } => {
            let cfg = resolve(&common)?;
            let row = cli::cmd_predict(&cfg, &checkpoint, &trial, &baseline, out.as_deref())?;
            println!("{}", serde_json::to_string(&row)?);
            Ok(true)
        }
        Command::GradCheck { common, seeds } => {
            let cfg = resolve(&common)?;
            let entries = cli::cmd_grad_check(&cfg, seeds)?;
            let failed: Vec<_> = entries.iter().filter(|e| !e.report.passed).collect();
            for e in &failed {
                eprintln!(
                    "FAIL {} seed {}: {:.3e}",
                    e.name, e.seed, e.report.max_rel_err
                );
            }
            eprintln!("{} checks, {} failed", entries.len(), failed.len());
            Ok(failed.is_empty())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
