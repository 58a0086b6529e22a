//! Experiment runner for preference-based reward learning with
//! differentiable decision trees.

mod config;
mod pipeline;

use clap::{Parser, Subcommand, ValueEnum};
use ddt::train::RewardMode;
use ddt::tree::RewardDdt;
use ddt::DdtError;
use std::path::PathBuf;
use std::process::ExitCode;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(
    name = "ddt",
    about = "Learn reward functions from pairwise preferences with differentiable decision trees"
)]
struct Cli {
    /// Worker-thread cap; 1 guarantees bit-exact determinism. All current
    /// stages are sequential, so every value is deterministic.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Soft,
    Argmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum RlModeArg {
    Soft,
    Argmax,
    GroundTruth,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a preference dataset from the configured environment.
    GenPrefs {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a reward DDT on a preference dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset file; defaults to <output_dir>/prefs.ddtp.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Report validation preference accuracy of a trained model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        mode: EvalMode,
    },
    /// Optimize a policy against a learned or ground-truth reward.
    Rl {
        /// Trained model; required for soft/argmax modes.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: RlModeArg,
        /// CartPole only: evaluate from out-of-distribution starts.
        #[arg(long)]
        ood: bool,
    },
    /// Render the interpretability report bundle for a trained model.
    Interpret {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Dataset whose observations form the trace state pool.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
}

fn exit_code_for(err: &DdtError) -> u8 {
    match err {
        DdtError::Io { .. } | DdtError::Format(_) | DdtError::UnsupportedVersion(_) => EXIT_IO,
        DdtError::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn run(cli: Cli) -> ddt::Result<()> {
    match cli.command {
        Command::GenPrefs { config } => {
            let text = read_config_text(&config)?;
            let cfg = config::load_config(&config)?;
            let path = pipeline::run_gen_prefs(&cfg, &text)?;
            println!("wrote dataset {}", path.display());
        }
        Command::Train { config, dataset } => {
            let text = read_config_text(&config)?;
            let cfg = config::load_config(&config)?;
            let dataset_path = dataset.unwrap_or_else(|| pipeline::default_dataset_path(&cfg));
            let (model_path, final_acc) = pipeline::run_train(&cfg, &text, &dataset_path)?;
            println!(
                "wrote model {} (final val_acc_soft={final_acc})",
                model_path.display()
            );
        }
        Command::Eval { model, dataset, mode } => {
            let mode = match mode {
                EvalMode::Soft => RewardMode::Soft,
                EvalMode::Argmax => RewardMode::Argmax,
            };
            let csv = model.parent().unwrap_or(std::path::Path::new(".")).join("eval.csv");
            let acc = pipeline::run_eval(&model, &dataset, mode, &csv)?;
            println!("val_accuracy={acc}");
        }
        Command::Rl { model, config, mode, ood } => {
            let cfg = config::load_config(&config)?;
            let tree = model.as_deref().map(RewardDdt::load).transpose()?;
            let mode = match mode {
                RlModeArg::Soft => pipeline::RlMode::Soft,
                RlModeArg::Argmax => pipeline::RlMode::Argmax,
                RlModeArg::GroundTruth => pipeline::RlMode::GroundTruth,
            };
            let run_id = format!("{}-{}", mode.name(), if ood { "ood" } else { "id" });
            let rows = match cfg.environment {
                config::EnvBlock::Cartpole => {
                    pipeline::run_rl_cartpole(&cfg, tree.as_ref(), mode, ood, &run_id)?
                }
                config::EnvBlock::MnistGrid { .. } => {
                    if ood {
                        return Err(DdtError::InvalidConfig(
                            "--ood only applies to cartpole".into(),
                        ));
                    }
                    pipeline::run_rl_gridworld(&cfg, tree.as_ref(), mode, &run_id)?
                }
            };
            let dir = cfg.output_dir();
            std::fs::create_dir_all(&dir)
                .map_err(|e| DdtError::io(format!("creating {}", dir.display()), e))?;
            pipeline::write_rl_csv(&dir.join("rl.csv"), &rows)?;
            for row in &rows {
                println!(
                    "env={} mode={} seed={} mean={} std={} iqm={}{}",
                    row.env,
                    row.reward_mode,
                    row.seed,
                    row.mean,
                    row.std,
                    row.iqm,
                    row.pct_of_optimal
                        .map(|p| format!(" pct_of_optimal={p}"))
                        .unwrap_or_default()
                );
            }
        }
        Command::Interpret { model, config, pool } => {
            let cfg = config::load_config(&config)?;
            let tree = RewardDdt::load(&model)?;
            let dir = pipeline::run_interpret(&cfg, &tree, pool.as_deref())?;
            println!("wrote report bundle {}", dir.display());
        }
    }
    Ok(())
}

fn read_config_text(path: &std::path::Path) -> ddt::Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| DdtError::io(format!("reading config {}", path.display()), e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
