//! `crn`: train, evaluate, and study cognitive-radio spectrum-access
//! policies from TOML experiment configs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crn_cli::config::{load_config, ResolvedExperiment};
use crn_cli::oracle::brute_force_allocation_oracle;
use crn_cli::runner::{run_eval, run_train};
use crn_cli::study::{run_sensing_study, write_study_csv};
use crn_core::env::CrnEnv;

/// Root directory for run outputs; `--out` and `output_dir` are resolved
/// against it.
const OUTPUT_ROOT_ENV: &str = "CRN_OUT_DIR";

#[derive(Parser)]
#[command(name = "crn", about = "Cognitive-radio DSA simulator and trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRunArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (relative to $CRN_OUT_DIR when set).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write metrics, checkpoint, and summary.
    Train(CommonRunArgs),
    /// Empirical vs closed-form detection probability over grids.
    SenseStudy {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Comma-separated sensing-window grid (seconds).
        #[arg(long, value_delimiter = ',', required = true)]
        tau_grid: Vec<f64>,
        /// Comma-separated coherence-time grid (seconds).
        #[arg(long, value_delimiter = ',', required = true)]
        tc_grid: Vec<f64>,
        /// Sensing decisions per grid point.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Roll out a checkpointed policy deterministically.
    Eval {
        /// Checkpoint bundle written by `train`.
        checkpoint: PathBuf,
        #[command(flatten)]
        common: CommonRunArgs,
        /// Environment steps to roll out.
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },
    /// Exhaustive best-assignment search over frozen snapshots.
    Oracle {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Number of frozen snapshots to score.
        #[arg(long, default_value_t = 100)]
        snapshots: usize,
    },
}

fn resolve_out_dir(exp: &ResolvedExperiment, out: Option<&Path>) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let leaf = out
        .map(Path::to_path_buf)
        .or_else(|| exp.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("run-{}-s{}", &exp.config_hash()[..8], exp.seed)));
    if leaf.is_absolute() {
        leaf
    } else {
        root.join(leaf)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(common) => {
            let exp = load_config(&common.config, common.seed)?;
            let out_dir = resolve_out_dir(&exp, common.out.as_deref());
            let outputs = run_train(&exp, &out_dir)?;
            let summary = outputs.log.summary(crn_cli::metrics::SUMMARY_WINDOW);
            println!(
                "trained {} steps (seed {}) -> {}",
                outputs.log.rows.len(),
                exp.seed,
                outputs.out_dir.display()
            );
            println!(
                "trailing-{} means: reward {:.4}, idle util {:.4}, occupied util {:.4}, \
                 collisions {:.4}",
                summary.rows_used,
                summary.joint_reward,
                summary.idle_utilization,
                summary.occupied_utilization,
                summary.collisions
            );
        }
        Command::SenseStudy {
            common,
            tau_grid,
            tc_grid,
            trials,
        } => {
            let exp = load_config(&common.config, common.seed)?;
            let out_dir = resolve_out_dir(&exp, common.out.as_deref());
            std::fs::create_dir_all(&out_dir)?;
            let points = run_sensing_study(&exp, &tau_grid, &tc_grid, trials)?;
            let path = out_dir.join("sensing_study.csv");
            let mut w = BufWriter::new(File::create(&path)?);
            write_study_csv(&points, &mut w)?;
            w.flush()?;
            println!("{} study points -> {}", points.len(), path.display());
        }
        Command::Eval {
            checkpoint,
            common,
            steps,
        } => {
            let exp = load_config(&common.config, common.seed)?;
            let out_dir = resolve_out_dir(&exp, common.out.as_deref());
            let log = run_eval(&exp, &checkpoint, steps, &out_dir)?;
            let summary = log.summary(steps);
            println!(
                "evaluated {steps} steps -> {} (reward {:.4}, idle util {:.4}, occupied util \
                 {:.4})",
                out_dir.display(),
                summary.joint_reward,
                summary.idle_utilization,
                summary.occupied_utilization
            );
        }
        Command::Oracle { common, snapshots } => {
            let exp = load_config(&common.config, common.seed)?;
            let out_dir = resolve_out_dir(&exp, common.out.as_deref());
            std::fs::create_dir_all(&out_dir)?;
            let mut env = CrnEnv::new(exp.env.clone(), exp.seed).context("building environment")?;
            let sensed = env.sensed_channels().to_vec();
            let idle_arm = exp.env.arms() - 1;
            let path = out_dir.join("oracle.csv");
            let mut w = BufWriter::new(File::create(&path)?);
            writeln!(w, "snapshot,occupancy,best_arms,best_score")?;
            let mut total = 0.0;
            for i in 0..snapshots {
                let snap = env.snapshot()?;
                let best = brute_force_allocation_oracle(&snap, &exp.env, &sensed)?;
                let occ: String = snap
                    .occupancy
                    .iter()
                    .map(|&b| if b { '1' } else { '0' })
                    .collect();
                let arms: Vec<String> = best.arms.iter().map(|a| a.to_string()).collect();
                writeln!(w, "{i},{occ},{},{}", arms.join(";"), best.score)?;
                total += best.score;
                let idle: Vec<_> = (0..exp.env.secondary_users)
                    .map(|_| crn_core::env::Action {
                        arm: idle_arm,
                        power: exp.env.max_power[0] / 2.0,
                    })
                    .collect();
                env.step(&idle)?;
            }
            w.flush()?;
            println!(
                "{snapshots} snapshots, mean best score {:.4} -> {}",
                total / snapshots as f64,
                path.display()
            );
        }
    }
    Ok(())
}
