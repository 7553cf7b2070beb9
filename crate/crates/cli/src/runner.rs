//! Experiment orchestration: training runs, policy evaluation, and the
//! files each produces.
//!
//! A training run writes into its output directory:
//!
//! - `metrics.csv`: one row per environment step,
//! - `metrics_smoothed.csv`: EWMA(0.2) and trailing-100 overlays,
//! - `checkpoint.bin`: every network in the flat bundle format,
//! - `manifest.toml`: config hash, seed, step count, temperatures,
//! - `summary.toml`: trailing-1000-step means plus the per-channel
//!   occupancy probabilities drawn for the run.
//!
//! If training diverges (a loss or gradient goes non-finite) the last good
//! parameters are still checkpointed next to a `DIVERGED.txt` diagnostic
//! before the error propagates.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crn_core::checkpoint::{read_bundle, write_bundle};
use crn_core::env::CrnEnv;
use crn_core::mhsac::{StepRecord, Trainer, TrainingRun};
use crn_core::Error as CoreError;

use crate::config::ResolvedExperiment;
use crate::metrics::{MetricsLog, SUMMARY_WINDOW};

#[derive(Debug, Serialize)]
struct Manifest {
    config_hash: String,
    seed: u64,
    steps: usize,
    gradient_updates: u64,
    alpha_d: f64,
    alpha_c: f64,
}

#[derive(Debug, Serialize)]
struct Summary {
    config_hash: String,
    seed: u64,
    steps: usize,
    trailing_window: usize,
    means: crate::metrics::SummaryStats,
    occupancy_idle_to_occupied: Vec<f64>,
    occupancy_occupied_to_occupied: Vec<f64>,
    /// Closed-form long-run rate per SU (bits/s) at nominal unit gains and
    /// all-idle beliefs; a sensing-model reference, not a measurement.
    analytic_rate_per_su: Vec<f64>,
}

/// Closed-form average achievable rate per SU from the sensing model:
/// duty-cycled sum over sensed channels of the correctly-used idle rate
/// plus the missed-detection rate.
fn analytic_rates(exp: &ResolvedExperiment) -> Vec<f64> {
    let env = &exp.env;
    let samples = env.sensing.samples_per_channel();
    let noise = env.channel.noise_var;
    let sensed = env.sensed_channels().unwrap_or_default();
    (0..env.secondary_users)
        .map(|n| {
            let channels = &sensed[n];
            let beliefs = vec![false; channels.len()];
            let mut idle_probs = Vec::new();
            let mut p_fa = Vec::new();
            let mut p_de = Vec::new();
            let mut rate_idle = Vec::new();
            let mut rate_busy = Vec::new();
            for &k in channels {
                let pio = exp.draws.idle_to_occupied[k];
                let poo = exp.draws.occupied_to_occupied[k];
                idle_probs.push((1.0 - poo) / (pio + 1.0 - poo));
                let psi = env.sensing.thresholds[n][k];
                p_fa.push(crn_core::sensing::p_false_alarm(psi, noise, samples));
                p_de.push(crn_core::sensing::p_detect(
                    psi,
                    noise,
                    env.channel.pu_snr[n][k],
                    samples,
                ));
                let b = env.channel.bandwidth_hz;
                let kk = env.channel.channels;
                rate_idle.push(crn_core::env::rate_from_sinr(
                    env.max_power[n] / noise,
                    b,
                    kk,
                ));
                rate_busy.push(crn_core::env::rate_from_sinr(
                    env.max_power[n] / (noise + env.channel.pu_power[k]),
                    b,
                    kk,
                ));
            }
            crn_core::env::analytic_average_rate(
                env.sensing.window_s,
                env.sensing.block_s,
                &beliefs,
                &idle_probs,
                &p_fa,
                &p_de,
                &rate_idle,
                &rate_busy,
            )
        })
        .collect()
}

pub struct TrainOutputs {
    pub out_dir: PathBuf,
    pub log: MetricsLog,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn save_checkpoint(
    trainer: &Trainer,
    exp: &ResolvedExperiment,
    steps: usize,
    dir: &Path,
) -> Result<PathBuf> {
    let path = dir.join("checkpoint.bin");
    let named = trainer.named_nets();
    let entries: Vec<(&str, &crn_core::nn::DenseNet)> =
        named.iter().map(|(n, net)| (n.as_str(), *net)).collect();
    write_bundle(&path, &entries).context("writing checkpoint bundle")?;
    let manifest = Manifest {
        config_hash: exp.config_hash(),
        seed: exp.seed,
        steps,
        gradient_updates: trainer.gradient_updates(),
        alpha_d: trainer.temperatures().alpha_d(),
        alpha_c: trainer.temperatures().alpha_c(),
    };
    write_text(
        &dir.join("manifest.toml"),
        &toml::to_string_pretty(&manifest)?,
    )?;
    Ok(path)
}

/// Train from a resolved experiment and write all artifacts under
/// `out_dir`.
pub fn run_train(exp: &ResolvedExperiment, out_dir: &Path) -> Result<TrainOutputs> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut env = CrnEnv::new(exp.env.clone(), exp.seed).context("building environment")?;
    let mut trainer =
        Trainer::new(&exp.env, exp.trainer.clone(), exp.seed).context("building trainer")?;

    let run = match trainer.train(&mut env) {
        Ok(run) => run,
        Err(err @ CoreError::Diverged(_)) => {
            // Parameters are still the last values that produced finite
            // losses; keep them for post-mortems.
            save_checkpoint(&trainer, exp, 0, out_dir)?;
            write_text(&out_dir.join("DIVERGED.txt"), &err.to_string())?;
            return Err(
                anyhow::Error::new(err).context("training diverged; last good checkpoint saved")
            );
        }
        Err(err) => return Err(err.into()),
    };

    let log = MetricsLog::from_run(&run);
    let metrics_path = out_dir.join("metrics.csv");
    let mut w = BufWriter::new(File::create(&metrics_path)?);
    log.write_csv(&mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(out_dir.join("metrics_smoothed.csv"))?);
    log.write_smoothed_csv(&mut w)?;
    w.flush()?;

    let checkpoint_path = save_checkpoint(&trainer, exp, run.records.len(), out_dir)?;
    let summary = Summary {
        config_hash: exp.config_hash(),
        seed: exp.seed,
        steps: run.records.len(),
        trailing_window: SUMMARY_WINDOW,
        means: log.summary(SUMMARY_WINDOW),
        occupancy_idle_to_occupied: exp.draws.idle_to_occupied.clone(),
        occupancy_occupied_to_occupied: exp.draws.occupied_to_occupied.clone(),
        analytic_rate_per_su: analytic_rates(exp),
    };
    write_text(
        &out_dir.join("summary.toml"),
        &toml::to_string_pretty(&summary)?,
    )?;

    Ok(TrainOutputs {
        out_dir: out_dir.to_path_buf(),
        log,
        metrics_path,
        checkpoint_path,
    })
}

/// Roll out a checkpointed policy deterministically for `steps` steps and
/// write `eval_metrics.csv` plus `eval_summary.toml`.
pub fn run_eval(
    exp: &ResolvedExperiment,
    checkpoint: &Path,
    steps: usize,
    out_dir: &Path,
) -> Result<MetricsLog> {
    std::fs::create_dir_all(out_dir)?;
    let mut env = CrnEnv::new(exp.env.clone(), exp.seed)?;
    let mut trainer = Trainer::new(&exp.env, exp.trainer.clone(), exp.seed)?;
    let nets = read_bundle(checkpoint)
        .with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
    trainer.load_nets(&nets).context("restoring networks")?;

    let noise_var = exp.env.channel.noise_var;
    let mut records = Vec::with_capacity(steps);
    for step in 0..steps {
        if step > 0 && step % exp.trainer.episode_length == 0 {
            env.reset_episode()?;
        }
        let actions = env
            .observations()
            .iter()
            .enumerate()
            .map(|(n, o)| trainer.act_deterministic(n, &o.encode(noise_var)))
            .collect::<crn_core::Result<Vec<_>>>()?;
        let outcome = env.step(&actions)?;
        records.push(StepRecord {
            step: step as u64,
            joint_reward: outcome.joint_reward,
            idle_utilization: outcome.usage.idle_utilization,
            occupied_utilization: outcome.usage.occupied_utilization,
            collisions: outcome.usage.collisions,
            powers: actions.iter().map(|a| a.power).collect(),
            critic_loss: 0.0,
            actor_loss: 0.0,
            alpha_d: trainer.temperatures().alpha_d(),
            alpha_c: trainer.temperatures().alpha_c(),
        });
    }
    let log = MetricsLog {
        su_count: exp.env.secondary_users,
        rows: records,
    };
    let mut w = BufWriter::new(File::create(out_dir.join("eval_metrics.csv"))?);
    log.write_csv(&mut w)?;
    w.flush()?;
    let summary = Summary {
        config_hash: exp.config_hash(),
        seed: exp.seed,
        steps,
        trailing_window: SUMMARY_WINDOW,
        means: log.summary(SUMMARY_WINDOW),
        occupancy_idle_to_occupied: exp.draws.idle_to_occupied.clone(),
        occupancy_occupied_to_occupied: exp.draws.occupied_to_occupied.clone(),
        analytic_rate_per_su: analytic_rates(exp),
    };
    write_text(
        &out_dir.join("eval_summary.toml"),
        &toml::to_string_pretty(&summary)?,
    )?;
    Ok(log)
}

/// The training run rerun used by determinism checks: only the artifacts,
/// no filesystem side effects.
pub fn train_in_memory(exp: &ResolvedExperiment) -> Result<(TrainingRun, Trainer)> {
    let mut env = CrnEnv::new(exp.env.clone(), exp.seed)?;
    let mut trainer = Trainer::new(&exp.env, exp.trainer.clone(), exp.seed)?;
    let run = trainer.train(&mut env)?;
    Ok((run, trainer))
}
