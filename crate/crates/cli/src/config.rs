//! Experiment configuration: TOML schema, validation, and resolution into
//! the simulator and trainer configs.
//!
//! Validation is total: every constraint violation is reported with the
//! offending field's name; nothing falls back silently. Optional fields
//! have documented derivations:
//!
//! - `env.sensed_per_su` defaults to `ceil(K/N) + 1`, capped at `K`.
//! - `env.target_rate` defaults to `0.1 * log2(1 + p_max / (2 sigma^2))`.
//! - `sensing.threshold_w` defaults to the per-link midpoint
//!   `sigma^2 (1 + rho/2)`; an explicit value must respect
//!   `sigma^2 <= psi <= sigma^2 (1 + rho)` on every link.
//! - `trainer.target_entropy_discrete` defaults to `0.01 * M`.
//!
//! The per-channel occupancy transition probabilities are drawn uniformly
//! from the configured ranges once, at resolution time, from the experiment
//! seed; the drawn values are recorded in the run summary.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crn_core::channel::{derive_seed, ChannelParams};
use crn_core::env::EnvConfig;
use crn_core::mhsac::MhsacConfig;
use crn_core::sensing::{default_threshold, SensingConfig, SignalModel};

const TAG_OCC_DRAWS: u64 = 0x0CC;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub env: EnvSection,
    pub sensing: SensingSection,
    pub trainer: TrainerSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub channels: usize,
    pub secondary_users: usize,
    #[serde(default)]
    pub sensed_per_su: Option<usize>,
    #[serde(default)]
    pub bandwidth_hz: Option<f64>,
    pub noise_variance_w: f64,
    pub pu_power_w: f64,
    pub pu_snr: f64,
    pub max_power_w: f64,
    #[serde(default)]
    pub target_rate: Option<f64>,
    pub occupancy_penalty: f64,
    pub rate_penalty: f64,
    #[serde(default = "one")]
    pub gain_mean_pu: f64,
    #[serde(default = "one")]
    pub gain_mean_self: f64,
    #[serde(default = "one")]
    pub gain_mean_cross: f64,
    #[serde(default)]
    pub pu_signal: PuSignal,
    pub occupancy: OccupancySection,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PuSignal {
    #[default]
    Gaussian,
    Bpsk,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancySection {
    /// `[lo, hi]` range for the per-channel idle-to-occupied probability.
    pub idle_to_occupied: [f64; 2],
    /// `[lo, hi]` range for the per-channel stay-occupied probability.
    pub occupied_to_occupied: [f64; 2],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingSection {
    pub sampling_rate_hz: f64,
    pub window_s: f64,
    pub block_s: f64,
    pub coherence_time_s: f64,
    #[serde(default)]
    pub threshold_w: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    pub episode_length: usize,
    pub total_timesteps: usize,
    pub minibatch: usize,
    pub policy_frequency: usize,
    pub discount: f64,
    pub buffer_capacity: usize,
    #[serde(default)]
    pub target_entropy_discrete: Option<f64>,
    pub target_entropy_continuous: f64,
    pub hidden_layers: Vec<usize>,
    pub mixer_embed: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub polyak: f64,
    pub warmup_steps: usize,
    #[serde(default = "default_initial_temperature")]
    pub initial_temperature: f64,
}

fn default_initial_temperature() -> f64 {
    0.2
}

/// Concrete per-channel occupancy probabilities drawn at resolution time.
#[derive(Debug, Clone)]
pub struct OccupancyDraws {
    pub idle_to_occupied: Vec<f64>,
    pub occupied_to_occupied: Vec<f64>,
}

/// A fully-validated experiment ready to run.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    /// The configuration text exactly as read, hashed into the manifest.
    pub raw_toml: String,
    pub seed: u64,
    pub output_dir: Option<String>,
    pub env: EnvConfig,
    pub trainer: MhsacConfig,
    pub draws: OccupancyDraws,
}

impl ResolvedExperiment {
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.raw_toml.as_bytes());
        hasher.update(self.seed.to_le_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn load_config(path: &Path, seed_override: Option<u64>) -> Result<ResolvedExperiment> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    resolve_config(&raw, seed_override)
}

pub fn resolve_config(raw: &str, seed_override: Option<u64>) -> Result<ResolvedExperiment> {
    let file: ExperimentFile = toml::from_str(raw).context("parsing experiment config")?;
    let seed = seed_override.unwrap_or(file.seed);
    let env = &file.env;
    let k = env.channels;
    let n = env.secondary_users;
    if k == 0 {
        bail!("env.channels: must be at least 1");
    }
    if n == 0 {
        bail!("env.secondary_users: must be at least 1");
    }
    let m = match env.sensed_per_su {
        Some(m) => {
            if m == 0 || m > k {
                bail!("env.sensed_per_su: {m} must lie in 1..={k} (= env.channels)");
            }
            m
        }
        None => (k.div_ceil(n) + 1).min(k),
    };
    if !(env.noise_variance_w > 0.0) {
        bail!(
            "env.noise_variance_w: must be positive, got {}",
            env.noise_variance_w
        );
    }
    if !(env.pu_power_w >= 0.0) {
        bail!(
            "env.pu_power_w: must be non-negative, got {}",
            env.pu_power_w
        );
    }
    if !(env.pu_snr >= 0.0) {
        bail!("env.pu_snr: must be non-negative, got {}", env.pu_snr);
    }
    if !(env.max_power_w > 0.0) {
        bail!("env.max_power_w: must be positive, got {}", env.max_power_w);
    }
    for (name, g) in [
        ("env.gain_mean_pu", env.gain_mean_pu),
        ("env.gain_mean_self", env.gain_mean_self),
        ("env.gain_mean_cross", env.gain_mean_cross),
    ] {
        if !(g >= 0.0) {
            bail!("{name}: must be non-negative, got {g}");
        }
    }
    if !(env.occupancy_penalty > 0.0) {
        bail!(
            "env.occupancy_penalty: must be positive, got {}",
            env.occupancy_penalty
        );
    }
    if !(env.rate_penalty > 0.0) {
        bail!(
            "env.rate_penalty: must be positive, got {}",
            env.rate_penalty
        );
    }
    for (name, [lo, hi]) in [
        (
            "env.occupancy.idle_to_occupied",
            env.occupancy.idle_to_occupied,
        ),
        (
            "env.occupancy.occupied_to_occupied",
            env.occupancy.occupied_to_occupied,
        ),
    ] {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            bail!("{name}: [{lo}, {hi}] is not a probability range with lo <= hi");
        }
    }

    let sensing = &file.sensing;
    if !(sensing.window_s > 0.0 && sensing.window_s < sensing.block_s) {
        bail!(
            "sensing.window_s: {} must satisfy 0 < window_s < block_s ({}); the sensing \
             window has to leave room for transmission inside the time block",
            sensing.window_s,
            sensing.block_s
        );
    }
    if !(sensing.sampling_rate_hz > 0.0) {
        bail!(
            "sensing.sampling_rate_hz: must be positive, got {}",
            sensing.sampling_rate_hz
        );
    }
    if !(sensing.coherence_time_s > 0.0) {
        bail!(
            "sensing.coherence_time_s: must be positive, got {}",
            sensing.coherence_time_s
        );
    }
    let noise = env.noise_variance_w;
    let rho = env.pu_snr;
    let psi = match sensing.threshold_w {
        Some(psi) => {
            let hi = noise * (1.0 + rho);
            if !(psi >= noise && psi <= hi) {
                bail!(
                    "sensing.threshold_w: {psi} outside the admissible band [{noise}, {hi}] \
                     (noise floor to noise * (1 + pu_snr)); detection/false-alarm guarantees \
                     would not hold"
                );
            }
            psi
        }
        None => default_threshold(noise, rho),
    };

    let target_rate = match env.target_rate {
        Some(z) => {
            if !(z > 0.0) {
                bail!("env.target_rate: must be positive, got {z}");
            }
            z
        }
        None => 0.1 * (1.0 + env.max_power_w / (2.0 * noise)).log2(),
    };

    // Occupancy probability draws: once per experiment, from the seed.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_OCC_DRAWS, 0, 0, 0));
    let draw_range = |rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]| -> Vec<f64> {
        (0..k).map(|_| lo + rng.gen::<f64>() * (hi - lo)).collect()
    };
    let idle_to_occupied = draw_range(&mut rng, env.occupancy.idle_to_occupied);
    let occupied_to_occupied = draw_range(&mut rng, env.occupancy.occupied_to_occupied);

    let env_cfg = EnvConfig {
        secondary_users: n,
        channel: ChannelParams {
            bandwidth_hz: env.bandwidth_hz.unwrap_or(k as f64),
            channels: k,
            noise_var: noise,
            pu_power: vec![env.pu_power_w; k],
            pu_snr: vec![vec![rho; k]; n],
        },
        sensing: SensingConfig {
            sampling_rate_hz: sensing.sampling_rate_hz,
            window_s: sensing.window_s,
            block_s: sensing.block_s,
            channels_per_su: m,
            thresholds: vec![vec![psi; k]; n],
            signal_model: match env.pu_signal {
                PuSignal::Gaussian => SignalModel::Gaussian,
                PuSignal::Bpsk => SignalModel::Bpsk,
            },
        },
        coherence_time_s: sensing.coherence_time_s,
        max_power: vec![env.max_power_w; n],
        target_rate,
        occupancy_penalty: env.occupancy_penalty,
        rate_penalty: env.rate_penalty,
        gain_mean_pu: env.gain_mean_pu,
        gain_mean_self: env.gain_mean_self,
        gain_mean_cross: env.gain_mean_cross,
        p_idle_to_occ: idle_to_occupied.clone(),
        p_occ_to_occ: occupied_to_occupied.clone(),
    };
    env_cfg
        .validate()
        .context("validating the resolved environment config")?;
    if env_cfg.sensing.samples_per_channel() < 1 {
        bail!(
            "sensing.sampling_rate_hz/window_s: floor(eps * tau / M) must be at least one \
             sample per sensed channel"
        );
    }

    let t = &file.trainer;
    let trainer = MhsacConfig {
        hidden_layers: t.hidden_layers.clone(),
        mixer_embed: t.mixer_embed,
        actor_lr: t.actor_lr,
        critic_lr: t.critic_lr,
        temperature_lr: t.temperature_lr,
        discount: t.discount,
        polyak: t.polyak,
        minibatch: t.minibatch,
        policy_frequency: t.policy_frequency,
        warmup_steps: t.warmup_steps,
        buffer_capacity: t.buffer_capacity,
        target_entropy_discrete: t.target_entropy_discrete.unwrap_or(0.01 * m as f64),
        target_entropy_continuous: t.target_entropy_continuous,
        initial_temperature: t.initial_temperature,
        total_timesteps: t.total_timesteps,
        episode_length: t.episode_length,
        log_std_bounds: (-20.0, 2.0),
    };
    trainer
        .validate()
        .context("validating the [trainer] section")?;

    Ok(ResolvedExperiment {
        raw_toml: raw.to_string(),
        seed,
        output_dir: file.output_dir,
        env: env_cfg,
        trainer,
        draws: OccupancyDraws {
            idle_to_occupied,
            occupied_to_occupied,
        },
    })
}
