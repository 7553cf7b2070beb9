//! The cognitive-radio network environment.
//!
//! One environment step covers one time block: the secondary users sense
//! their assigned channels, act (pick at most one channel plus a transmit
//! power), transmit for the remainder of the block, and collect rewards.
//! The primary users' occupancy chains then advance and fresh sensing
//! produces the next observations.
//!
//! Observations are strictly local: each SU sees only the binary occupancy
//! beliefs and raw energy test statistics for the channels it senses. True
//! occupancy is tracked internally for reward physics and the utilization
//! metrics but is never part of an observation.
//!
//! Rewards follow the penalty-shaped empirical-rate scheme: transmitting on
//! a believed-occupied channel costs `occupancy_penalty`; transmitting
//! without reaching the target rate costs `rate_penalty`; otherwise the SU
//! earns its empirical rate. The per-SU empirical rate is gated to zero when
//! the chosen channel is believed occupied.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{derive_seed, ChannelParams, FadingProcess, PuOccupancy};
use crate::sensing::{collect_samples, detect, test_statistic, SensingConfig};
use crate::{Error, Result};

const TAG_SU_LINK: u64 = 0x51;
const TAG_PU_LINK: u64 = 0x52;
const TAG_OCCUPANCY: u64 = 0x53;
const TAG_SENSING: u64 = 0x54;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Full environment description.
#[derive(Debug, Clone)]
pub struct EnvConfig {
    /// Number of secondary users (transmitter/receiver pairs).
    pub secondary_users: usize,
    pub channel: ChannelParams,
    pub sensing: SensingConfig,
    /// Coherence time of every fading link (seconds).
    pub coherence_time_s: f64,
    /// Per-SU maximum transmit power (Watts).
    pub max_power: Vec<f64>,
    /// Target rate `zeta` (bits/s/Hz) below which a transmission is counted
    /// as interference.
    pub target_rate: f64,
    /// Penalty for transmitting on a believed-occupied channel.
    pub occupancy_penalty: f64,
    /// Penalty for transmitting below the target rate.
    pub rate_penalty: f64,
    /// Mean `|h|^2` per link class.
    pub gain_mean_pu: f64,
    pub gain_mean_self: f64,
    pub gain_mean_cross: f64,
    /// Occupancy-chain transition probabilities per channel.
    pub p_idle_to_occ: Vec<f64>,
    pub p_occ_to_occ: Vec<f64>,
}

impl EnvConfig {
    pub fn channels(&self) -> usize {
        self.channel.channels
    }

    /// Discrete arms per SU: one per sensed channel plus "stay idle".
    pub fn arms(&self) -> usize {
        self.sensing.channels_per_su + 1
    }

    /// Width of one SU's encoded observation vector.
    pub fn observation_width(&self) -> usize {
        2 * self.sensing.channels_per_su
    }

    pub fn sensed_channels(&self) -> Result<Vec<Vec<usize>>> {
        assign_sensed_channels(
            self.channels(),
            self.secondary_users,
            self.sensing.channels_per_su,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.sensing.validate()?;
        let n = self.secondary_users;
        let k = self.channels();
        if n == 0 {
            return Err(Error::Config("need at least one secondary user".into()));
        }
        if self.sensing.channels_per_su > k {
            return Err(Error::Config(format!(
                "each SU senses {} channels but only {} exist",
                self.sensing.channels_per_su, k
            )));
        }
        if self.sensing.thresholds.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "thresholds for {} SUs, expected {}",
                self.sensing.thresholds.len(),
                n
            )));
        }
        for (i, row) in self.sensing.thresholds.iter().enumerate() {
            if row.len() != k {
                return Err(Error::ShapeMismatch(format!(
                    "threshold row {i} has {} entries for {k} channels",
                    row.len()
                )));
            }
        }
        if self.channel.pu_snr.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "pu_snr has {} rows for {} SUs",
                self.channel.pu_snr.len(),
                n
            )));
        }
        if self.max_power.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "max_power has {} entries for {} SUs",
                self.max_power.len(),
                n
            )));
        }
        if self.max_power.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Config("max power must be positive".into()));
        }
        if !(self.target_rate > 0.0) {
            return Err(Error::Config(format!(
                "target rate must be positive, got {}",
                self.target_rate
            )));
        }
        if !(self.occupancy_penalty > 0.0) || !(self.rate_penalty > 0.0) {
            return Err(Error::Config("penalties must be positive".into()));
        }
        if !(self.coherence_time_s > 0.0) {
            return Err(Error::Config("coherence time must be positive".into()));
        }
        if self.p_idle_to_occ.len() != k || self.p_occ_to_occ.len() != k {
            return Err(Error::ShapeMismatch(
                "occupancy probability vectors must have one entry per channel".into(),
            ));
        }
        for g in [self.gain_mean_pu, self.gain_mean_self, self.gain_mean_cross] {
            if !(g >= 0.0) {
                return Err(Error::Config("gain means must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Deterministic round-robin sensing assignment: SU `n` senses the block of
/// `per_user` consecutive channels starting at `(n * per_user) mod channels`.
/// Every channel is covered whenever `users * per_user >= channels`.
pub fn assign_sensed_channels(
    channels: usize,
    users: usize,
    per_user: usize,
) -> Result<Vec<Vec<usize>>> {
    if per_user > channels {
        return Err(Error::Config(format!(
            "cannot sense {per_user} channels when only {channels} exist"
        )));
    }
    if per_user == 0 || users == 0 {
        return Err(Error::Config(
            "need at least one SU sensing at least one channel".into(),
        ));
    }
    Ok((0..users)
        .map(|n| {
            let start = (n * per_user) % channels;
            (0..per_user).map(|i| (start + i) % channels).collect()
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Observations and actions
// ---------------------------------------------------------------------------

/// One SU's local view of its sensed channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Occupancy beliefs, `true` = believed busy; indexed like the SU's
    /// sensed-channel list.
    pub beliefs: Vec<bool>,
    /// Raw energy test statistics (Watts), same indexing.
    pub statistics: Vec<f64>,
}

impl Observation {
    /// Flatten for a network input: beliefs as 0/1, statistics normalized
    /// by the noise floor so they sit near unity.
    pub fn encode(&self, noise_var: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.beliefs.len());
        v.extend(self.beliefs.iter().map(|&b| b as u64 as f64));
        v.extend(self.statistics.iter().map(|&t| t / noise_var));
        v
    }
}

/// Hybrid action: a discrete arm plus a transmit power.
///
/// Arm `m < M` selects the SU's `m`-th sensed channel; arm `M` means idle.
/// The power is carried even when idle (it is simply unused).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub arm: usize,
    pub power: f64,
}

impl Action {
    pub fn idle(arms: usize, power: f64) -> Self {
        Self {
            arm: arms - 1,
            power,
        }
    }

    pub fn is_idle(&self, channels_per_su: usize) -> bool {
        self.arm >= channels_per_su
    }
}

/// Network-level utilization metrics for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelUsage {
    /// Fraction of usable idle channels that carried an SU transmission.
    /// 1.0 when there are no idle channels (nothing to use).
    pub idle_utilization: f64,
    /// Fraction of PU-occupied channels that an SU transmitted on.
    /// 0.0 when no channel is occupied.
    pub occupied_utilization: f64,
    /// Number of SUs involved in same-channel collisions.
    pub collisions: f64,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    /// Sum of the per-SU rewards, in SU order.
    pub joint_reward: f64,
    pub empirical_rates: Vec<f64>,
    pub usage: ChannelUsage,
    pub observations: Vec<Observation>,
}

/// Squared channel-gain magnitudes frozen at one transmission instant.
#[derive(Debug, Clone)]
pub struct GainSnapshot {
    /// `su_gain_sq[tx][rx][k]` = `|h_k^{tx,rx}|^2`; the diagonal `tx == rx`
    /// is the SU's own link.
    pub su_gain_sq: Vec<Vec<Vec<f64>>>,
    /// `pu_gain_sq[su][k]` = PU-to-SU gain on channel `k`.
    pub pu_gain_sq: Vec<Vec<f64>>,
}

/// Everything needed to score joint assignments against a frozen instant.
#[derive(Debug, Clone)]
pub struct AllocationSnapshot {
    pub occupancy: Vec<bool>,
    /// Beliefs per SU over its sensed channels.
    pub beliefs: Vec<Vec<bool>>,
    pub gains: GainSnapshot,
}

// ---------------------------------------------------------------------------
// Rate and reward formulas
// ---------------------------------------------------------------------------

/// Received SINR of `su` transmitting on `channel` under the joint choice
/// vector. Interference sums the other SUs sharing the channel; the PU's
/// power enters only when the channel is truly occupied.
pub fn true_sinr(
    su: usize,
    channel: usize,
    choices: &[Option<usize>],
    powers: &[f64],
    gains: &GainSnapshot,
    noise_var: f64,
    pu_power: f64,
    pu_occupied: bool,
) -> Result<f64> {
    if choices[su] != Some(channel) {
        return Err(Error::InvalidInput(format!(
            "SU {su} is not transmitting on channel {channel}"
        )));
    }
    let signal = gains.su_gain_sq[su][su][channel] * powers[su];
    let mut denom = noise_var;
    for (j, &choice) in choices.iter().enumerate() {
        if j != su && choice == Some(channel) {
            denom += gains.su_gain_sq[j][su][channel] * powers[j];
        }
    }
    if pu_occupied {
        denom += gains.pu_gain_sq[su][channel] * pu_power;
    }
    Ok(signal / denom)
}

/// Shannon rate `(B/K) log2(1 + sinr)` in bits/second.
pub fn rate_from_sinr(sinr: f64, bandwidth_hz: f64, channels: usize) -> f64 {
    bandwidth_hz / channels as f64 * (1.0 + sinr).log2()
}

/// Empirical rate of one SU in bits/s/Hz: `log2(1 + snr_estimate)` when it
/// transmits on a believed-idle channel, otherwise zero. The belief gate is
/// multiplicative, so a believed-occupied choice always yields zero.
pub fn empirical_rate(transmitting: bool, believed_occupied: bool, snr_estimate: f64) -> f64 {
    if !transmitting || believed_occupied {
        0.0
    } else {
        (1.0 + snr_estimate).log2()
    }
}

/// Expected long-run rate of one SU under the closed-form sensing model,
/// for reporting only:
/// `(1 - tau/Gamma) * sum_k (1 - belief_k) [ Pr(H0)(1 - Pfa) R0 + Pr(H1)(1 - Pde) R1 ]`.
#[allow(clippy::too_many_arguments)]
pub fn analytic_average_rate(
    window_s: f64,
    block_s: f64,
    beliefs: &[bool],
    idle_probs: &[f64],
    p_fa: &[f64],
    p_de: &[f64],
    rate_idle: &[f64],
    rate_busy: &[f64],
) -> f64 {
    let duty = 1.0 - window_s / block_s;
    let mut acc = 0.0;
    for k in 0..beliefs.len() {
        if beliefs[k] {
            continue;
        }
        acc += idle_probs[k] * (1.0 - p_fa[k]) * rate_idle[k]
            + (1.0 - idle_probs[k]) * (1.0 - p_de[k]) * rate_busy[k];
    }
    duty * acc
}

/// Penalty-shaped reward for one SU.
pub fn reward(
    transmitting: bool,
    believed_occupied: bool,
    empirical_rate: f64,
    occupancy_penalty: f64,
    rate_penalty: f64,
    target_rate: f64,
) -> f64 {
    let occ = if transmitting && believed_occupied {
        occupancy_penalty
    } else {
        0.0
    };
    let rate_term = if empirical_rate >= target_rate {
        empirical_rate
    } else if transmitting {
        -rate_penalty
    } else {
        0.0
    };
    -occ + rate_term
}

/// Utilization metrics for one joint choice against the true occupancy.
pub fn channel_usage(choices: &[Option<usize>], occupancy: &[bool]) -> ChannelUsage {
    let channels = occupancy.len();
    let users = choices.len();
    let mut per_channel = vec![0usize; channels];
    for &c in choices {
        if let Some(k) = c {
            per_channel[k] += 1;
        }
    }
    let occupied = occupancy.iter().filter(|&&b| b).count();
    let idle = channels - occupied;

    let idle_used = (0..channels)
        .filter(|&k| !occupancy[k] && per_channel[k] > 0)
        .count();
    let idle_denom = idle.min(users);
    let idle_utilization = if idle_denom == 0 {
        1.0
    } else {
        idle_used as f64 / idle_denom as f64
    };

    let occ_used = (0..channels)
        .filter(|&k| occupancy[k] && per_channel[k] > 0)
        .count();
    let occupied_utilization = if occupied == 0 {
        0.0
    } else {
        occ_used as f64 / occupied as f64
    };

    let collisions = per_channel
        .iter()
        .filter(|&&c| c >= 2)
        .map(|&c| c as f64)
        .sum();

    ChannelUsage {
        idle_utilization,
        occupied_utilization,
        collisions,
    }
}

/// Score one joint discrete/power assignment against a frozen snapshot.
/// Returns the per-SU rewards, their sum, and the per-SU empirical rates.
/// This is the same composition the live environment applies each step.
pub fn score_assignment(
    snapshot: &AllocationSnapshot,
    cfg: &EnvConfig,
    sensed: &[Vec<usize>],
    arms: &[usize],
    powers: &[f64],
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let n_su = cfg.secondary_users;
    let m = cfg.sensing.channels_per_su;
    let choices: Vec<Option<usize>> = (0..n_su)
        .map(|n| {
            if arms[n] < m {
                Some(sensed[n][arms[n]])
            } else {
                None
            }
        })
        .collect();
    let mut rewards = Vec::with_capacity(n_su);
    let mut rates = Vec::with_capacity(n_su);
    for n in 0..n_su {
        let (r_hat, believed) = match choices[n] {
            Some(k) => {
                let sinr = true_sinr(
                    n,
                    k,
                    &choices,
                    powers,
                    &snapshot.gains,
                    cfg.channel.noise_var,
                    cfg.channel.pu_power[k],
                    snapshot.occupancy[k],
                )?;
                let believed = snapshot.beliefs[n][arms[n]];
                (empirical_rate(true, believed, sinr), believed)
            }
            None => (0.0, false),
        };
        rates.push(r_hat);
        rewards.push(reward(
            choices[n].is_some(),
            believed,
            r_hat,
            cfg.occupancy_penalty,
            cfg.rate_penalty,
            cfg.target_rate,
        ));
    }
    let total = rewards.iter().sum();
    Ok((rewards, total, rates))
}

// ---------------------------------------------------------------------------
// The environment
// ---------------------------------------------------------------------------

pub struct CrnEnv {
    cfg: EnvConfig,
    sensed: Vec<Vec<usize>>,
    occupancy: PuOccupancy,
    /// Fading processes per (tx SU, rx SU, channel).
    su_links: Vec<Vec<Vec<FadingProcess>>>,
    /// PU-to-SU fading per (SU, channel).
    pu_links: Vec<Vec<FadingProcess>>,
    occupancy_rng: ChaCha8Rng,
    sensing_rng: ChaCha8Rng,
    step_index: u64,
    observations: Vec<Observation>,
    last_gains: Option<GainSnapshot>,
}

impl CrnEnv {
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let sensed = cfg.sensed_channels()?;
        let n = cfg.secondary_users;
        let k = cfg.channels();
        let t_c = cfg.coherence_time_s;

        let su_links = (0..n)
            .map(|tx| {
                (0..n)
                    .map(|rx| {
                        (0..k)
                            .map(|ch| {
                                let mean = if tx == rx {
                                    cfg.gain_mean_self
                                } else {
                                    cfg.gain_mean_cross
                                };
                                FadingProcess::new(
                                    t_c,
                                    mean,
                                    derive_seed(seed, TAG_SU_LINK, tx as u64, rx as u64, ch as u64),
                                )
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let pu_links = (0..n)
            .map(|rx| {
                (0..k)
                    .map(|ch| {
                        FadingProcess::new(
                            t_c,
                            cfg.gain_mean_pu,
                            derive_seed(seed, TAG_PU_LINK, rx as u64, ch as u64, 0),
                        )
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        let mut occupancy_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_OCCUPANCY, 0, 0, 0));
        let sensing_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_SENSING, 0, 0, 0));
        let mut occupancy =
            PuOccupancy::new_idle(cfg.p_idle_to_occ.clone(), cfg.p_occ_to_occ.clone())?;
        occupancy.reset_stationary(&mut occupancy_rng)?;

        let mut env = Self {
            cfg,
            sensed,
            occupancy,
            su_links,
            pu_links,
            occupancy_rng,
            sensing_rng,
            step_index: 0,
            observations: Vec::new(),
            last_gains: None,
        };
        env.observations = env.sense_all()?;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn sensed_channels(&self) -> &[Vec<usize>] {
        &self.sensed
    }

    /// Current local observations, one per SU.
    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Ground-truth occupancy. Diagnostics and metrics only; never part of
    /// an agent observation.
    pub fn true_occupancy(&self) -> &[bool] {
        self.occupancy.states()
    }

    /// The channel gains used by the most recent step's transmissions.
    pub fn last_gains(&self) -> Option<&GainSnapshot> {
        self.last_gains.as_ref()
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    fn transmit_time(&self) -> f64 {
        self.step_index as f64 * self.cfg.sensing.block_s + self.cfg.sensing.window_s
    }

    fn gains_at(&mut self, t: f64) -> Result<GainSnapshot> {
        let n = self.cfg.secondary_users;
        let k = self.cfg.channels();
        let mut su_gain_sq = vec![vec![vec![0.0; k]; n]; n];
        for tx in 0..n {
            for rx in 0..n {
                for ch in 0..k {
                    su_gain_sq[tx][rx][ch] = self.su_links[tx][rx][ch].sample_gain(t)?.norm_sqr();
                }
            }
        }
        let mut pu_gain_sq = vec![vec![0.0; k]; n];
        for rx in 0..n {
            for ch in 0..k {
                pu_gain_sq[rx][ch] = self.pu_links[rx][ch].sample_gain(t)?.norm_sqr();
            }
        }
        Ok(GainSnapshot {
            su_gain_sq,
            pu_gain_sq,
        })
    }

    /// Freeze the current instant (occupancy, beliefs, transmit-time gains)
    /// for offline assignment scoring. Does not advance the environment;
    /// a following [`step`](Self::step) sees the same gains.
    pub fn snapshot(&mut self) -> Result<AllocationSnapshot> {
        let gains = self.gains_at(self.transmit_time())?;
        Ok(AllocationSnapshot {
            occupancy: self.occupancy.states().to_vec(),
            beliefs: self
                .observations
                .iter()
                .map(|o| o.beliefs.clone())
                .collect(),
            gains,
        })
    }

    fn validate_actions(&self, actions: &[Action]) -> Result<()> {
        let m = self.cfg.sensing.channels_per_su;
        if actions.len() != self.cfg.secondary_users {
            return Err(Error::InvalidInput(format!(
                "got {} actions for {} SUs",
                actions.len(),
                self.cfg.secondary_users
            )));
        }
        for (n, a) in actions.iter().enumerate() {
            if a.arm > m {
                return Err(Error::InvalidInput(format!(
                    "SU {n}: arm {} out of range (idle arm is {m})",
                    a.arm
                )));
            }
            if !a.power.is_finite() || !(a.power > 0.0) || a.power > self.cfg.max_power[n] {
                return Err(Error::InvalidInput(format!(
                    "SU {n}: power {} outside (0, {}]",
                    a.power, self.cfg.max_power[n]
                )));
            }
        }
        Ok(())
    }

    /// Execute one joint action: score the transmissions against the block's
    /// occupancy, then advance occupancy and fading and sense the next block.
    pub fn step(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        self.validate_actions(actions)?;
        let snapshot = self.snapshot()?;
        let arms: Vec<usize> = actions.iter().map(|a| a.arm).collect();
        let powers: Vec<f64> = actions.iter().map(|a| a.power).collect();
        let (rewards, joint_reward, empirical_rates) =
            score_assignment(&snapshot, &self.cfg, &self.sensed, &arms, &powers)?;

        let m = self.cfg.sensing.channels_per_su;
        let choices: Vec<Option<usize>> = (0..actions.len())
            .map(|n| {
                if arms[n] < m {
                    Some(self.sensed[n][arms[n]])
                } else {
                    None
                }
            })
            .collect();
        let usage = channel_usage(&choices, &snapshot.occupancy);
        self.last_gains = Some(snapshot.gains);

        // Next block: occupancy transitions once per block, then sensing.
        self.step_index += 1;
        self.occupancy.step(&mut self.occupancy_rng);
        self.observations = self.sense_all()?;

        Ok(StepOutcome {
            rewards,
            joint_reward,
            empirical_rates,
            usage,
            observations: self.observations.clone(),
        })
    }

    /// Episode boundary: redraw occupancy from its stationary distribution
    /// and re-sense. Fading processes are time-indexed and simply continue.
    pub fn reset_episode(&mut self) -> Result<()> {
        self.occupancy.reset_stationary(&mut self.occupancy_rng)?;
        self.observations = self.sense_all()?;
        Ok(())
    }

    /// Sense every SU's assigned channels at the current block start.
    fn sense_all(&mut self) -> Result<Vec<Observation>> {
        let block_start = self.step_index as f64 * self.cfg.sensing.block_s;
        let slot = self.cfg.sensing.per_channel_window_s();
        let mut obs = Vec::with_capacity(self.cfg.secondary_users);
        for n in 0..self.cfg.secondary_users {
            let mut beliefs = Vec::with_capacity(self.sensed[n].len());
            let mut statistics = Vec::with_capacity(self.sensed[n].len());
            for (j, &ch) in self.sensed[n].iter().enumerate() {
                let samples = collect_samples(
                    self.occupancy.is_occupied(ch),
                    &mut self.pu_links[n][ch],
                    block_start + j as f64 * slot,
                    self.cfg.channel.noise_var,
                    self.cfg.channel.pu_snr[n][ch],
                    &self.cfg.sensing,
                    &mut self.sensing_rng,
                )?;
                let t = test_statistic(&samples)?;
                beliefs.push(detect(t, self.cfg.sensing.thresholds[n][ch]));
                statistics.push(t);
            }
            obs.push(Observation {
                beliefs,
                statistics,
            });
        }
        Ok(obs)
    }
}

// ===========================================================================
// Tests
// ===========================================================================
