//! Multi-agent hybrid soft actor-critic.
//!
//! Each agent owns an actor that maps its local observation to a discrete
//! channel distribution (one arm per sensed channel plus idle) and a
//! squashed-Gaussian transmit power. Critics are D-headed: they read the
//! local observation and the continuous action and output one value per
//! discrete arm, so discrete actions never enter a critic as inputs. Two
//! independent critic sets plus target copies tame overestimation.
//!
//! Training is centralized: per-agent utilities are combined by a
//! hypernetwork-generated two-layer mix whose weights pass through an
//! absolute value, keeping the joint value monotone in every agent's
//! utility. Execution stays decentralized: acting uses only the local
//! observation.
//!
//! Entropy regularization is hybrid with two auto-tuned temperatures: one
//! scales the exact categorical entropy, the other the continuous
//! log-density measured in squashed `(-1, 1)` units so the configured
//! target entropies are attainable regardless of the power scale.
//!
//! All gradients are hand-derived and exact: the discrete head uses the
//! full expectation over arms, the continuous head the reparameterization
//! path through the critics' input gradients; every loss here passes
//! central finite-difference checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::derive_seed;
use crate::env::{Action, CrnEnv, EnvConfig};
use crate::nn::{entropy, log_softmax, polyak_update, softmax, Activation, Adam, DenseNet, Trace};
use crate::{Error, Result};

const TAG_TRAINER: u64 = 0x7121;
const LOG_ALPHA_BOUNDS: (f64, f64) = (-20.0, 10.0);

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MhsacConfig {
    /// Hidden layer widths shared by actors and critics (ELU activations).
    pub hidden_layers: Vec<usize>,
    /// Width of the mixing embedding.
    pub mixer_embed: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    /// Discount factor.
    pub discount: f64,
    /// Target-network blend coefficient applied after every critic update.
    pub polyak: f64,
    pub minibatch: usize,
    /// Every this many critic updates, run an equal-length burst of
    /// actor/temperature updates (delayed, compensated policy updates).
    pub policy_frequency: usize,
    /// Environment steps of uniform exploration before any gradient update.
    pub warmup_steps: usize,
    pub buffer_capacity: usize,
    pub target_entropy_discrete: f64,
    pub target_entropy_continuous: f64,
    /// Initial value of both temperatures.
    pub initial_temperature: f64,
    pub total_timesteps: usize,
    pub episode_length: usize,
    /// Clamp range for the actor's log standard deviation head.
    pub log_std_bounds: (f64, f64),
}

impl Default for MhsacConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![256, 128, 64],
            mixer_embed: 32,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            temperature_lr: 1e-3,
            discount: 0.4,
            polyak: 0.005,
            minibatch: 64,
            policy_frequency: 10,
            warmup_steps: 1000,
            buffer_capacity: 30_000,
            target_entropy_discrete: 0.02,
            target_entropy_continuous: 0.0,
            initial_temperature: 0.2,
            total_timesteps: 60_000,
            episode_length: 3000,
            log_std_bounds: (-20.0, 2.0),
        }
    }
}

impl MhsacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.is_empty() || self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        if self.mixer_embed == 0 {
            return Err(Error::Config("mixer embedding must be positive".into()));
        }
        if self.minibatch == 0 || self.minibatch > self.buffer_capacity {
            return Err(Error::Config(format!(
                "minibatch {} must be in 1..=buffer capacity {}",
                self.minibatch, self.buffer_capacity
            )));
        }
        if self.policy_frequency == 0 {
            return Err(Error::Config("policy frequency must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Config(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return Err(Error::Config(format!(
                "polyak coefficient must lie in (0, 1], got {}",
                self.polyak
            )));
        }
        if self.log_std_bounds.0 >= self.log_std_bounds.1 {
            return Err(Error::Config("log-std clamp range is empty".into()));
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("temperature_lr", self.temperature_lr),
        ] {
            if !(lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(self.initial_temperature > 0.0) {
            return Err(Error::Config("initial temperature must be positive".into()));
        }
        if self.episode_length == 0 {
            return Err(Error::Config("episode length must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Actor
// ---------------------------------------------------------------------------

/// Policy network: trunk plus a linear head emitting `arms` logits, the
/// power mean, and the power log-std.
#[derive(Debug, Clone)]
pub struct ActorNet {
    net: DenseNet,
    arms: usize,
    log_std_bounds: (f64, f64),
}

/// One actor forward pass, split into head quantities.
pub struct ActorEval {
    pub logits: Vec<f64>,
    pub mu: f64,
    /// Clamped log standard deviation.
    pub log_sigma: f64,
    /// Whether the clamp is inactive (gradients pass through).
    pub sigma_grad_open: bool,
    trace: Trace,
}

impl ActorNet {
    fn new(
        obs_width: usize,
        arms: usize,
        hidden: &[usize],
        bounds: (f64, f64),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut widths = vec![obs_width];
        widths.extend_from_slice(hidden);
        widths.push(arms + 2);
        let mut acts = vec![Activation::Elu; hidden.len()];
        acts.push(Activation::Linear);
        Ok(Self {
            net: DenseNet::random(&widths, &acts, rng)?,
            arms,
            log_std_bounds: bounds,
        })
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn eval(&self, obs: &[f64]) -> Result<ActorEval> {
        let trace = self.net.forward_trace(obs)?;
        let out = trace.output();
        let logits = out[..self.arms].to_vec();
        let mu = out[self.arms];
        let raw = out[self.arms + 1];
        let (lo, hi) = self.log_std_bounds;
        Ok(ActorEval {
            logits,
            mu,
            log_sigma: raw.clamp(lo, hi),
            sigma_grad_open: raw > lo && raw < hi,
            trace,
        })
    }
}

/// Log-density of the squashed variate `v = tanh(mu + sigma * eps)` over
/// `(-1, 1)`; the units in which the continuous target entropy is stated.
fn squashed_log_density(eps: f64, log_sigma: f64, u: f64) -> f64 {
    -0.5 * eps * eps
        - log_sigma
        - 0.5 * (2.0 * std::f64::consts::PI).ln()
        - crate::nn::tanh_log_jacobian(u)
}

// ---------------------------------------------------------------------------
// Critic
// ---------------------------------------------------------------------------

/// D-headed critic: `(local observation, normalized power) -> one value per
/// discrete arm`.
#[derive(Debug, Clone)]
pub struct CriticNet {
    net: DenseNet,
}

impl CriticNet {
    fn new(obs_width: usize, arms: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut widths = vec![obs_width + 1];
        widths.extend_from_slice(hidden);
        widths.push(arms);
        let mut acts = vec![Activation::Elu; hidden.len()];
        acts.push(Activation::Linear);
        Ok(Self {
            net: DenseNet::random(&widths, &acts, rng)?,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn values(&self, obs: &[f64], power_norm: f64) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(obs.len() + 1);
        input.extend_from_slice(obs);
        input.push(power_norm);
        self.net.forward(&input)
    }
}

// ---------------------------------------------------------------------------
// Mixer
// ---------------------------------------------------------------------------

/// Monotone value mixer. Hypernetworks conditioned on the concatenated
/// joint observation emit the two mixing layers' weights (passed through an
/// absolute value) and biases; the joint utility is
/// `w2 . elu(W1^T q + b1) + b2` with `W1, w2 >= 0` elementwise, so
/// `dQ_tot/dq_n >= 0` everywhere.
#[derive(Debug, Clone)]
pub struct Mixer {
    pub hyper_w1: DenseNet,
    pub hyper_b1: DenseNet,
    pub hyper_w2: DenseNet,
    pub hyper_b2: DenseNet,
    agents: usize,
    embed: usize,
}

/// Recorded mixer forward pass.
pub struct MixerEval {
    w1_raw: Vec<f64>,
    w2_raw: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden_post: Vec<f64>,
    qs: Vec<f64>,
    t_w1: Trace,
    t_b1: Trace,
    t_w2: Trace,
    t_b2: Trace,
    pub total: f64,
}

/// Parameter gradients for one mixer, same shapes as its four hypernets.
pub struct MixerGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mixer {
    pub fn new(
        agents: usize,
        joint_width: usize,
        embed: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            hyper_w1: DenseNet::random(&[joint_width, agents * embed], &[Activation::Linear], rng)?,
            hyper_b1: DenseNet::random(&[joint_width, embed], &[Activation::Linear], rng)?,
            hyper_w2: DenseNet::random(&[joint_width, embed], &[Activation::Linear], rng)?,
            hyper_b2: DenseNet::random(
                &[joint_width, embed, 1],
                &[Activation::Elu, Activation::Linear],
                rng,
            )?,
            agents,
            embed,
        })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn zero_grads(&self) -> MixerGrads {
        MixerGrads {
            w1: vec![0.0; self.hyper_w1.param_count()],
            b1: vec![0.0; self.hyper_b1.param_count()],
            w2: vec![0.0; self.hyper_w2.param_count()],
            b2: vec![0.0; self.hyper_b2.param_count()],
        }
    }

    pub fn forward(&self, qs: &[f64], joint_obs: &[f64]) -> Result<f64> {
        Ok(self.forward_trace(qs, joint_obs)?.total)
    }

    pub fn forward_trace(&self, qs: &[f64], joint_obs: &[f64]) -> Result<MixerEval> {
        if qs.len() != self.agents {
            return Err(Error::ShapeMismatch(format!(
                "mixer got {} utilities for {} agents",
                qs.len(),
                self.agents
            )));
        }
        let t_w1 = self.hyper_w1.forward_trace(joint_obs)?;
        let t_b1 = self.hyper_b1.forward_trace(joint_obs)?;
        let t_w2 = self.hyper_w2.forward_trace(joint_obs)?;
        let t_b2 = self.hyper_b2.forward_trace(joint_obs)?;
        let w1_raw = t_w1.output().to_vec();
        let b1 = t_b1.output().to_vec();
        let w2_raw = t_w2.output().to_vec();
        let b2 = t_b2.output()[0];

        let mut hidden_pre = vec![0.0; self.embed];
        for e in 0..self.embed {
            let mut acc = b1[e];
            for (n, &q) in qs.iter().enumerate() {
                acc += w1_raw[n * self.embed + e].abs() * q;
            }
            hidden_pre[e] = acc;
        }
        let hidden_post: Vec<f64> = hidden_pre
            .iter()
            .map(|&z| Activation::Elu.apply(z))
            .collect();
        let mut total = b2;
        for e in 0..self.embed {
            total += w2_raw[e].abs() * hidden_post[e];
        }
        Ok(MixerEval {
            w1_raw,
            w2_raw,
            hidden_pre,
            hidden_post,
            qs: qs.to_vec(),
            t_w1,
            t_b1,
            t_w2,
            t_b2,
            total,
        })
    }

    /// Backpropagate `upstream = dL/dQ_tot`; accumulates hypernet parameter
    /// gradients and returns `dL/dq_n` for every agent.
    pub fn backward(
        &self,
        eval: &MixerEval,
        upstream: f64,
        grads: &mut MixerGrads,
    ) -> Result<Vec<f64>> {
        self.hyper_b2
            .backward(&eval.t_b2, &[upstream], &mut grads.b2)?;

        let d_w2: Vec<f64> = (0..self.embed)
            .map(|e| upstream * eval.hidden_post[e] * sign(eval.w2_raw[e]))
            .collect();
        self.hyper_w2.backward(&eval.t_w2, &d_w2, &mut grads.w2)?;

        let d_hidden_pre: Vec<f64> = (0..self.embed)
            .map(|e| {
                upstream
                    * eval.w2_raw[e].abs()
                    * Activation::Elu.derivative(eval.hidden_pre[e], eval.hidden_post[e])
            })
            .collect();
        self.hyper_b1
            .backward(&eval.t_b1, &d_hidden_pre, &mut grads.b1)?;

        let mut d_w1 = vec![0.0; self.agents * self.embed];
        for n in 0..self.agents {
            for e in 0..self.embed {
                d_w1[n * self.embed + e] =
                    eval.qs[n] * d_hidden_pre[e] * sign(eval.w1_raw[n * self.embed + e]);
            }
        }
        self.hyper_w1.backward(&eval.t_w1, &d_w1, &mut grads.w1)?;

        let mut dq = vec![0.0; self.agents];
        for n in 0..self.agents {
            for e in 0..self.embed {
                dq[n] += eval.w1_raw[n * self.embed + e].abs() * d_hidden_pre[e];
            }
        }
        Ok(dq)
    }

    fn polyak_from(&mut self, source: &Mixer, coeff: f64) {
        polyak_update(self.hyper_w1.params_mut(), source.hyper_w1.params(), coeff);
        polyak_update(self.hyper_b1.params_mut(), source.hyper_b1.params(), coeff);
        polyak_update(self.hyper_w2.params_mut(), source.hyper_w2.params(), coeff);
        polyak_update(self.hyper_b2.params_mut(), source.hyper_b2.params(), coeff);
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

/// One stored joint transition. Observations are kept in encoded form.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Vec<Vec<f64>>,
    pub arms: Vec<usize>,
    /// Powers normalized by each SU's maximum, in `(0, 1]`.
    pub powers_norm: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<Vec<f64>>,
}

/// Fixed-capacity FIFO ring with uniform without-replacement sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: Vec<Transition>,
    head: usize,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            data: Vec::new(),
            head: 0,
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn sample_indices(&self, count: usize, rng: &mut impl Rng) -> Vec<usize> {
        rand::seq::index::sample(rng, self.data.len(), count).into_vec()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.data.iter()
    }
}

// ---------------------------------------------------------------------------
// Temperatures
// ---------------------------------------------------------------------------

/// Dual auto-tuned entropy temperatures, log-parameterized so they stay
/// strictly positive.
#[derive(Debug, Clone)]
pub struct Temperatures {
    log_alpha_d: f64,
    log_alpha_c: f64,
    adam_d: Adam,
    adam_c: Adam,
    pub target_discrete: f64,
    pub target_continuous: f64,
}

impl Temperatures {
    fn new(initial: f64, lr: f64, target_d: f64, target_c: f64) -> Self {
        Self {
            log_alpha_d: initial.ln(),
            log_alpha_c: initial.ln(),
            adam_d: Adam::new(lr, 1),
            adam_c: Adam::new(lr, 1),
            target_discrete: target_d,
            target_continuous: target_c,
        }
    }

    pub fn alpha_d(&self) -> f64 {
        self.log_alpha_d.exp()
    }

    pub fn alpha_c(&self) -> f64 {
        self.log_alpha_c.exp()
    }

    pub fn set(&mut self, alpha_d: f64, alpha_c: f64) {
        self.log_alpha_d = alpha_d.ln();
        self.log_alpha_c = alpha_c.ln();
    }

    /// Loss `alpha * (H - H_target)` per temperature; one Adam step on each
    /// log-temperature. An entropy deficit raises the temperature, an
    /// excess lowers it.
    pub fn update(&mut self, entropy_d: f64, entropy_c: f64) -> Result<(f64, f64)> {
        let g_d = self.alpha_d() * (entropy_d - self.target_discrete);
        let g_c = self.alpha_c() * (entropy_c - self.target_continuous);
        let mut p = [self.log_alpha_d];
        self.adam_d.step(&mut p, &[g_d])?;
        self.log_alpha_d = p[0].clamp(LOG_ALPHA_BOUNDS.0, LOG_ALPHA_BOUNDS.1);
        let mut p = [self.log_alpha_c];
        self.adam_c.step(&mut p, &[g_c])?;
        self.log_alpha_c = p[0].clamp(LOG_ALPHA_BOUNDS.0, LOG_ALPHA_BOUNDS.1);
        Ok((self.alpha_d(), self.alpha_c()))
    }
}

/// Per-agent entropy bonus: temperature-weighted categorical entropy plus
/// the continuous surprisal. The expectation of the continuous term over
/// the discrete arms collapses because the probabilities sum to one.
pub fn joint_entropy(
    discrete_probs: &[f64],
    continuous_log_prob: f64,
    alpha_d: f64,
    alpha_c: f64,
) -> f64 {
    alpha_d * entropy(discrete_probs) + alpha_c * (-continuous_log_prob)
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

/// A minibatch in struct-of-arrays form.
pub struct Batch {
    pub obs: Vec<Vec<Vec<f64>>>,
    pub joint_obs: Vec<Vec<f64>>,
    pub arms: Vec<Vec<usize>>,
    pub powers_norm: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Vec<Vec<f64>>>,
    pub next_joint_obs: Vec<Vec<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions<'a>(transitions: impl Iterator<Item = &'a Transition>) -> Self {
        let mut b = Batch {
            obs: Vec::new(),
            joint_obs: Vec::new(),
            arms: Vec::new(),
            powers_norm: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            next_joint_obs: Vec::new(),
        };
        for t in transitions {
            b.joint_obs.push(t.obs.concat());
            b.next_joint_obs.push(t.next_obs.concat());
            b.obs.push(t.obs.clone());
            b.next_obs.push(t.next_obs.clone());
            b.arms.push(t.arms.clone());
            b.powers_norm.push(t.powers_norm.clone());
            b.rewards.push(t.reward);
        }
        b
    }
}

/// Frozen standard-normal draws for the reparameterized continuous actions:
/// one per (sample, agent) for the current observations and one for the
/// next observations. Fixing these makes every loss a deterministic,
/// finite-difference-checkable function of the parameters.
pub struct BatchNoise {
    pub current: Vec<Vec<f64>>,
    pub next: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

/// Per-step log record emitted by the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub joint_reward: f64,
    pub idle_utilization: f64,
    pub occupied_utilization: f64,
    pub collisions: f64,
    pub powers: Vec<f64>,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_d: f64,
    pub alpha_c: f64,
}

/// Result of a full training run.
pub struct TrainingRun {
    pub records: Vec<StepRecord>,
    pub gradient_updates: u64,
}

/// Gradients of the critic loss for one minibatch.
pub struct CriticGrads {
    /// `[critic set][agent]`, flat per network.
    pub critics: Vec<Vec<Vec<f64>>>,
    pub mixers: Vec<MixerGrads>,
}

pub struct Trainer {
    cfg: MhsacConfig,
    agents: usize,
    obs_width: usize,
    arms: usize,
    max_power: Vec<f64>,
    noise_var: f64,
    actors: Vec<ActorNet>,
    critics: Vec<Vec<CriticNet>>,
    target_critics: Vec<Vec<CriticNet>>,
    mixers: Vec<Mixer>,
    target_mixers: Vec<Mixer>,
    temperatures: Temperatures,
    actor_opts: Vec<Adam>,
    critic_opts: Vec<Vec<Adam>>,
    mixer_opts: Vec<[Adam; 4]>,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    critic_updates: u64,
}

impl Trainer {
    pub fn new(env_cfg: &EnvConfig, cfg: MhsacConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        env_cfg.validate()?;
        let agents = env_cfg.secondary_users;
        let obs_width = env_cfg.observation_width();
        let arms = env_cfg.arms();
        let joint_width = agents * obs_width;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_TRAINER, 0, 0, 0));

        let actors = (0..agents)
            .map(|_| {
                ActorNet::new(
                    obs_width,
                    arms,
                    &cfg.hidden_layers,
                    cfg.log_std_bounds,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut critics = Vec::with_capacity(2);
        for _ in 0..2 {
            critics.push(
                (0..agents)
                    .map(|_| CriticNet::new(obs_width, arms, &cfg.hidden_layers, &mut rng))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let target_critics = critics.clone();
        let mixers = vec![
            Mixer::new(agents, joint_width, cfg.mixer_embed, &mut rng)?,
            Mixer::new(agents, joint_width, cfg.mixer_embed, &mut rng)?,
        ];
        let target_mixers = mixers.clone();

        let actor_opts = actors
            .iter()
            .map(|a| Adam::new(cfg.actor_lr, a.net.param_count()))
            .collect();
        let critic_opts = critics
            .iter()
            .map(|set| {
                set.iter()
                    .map(|c| Adam::new(cfg.critic_lr, c.net.param_count()))
                    .collect()
            })
            .collect();
        let mixer_opts = mixers
            .iter()
            .map(|m| {
                [
                    Adam::new(cfg.critic_lr, m.hyper_w1.param_count()),
                    Adam::new(cfg.critic_lr, m.hyper_b1.param_count()),
                    Adam::new(cfg.critic_lr, m.hyper_w2.param_count()),
                    Adam::new(cfg.critic_lr, m.hyper_b2.param_count()),
                ]
            })
            .collect();
        let temperatures = Temperatures::new(
            cfg.initial_temperature,
            cfg.temperature_lr,
            cfg.target_entropy_discrete,
            cfg.target_entropy_continuous,
        );
        let buffer = ReplayBuffer::new(cfg.buffer_capacity);

        Ok(Self {
            cfg,
            agents,
            obs_width,
            arms,
            max_power: env_cfg.max_power.clone(),
            noise_var: env_cfg.channel.noise_var,
            actors,
            critics,
            target_critics,
            mixers,
            target_mixers,
            temperatures,
            actor_opts,
            critic_opts,
            mixer_opts,
            buffer,
            rng,
            critic_updates: 0,
        })
    }

    pub fn config(&self) -> &MhsacConfig {
        &self.cfg
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn temperatures(&self) -> &Temperatures {
        &self.temperatures
    }

    pub fn temperatures_mut(&mut self) -> &mut Temperatures {
        &mut self.temperatures
    }

    /// Critic gradient steps taken so far.
    pub fn gradient_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor(&self, agent: usize) -> &ActorNet {
        &self.actors[agent]
    }

    pub fn actor_mut(&mut self, agent: usize) -> &mut ActorNet {
        &mut self.actors[agent]
    }

    pub fn critic(&self, set: usize, agent: usize) -> &CriticNet {
        &self.critics[set][agent]
    }

    pub fn critic_mut(&mut self, set: usize, agent: usize) -> &mut CriticNet {
        &mut self.critics[set][agent]
    }

    pub fn target_critic_mut(&mut self, set: usize, agent: usize) -> &mut CriticNet {
        &mut self.target_critics[set][agent]
    }

    pub fn mixer(&self, set: usize) -> &Mixer {
        &self.mixers[set]
    }

    pub fn mixer_mut(&mut self, set: usize) -> &mut Mixer {
        &mut self.mixers[set]
    }

    pub fn target_mixer_mut(&mut self, set: usize) -> &mut Mixer {
        &mut self.target_mixers[set]
    }

    // -- acting --------------------------------------------------------------

    /// Stochastic action from agent `n`'s policy.
    pub fn act(&mut self, agent: usize, obs: &[f64]) -> Result<Action> {
        let eval = self.actors[agent].eval(obs)?;
        let sample = crate::nn::categorical_from_logits(&eval.logits, &mut self.rng)?;
        let eps: f64 = self.rng.sample(StandardNormal);
        let sigma = eval.log_sigma.exp();
        // Clamp away from exact tanh saturation so the power stays in
        // (0, p_max].
        let v = (eval.mu + sigma * eps).tanh().clamp(-1.0 + 1e-12, 1.0);
        Ok(Action {
            arm: sample.index,
            power: self.max_power[agent] * (v + 1.0) / 2.0,
        })
    }

    /// Deterministic action: argmax arm, tanh-squashed mean power.
    pub fn act_deterministic(&self, agent: usize, obs: &[f64]) -> Result<Action> {
        let eval = self.actors[agent].eval(obs)?;
        let mut arm = 0;
        for (i, &z) in eval.logits.iter().enumerate() {
            if z > eval.logits[arm] {
                arm = i;
            }
        }
        let v = eval.mu.tanh().clamp(-1.0 + 1e-12, 1.0);
        Ok(Action {
            arm,
            power: self.max_power[agent] * (v + 1.0) / 2.0,
        })
    }

    fn uniform_action(&mut self, agent: usize) -> Action {
        let arm = self.rng.gen_range(0..self.arms);
        let u: f64 = self.rng.gen();
        Action {
            arm,
            power: self.max_power[agent] * (1.0 - u),
        }
    }

    // -- replay ----------------------------------------------------------------

    pub fn push_transition(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    pub fn sample_batch(&mut self) -> Result<Batch> {
        if self.buffer.len() < self.cfg.minibatch {
            return Err(Error::InvalidInput(format!(
                "buffer holds {} transitions, need at least {}",
                self.buffer.len(),
                self.cfg.minibatch
            )));
        }
        let idx = self
            .buffer
            .sample_indices(self.cfg.minibatch, &mut self.rng);
        Ok(Batch::from_transitions(
            idx.iter().map(|&i| self.buffer.get(i)),
        ))
    }

    pub fn draw_noise(&mut self, batch: usize) -> BatchNoise {
        let agents = self.agents;
        let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..batch)
                .map(|_| (0..agents).map(|_| rng.sample(StandardNormal)).collect())
                .collect()
        };
        let current = draw(&mut self.rng);
        let next = draw(&mut self.rng);
        BatchNoise { current, next }
    }

    // -- targets -----------------------------------------------------------

    /// Per-sample regression targets `r + gamma * min_j Q_tot^targ_j`, with
    /// the per-agent target utilities `pi_d^T q_targ + entropy bonus`
    /// evaluated at resampled continuous actions and mixed by the target
    /// mixers.
    pub fn target_values(&self, batch: &Batch, noise: &BatchNoise) -> Result<Vec<f64>> {
        let alpha_d = self.temperatures.alpha_d();
        let alpha_c = self.temperatures.alpha_c();
        let mut out = Vec::with_capacity(batch.len());
        for b in 0..batch.len() {
            let mut utilities = [
                Vec::with_capacity(self.agents),
                Vec::with_capacity(self.agents),
            ];
            for n in 0..self.agents {
                let eval = self.actors[n].eval(&batch.next_obs[b][n])?;
                let probs = softmax(&eval.logits);
                let eps = noise.next[b][n];
                let sigma = eval.log_sigma.exp();
                let u = eval.mu + sigma * eps;
                let p_norm = (u.tanh() + 1.0) / 2.0;
                let log_pi_c = squashed_log_density(eps, eval.log_sigma, u);
                let bonus = joint_entropy(&probs, log_pi_c, alpha_d, alpha_c);
                for (j, utils) in utilities.iter_mut().enumerate() {
                    let q = self.target_critics[j][n].values(&batch.next_obs[b][n], p_norm)?;
                    let expect: f64 = probs.iter().zip(&q).map(|(&p, &v)| p * v).sum();
                    utils.push(expect + bonus);
                }
            }
            let q0 = self.target_mixers[0].forward(&utilities[0], &batch.next_joint_obs[b])?;
            let q1 = self.target_mixers[1].forward(&utilities[1], &batch.next_joint_obs[b])?;
            out.push(batch.rewards[b] + self.cfg.discount * q0.min(q1));
        }
        Ok(out)
    }

    // -- critic loss ---------------------------------------------------------

    /// The critic loss for fixed noise:
    /// `1/2 sum_{i=1,2} mean_b (Q_tot_i,b - y_b)^2`.
    pub fn critic_loss(&self, batch: &Batch, noise: &BatchNoise) -> Result<f64> {
        let targets = self.target_values(batch, noise)?;
        let mut loss = 0.0;
        for i in 0..2 {
            for b in 0..batch.len() {
                let total = self.mixed_value(i, batch, b)?;
                let r = total - targets[b];
                loss += 0.5 * r * r / batch.len() as f64;
            }
        }
        Ok(loss)
    }

    fn mixed_value(&self, set: usize, batch: &Batch, b: usize) -> Result<f64> {
        let qs = (0..self.agents)
            .map(|n| {
                let q = self.critics[set][n].values(&batch.obs[b][n], batch.powers_norm[b][n])?;
                Ok(q[batch.arms[b][n]])
            })
            .collect::<Result<Vec<_>>>()?;
        self.mixers[set].forward(&qs, &batch.joint_obs[b])
    }

    /// Loss and exact gradients for both critic sets and both mixers.
    pub fn critic_grads(&self, batch: &Batch, noise: &BatchNoise) -> Result<(f64, CriticGrads)> {
        let targets = self.target_values(batch, noise)?;
        let scale = 1.0 / batch.len() as f64;
        let mut grads = CriticGrads {
            critics: self
                .critics
                .iter()
                .map(|set| set.iter().map(|c| vec![0.0; c.net.param_count()]).collect())
                .collect(),
            mixers: self.mixers.iter().map(|m| m.zero_grads()).collect(),
        };
        let mut loss = 0.0;
        for i in 0..2 {
            for b in 0..batch.len() {
                let mut qs = Vec::with_capacity(self.agents);
                let mut traces = Vec::with_capacity(self.agents);
                for n in 0..self.agents {
                    let mut input = batch.obs[b][n].clone();
                    input.push(batch.powers_norm[b][n]);
                    let trace = self.critics[i][n].net.forward_trace(&input)?;
                    qs.push(trace.output()[batch.arms[b][n]]);
                    traces.push(trace);
                }
                let mix = self.mixers[i].forward_trace(&qs, &batch.joint_obs[b])?;
                let resid = mix.total - targets[b];
                loss += 0.5 * resid * resid * scale;
                let dq = self.mixers[i].backward(&mix, resid * scale, &mut grads.mixers[i])?;
                for n in 0..self.agents {
                    let mut upstream = vec![0.0; self.arms];
                    upstream[batch.arms[b][n]] = dq[n];
                    self.critics[i][n].net.backward(
                        &traces[n],
                        &upstream,
                        &mut grads.critics[i][n],
                    )?;
                }
            }
        }
        Ok((loss, grads))
    }

    /// One critic regression step: both critic sets and both mixers move.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<f64> {
        let noise = self.draw_noise(batch.len());
        let (loss, grads) = self.critic_grads(batch, &noise)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("critic loss {loss}")));
        }
        for i in 0..2 {
            for n in 0..self.agents {
                self.critic_opts[i][n]
                    .step(self.critics[i][n].net.params_mut(), &grads.critics[i][n])?;
            }
            let m = &mut self.mixers[i];
            let g = &grads.mixers[i];
            self.mixer_opts[i][0].step(m.hyper_w1.params_mut(), &g.w1)?;
            self.mixer_opts[i][1].step(m.hyper_b1.params_mut(), &g.b1)?;
            self.mixer_opts[i][2].step(m.hyper_w2.params_mut(), &g.w2)?;
            self.mixer_opts[i][3].step(m.hyper_b2.params_mut(), &g.b2)?;
        }
        Ok(loss)
    }

    // -- actor loss ------------------------------------------------------------

    /// The actor objective with critics frozen:
    /// `mean_b sum_n [ pi_d . (alpha_d ln pi_d - min_j q_j) + alpha_c ln pi_c ]`,
    /// continuous actions reparameterized through the critics.
    pub fn actor_loss(&self, batch: &Batch, noise: &BatchNoise) -> Result<f64> {
        Ok(self.actor_pass(batch, noise, None)?.0)
    }

    /// Loss plus exact per-actor gradients and the batch-mean entropies
    /// (discrete exact, continuous sampled) used by the temperature update.
    pub fn actor_grads(
        &self,
        batch: &Batch,
        noise: &BatchNoise,
    ) -> Result<(f64, Vec<Vec<f64>>, f64, f64)> {
        let mut grads: Vec<Vec<f64>> = self
            .actors
            .iter()
            .map(|a| vec![0.0; a.net.param_count()])
            .collect();
        let (loss, h_d, h_c) = self.actor_pass(batch, noise, Some(&mut grads))?;
        Ok((loss, grads, h_d, h_c))
    }

    fn actor_pass(
        &self,
        batch: &Batch,
        noise: &BatchNoise,
        mut grads: Option<&mut Vec<Vec<f64>>>,
    ) -> Result<(f64, f64, f64)> {
        let alpha_d = self.temperatures.alpha_d();
        let alpha_c = self.temperatures.alpha_c();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut mean_h_d = 0.0;
        let mut mean_h_c = 0.0;
        let mut scratch: Vec<Vec<f64>> = self
            .critics
            .iter()
            .map(|set| vec![0.0; set[0].net.param_count()])
            .collect();
        for b in 0..batch.len() {
            for n in 0..self.agents {
                let obs = &batch.obs[b][n];
                let eval = self.actors[n].eval(obs)?;
                let probs = softmax(&eval.logits);
                let log_probs = log_softmax(&eval.logits);
                let eps = noise.current[b][n];
                let sigma = eval.log_sigma.exp();
                let u = eval.mu + sigma * eps;
                let v = u.tanh();
                let p_norm = (v + 1.0) / 2.0;
                let log_pi_c = squashed_log_density(eps, eval.log_sigma, u);

                let mut input = obs.clone();
                input.push(p_norm);
                let t0 = self.critics[0][n].net.forward_trace(&input)?;
                let t1 = self.critics[1][n].net.forward_trace(&input)?;
                let q0 = t0.output();
                let q1 = t1.output();
                let take_first: Vec<bool> = q0.iter().zip(q1).map(|(&a, &c)| a <= c).collect();
                let q_min: Vec<f64> = q0.iter().zip(q1).map(|(&a, &c)| a.min(c)).collect();

                let s: Vec<f64> = (0..self.arms)
                    .map(|d| alpha_d * log_probs[d] - q_min[d])
                    .collect();
                let expectation: f64 = probs.iter().zip(&s).map(|(&p, &x)| p * x).sum();
                loss += (expectation + alpha_c * log_pi_c) * scale;
                mean_h_d += entropy(&probs) * scale / self.agents as f64;
                mean_h_c += -log_pi_c * scale / self.agents as f64;

                if let Some(gr) = grads.as_deref_mut() {
                    // Discrete head: d/dz_k (pi . s) = pi_k (s_k - pi . s);
                    // the alpha_d ln pi correction sums to zero.
                    let mut upstream = vec![0.0; self.arms + 2];
                    for d in 0..self.arms {
                        upstream[d] = probs[d] * (s[d] - expectation) * scale;
                    }
                    // Continuous head through the critics' input gradients,
                    // arm-wise: each arm's min picks one critic.
                    let mut dq_dp = 0.0;
                    for j in 0..2 {
                        let mut up = vec![0.0; self.arms];
                        let mut any = false;
                        for d in 0..self.arms {
                            let selected = if j == 0 {
                                take_first[d]
                            } else {
                                !take_first[d]
                            };
                            if selected {
                                up[d] = -probs[d];
                                any = true;
                            }
                        }
                        if any {
                            let trace = if j == 0 { &t0 } else { &t1 };
                            let ig =
                                self.critics[j][n]
                                    .net
                                    .backward(trace, &up, &mut scratch[j])?;
                            dq_dp += ig[obs.len()];
                        }
                    }
                    let dp_du = (1.0 - v * v) / 2.0;
                    // d log pi_c / du = 2v; the Gaussian term is constant in
                    // u under reparameterization.
                    let d_mu = (alpha_c * 2.0 * v + dq_dp * dp_du) * scale;
                    let d_log_sigma = if eval.sigma_grad_open {
                        (alpha_c * (2.0 * v * sigma * eps - 1.0) + dq_dp * dp_du * sigma * eps)
                            * scale
                    } else {
                        0.0
                    };
                    upstream[self.arms] = d_mu;
                    upstream[self.arms + 1] = d_log_sigma;
                    self.actors[n]
                        .net
                        .backward(&eval.trace, &upstream, &mut gr[n])?;
                }
            }
        }
        Ok((loss, mean_h_d, mean_h_c))
    }

    /// One policy step (critics frozen). Returns the loss and the measured
    /// mean entropies.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<(f64, f64, f64)> {
        let noise = self.draw_noise(batch.len());
        let (loss, grads, h_d, h_c) = self.actor_grads(batch, &noise)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("actor loss {loss}")));
        }
        for n in 0..self.agents {
            self.actor_opts[n].step(self.actors[n].net.params_mut(), &grads[n])?;
        }
        Ok((loss, h_d, h_c))
    }

    /// Gradient step on both log-temperatures from fresh policy entropies.
    pub fn temperature_update(&mut self, entropy_d: f64, entropy_c: f64) -> Result<(f64, f64)> {
        self.temperatures.update(entropy_d, entropy_c)
    }

    /// Polyak-blend every target network toward its evaluation twin.
    pub fn sync_targets(&mut self) {
        let c = self.cfg.polyak;
        for i in 0..2 {
            for n in 0..self.agents {
                polyak_update(
                    self.target_critics[i][n].net.params_mut(),
                    self.critics[i][n].net.params(),
                    c,
                );
            }
            self.target_mixers[i].polyak_from(&self.mixers[i], c);
        }
    }

    // -- training loop ---------------------------------------------------------

    fn check_env(&self, env: &CrnEnv) -> Result<()> {
        let cfg = env.config();
        if cfg.secondary_users != self.agents
            || cfg.observation_width() != self.obs_width
            || cfg.arms() != self.arms
        {
            return Err(Error::Config(format!(
                "environment dims (N = {}, obs = {}, arms = {}) do not match the trainer \
                 (N = {}, obs = {}, arms = {})",
                cfg.secondary_users,
                cfg.observation_width(),
                cfg.arms(),
                self.agents,
                self.obs_width,
                self.arms
            )));
        }
        Ok(())
    }

    /// Run the full loop: warmup exploration, one critic update per step
    /// thereafter, actor and temperature updates every `policy_frequency`
    /// critic updates, target sync after every critic update, episode
    /// resets on the configured boundary.
    pub fn train(&mut self, env: &mut CrnEnv) -> Result<TrainingRun> {
        self.check_env(env)?;
        let total = self.cfg.total_timesteps;
        let mut records = Vec::with_capacity(total);
        let mut encoded: Vec<Vec<f64>> = env
            .observations()
            .iter()
            .map(|o| o.encode(self.noise_var))
            .collect();
        let mut last_critic_loss = 0.0;
        let mut last_actor_loss = 0.0;

        for step in 0..total {
            if step > 0 && step % self.cfg.episode_length == 0 {
                env.reset_episode()?;
                encoded = env
                    .observations()
                    .iter()
                    .map(|o| o.encode(self.noise_var))
                    .collect();
            }
            let actions: Vec<Action> = if step < self.cfg.warmup_steps {
                (0..self.agents).map(|n| self.uniform_action(n)).collect()
            } else {
                let mut acts = Vec::with_capacity(self.agents);
                for n in 0..self.agents {
                    let obs = std::mem::take(&mut encoded[n]);
                    let a = self.act(n, &obs)?;
                    encoded[n] = obs;
                    acts.push(a);
                }
                acts
            };
            let outcome = env.step(&actions)?;
            let next_encoded: Vec<Vec<f64>> = outcome
                .observations
                .iter()
                .map(|o| o.encode(self.noise_var))
                .collect();
            self.buffer.push(Transition {
                obs: encoded,
                arms: actions.iter().map(|a| a.arm).collect(),
                powers_norm: actions
                    .iter()
                    .enumerate()
                    .map(|(n, a)| a.power / self.max_power[n])
                    .collect(),
                reward: outcome.joint_reward,
                next_obs: next_encoded.clone(),
            });
            encoded = next_encoded;

            if step >= self.cfg.warmup_steps && self.buffer.len() >= self.cfg.minibatch {
                let batch = self.sample_batch()?;
                last_critic_loss = self.critic_update(&batch)?;
                self.sync_targets();
                self.critic_updates += 1;
                if self.critic_updates % self.cfg.policy_frequency as u64 == 0 {
                    // Delayed policy updates, compensated: a burst of
                    // `policy_frequency` actor/temperature steps keeps the
                    // overall update ratio at one per critic step.
                    for _ in 0..self.cfg.policy_frequency {
                        let (aloss, h_d, h_c) = self.actor_update(&batch)?;
                        self.temperature_update(h_d, h_c)?;
                        last_actor_loss = aloss;
                    }
                }
            }

            records.push(StepRecord {
                step: step as u64,
                joint_reward: outcome.joint_reward,
                idle_utilization: outcome.usage.idle_utilization,
                occupied_utilization: outcome.usage.occupied_utilization,
                collisions: outcome.usage.collisions,
                powers: actions.iter().map(|a| a.power).collect(),
                critic_loss: last_critic_loss,
                actor_loss: last_actor_loss,
                alpha_d: self.temperatures.alpha_d(),
                alpha_c: self.temperatures.alpha_c(),
            });
        }
        Ok(TrainingRun {
            records,
            gradient_updates: self.critic_updates,
        })
    }

    // -- checkpointing -----------------------------------------------------

    /// All networks with stable names for serialization.
    pub fn named_nets(&self) -> Vec<(String, &DenseNet)> {
        let mut out = Vec::new();
        for (n, a) in self.actors.iter().enumerate() {
            out.push((format!("actor.{n}"), &a.net));
        }
        for i in 0..2 {
            for (n, c) in self.critics[i].iter().enumerate() {
                out.push((format!("critic.{i}.{n}"), &c.net));
            }
            for (n, c) in self.target_critics[i].iter().enumerate() {
                out.push((format!("target_critic.{i}.{n}"), &c.net));
            }
            let m = &self.mixers[i];
            out.push((format!("mixer.{i}.w1"), &m.hyper_w1));
            out.push((format!("mixer.{i}.b1"), &m.hyper_b1));
            out.push((format!("mixer.{i}.w2"), &m.hyper_w2));
            out.push((format!("mixer.{i}.b2"), &m.hyper_b2));
            let m = &self.target_mixers[i];
            out.push((format!("target_mixer.{i}.w1"), &m.hyper_w1));
            out.push((format!("target_mixer.{i}.b1"), &m.hyper_b1));
            out.push((format!("target_mixer.{i}.w2"), &m.hyper_w2));
            out.push((format!("target_mixer.{i}.b2"), &m.hyper_b2));
        }
        out
    }

    /// Restore parameters by name; unknown names are rejected.
    pub fn load_nets(&mut self, nets: &[(String, DenseNet)]) -> Result<()> {
        for (name, net) in nets {
            let slot = self.named_slot(name)?;
            if slot.layer_dims() != net.layer_dims() {
                return Err(Error::MalformedCheckpoint(format!(
                    "{name}: checkpoint layer dims do not match the configured trainer"
                )));
            }
            slot.params_mut().copy_from_slice(net.params());
        }
        Ok(())
    }

    fn named_slot(&mut self, name: &str) -> Result<&mut DenseNet> {
        let parts: Vec<&str> = name.split('.').collect();
        let parse = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::MalformedCheckpoint(format!("bad index in net name {s}")))
        };
        match parts.as_slice() {
            ["actor", n] => Ok(&mut self.actors[parse(n)?].net),
            ["critic", i, n] => Ok(&mut self.critics[parse(i)?][parse(n)?].net),
            ["target_critic", i, n] => Ok(&mut self.target_critics[parse(i)?][parse(n)?].net),
            ["mixer", i, part] | ["target_mixer", i, part] => {
                let m = if parts[0] == "mixer" {
                    &mut self.mixers[parse(i)?]
                } else {
                    &mut self.target_mixers[parse(i)?]
                };
                match *part {
                    "w1" => Ok(&mut m.hyper_w1),
                    "b1" => Ok(&mut m.hyper_b1),
                    "w2" => Ok(&mut m.hyper_w2),
                    "b2" => Ok(&mut m.hyper_b2),
                    other => Err(Error::MalformedCheckpoint(format!(
                        "unknown mixer part {other}"
                    ))),
                }
            }
            _ => Err(Error::MalformedCheckpoint(format!(
                "unknown network name {name}"
            ))),
        }
    }
}

// ===========================================================================
// Tests
// ===========================================================================
