//! Wireless channel models: block-Rayleigh fading and primary-user occupancy.
//!
//! Fading is piecewise constant: a link's complex gain is redrawn once per
//! coherence interval of length `t_c` and held fixed inside it. Gains are
//! circularly-symmetric complex Gaussian, so magnitudes are Rayleigh and
//! `|h|^2` is exponential with mean `g_mean`.
//!
//! Each gain is a pure function of `(seed, block index)`: the draw for block
//! `b` comes from a counter-seeded generator, so processes can skip forward
//! over arbitrarily many coherence blocks in O(1) without consuming a shared
//! random stream. Two processes with the same seed always agree.
//!
//! Primary-user occupancy is one independent two-state Markov chain per
//! channel: `p_io` is the idle-to-occupied transition probability and `p_oo`
//! the probability of staying occupied.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// splitmix64 finalizer; used to derive well-separated per-link seeds.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a master seed and a small tag tuple.
pub fn derive_seed(master: u64, tag: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut s = mix_seed(master ^ tag.wrapping_mul(0xa076_1d64_78bd_642f));
    s = mix_seed(s ^ a.wrapping_mul(0xe703_7ed1_a0b4_28db));
    s = mix_seed(s ^ b.wrapping_mul(0x8ebc_6af0_9c88_c6e3));
    mix_seed(s ^ c.wrapping_mul(0x5895_64e7_5c43_95f5))
}

// ---------------------------------------------------------------------------
// FadingProcess
// ---------------------------------------------------------------------------

/// Piecewise-constant complex Rayleigh gain over coherence blocks.
#[derive(Debug, Clone)]
pub struct FadingProcess {
    /// Coherence time: the gain is constant on `[b*t_c, (b+1)*t_c)`.
    coherence_time_s: f64,
    /// Mean of `|h|^2`.
    gain_mean: f64,
    seed: u64,
    /// Cached block so repeated queries inside one block are free.
    block_index: u64,
    gain: Complex64,
}

impl FadingProcess {
    pub fn new(coherence_time_s: f64, gain_mean: f64, seed: u64) -> Result<Self> {
        if !(coherence_time_s > 0.0) {
            return Err(Error::InvalidInput(format!(
                "coherence time must be positive, got {coherence_time_s}"
            )));
        }
        if !(gain_mean >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "mean gain power must be non-negative, got {gain_mean}"
            )));
        }
        let gain = Self::gain_for_block(seed, 0, gain_mean);
        Ok(Self {
            coherence_time_s,
            gain_mean,
            seed,
            block_index: 0,
            gain,
        })
    }

    pub fn coherence_time_s(&self) -> f64 {
        self.coherence_time_s
    }

    pub fn gain_mean(&self) -> f64 {
        self.gain_mean
    }

    /// Start of the block the process currently sits in.
    pub fn block_start_s(&self) -> f64 {
        self.block_index as f64 * self.coherence_time_s
    }

    /// The gain for coherence block `b` under seed `s`, `E|h|^2 = g_mean`.
    fn gain_for_block(seed: u64, block: u64, gain_mean: f64) -> Complex64 {
        if gain_mean == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xFAD, block, 0, 0));
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * (gain_mean / 2.0).sqrt()
    }

    /// The gain at time `t` (seconds). Constant within a coherence block,
    /// redrawn across block boundaries.
    pub fn sample_gain(&mut self, t: f64) -> Result<Complex64> {
        if !(t >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "fading sample time must be non-negative, got {t}"
            )));
        }
        let idx = (t / self.coherence_time_s) as u64;
        if idx != self.block_index {
            self.block_index = idx;
            self.gain = Self::gain_for_block(self.seed, idx, self.gain_mean);
        }
        Ok(self.gain)
    }
}

// ---------------------------------------------------------------------------
// PuOccupancy
// ---------------------------------------------------------------------------

/// Per-channel primary-user occupancy: independent two-state Markov chains.
#[derive(Debug, Clone)]
pub struct PuOccupancy {
    /// `true` = the PU occupies the channel.
    states: Vec<bool>,
    /// Pr(idle -> occupied) per channel.
    p_idle_to_occ: Vec<f64>,
    /// Pr(occupied -> occupied) per channel.
    p_occ_to_occ: Vec<f64>,
}

impl PuOccupancy {
    pub fn new(
        p_idle_to_occ: Vec<f64>,
        p_occ_to_occ: Vec<f64>,
        initial: Vec<bool>,
    ) -> Result<Self> {
        if p_idle_to_occ.len() != p_occ_to_occ.len() || p_idle_to_occ.len() != initial.len() {
            return Err(Error::ShapeMismatch(format!(
                "occupancy vectors disagree: {} vs {} vs {}",
                p_idle_to_occ.len(),
                p_occ_to_occ.len(),
                initial.len()
            )));
        }
        for (k, (&pio, &poo)) in p_idle_to_occ.iter().zip(&p_occ_to_occ).enumerate() {
            if !(0.0..=1.0).contains(&pio) || !(0.0..=1.0).contains(&poo) {
                return Err(Error::InvalidInput(format!(
                    "channel {k}: transition probabilities must lie in [0, 1], got ({pio}, {poo})"
                )));
            }
        }
        Ok(Self {
            states: initial,
            p_idle_to_occ,
            p_occ_to_occ,
        })
    }

    /// All channels start idle.
    pub fn new_idle(p_idle_to_occ: Vec<f64>, p_occ_to_occ: Vec<f64>) -> Result<Self> {
        let n = p_idle_to_occ.len();
        Self::new(p_idle_to_occ, p_occ_to_occ, vec![false; n])
    }

    pub fn channels(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[bool] {
        &self.states
    }

    pub fn is_occupied(&self, channel: usize) -> bool {
        self.states[channel]
    }

    /// Number of channels currently held by PUs.
    pub fn occupied_count(&self) -> usize {
        self.states.iter().filter(|&&s| s).count()
    }

    pub fn transition_probs(&self, channel: usize) -> (f64, f64) {
        (self.p_idle_to_occ[channel], self.p_occ_to_occ[channel])
    }

    /// Advance every chain by one step.
    pub fn step(&mut self, rng: &mut impl Rng) {
        for k in 0..self.states.len() {
            let u: f64 = rng.gen();
            self.states[k] = if self.states[k] {
                u < self.p_occ_to_occ[k]
            } else {
                u < self.p_idle_to_occ[k]
            };
        }
    }

    /// Long-run probability that `channel` is idle:
    /// `(1 - p_oo) / (p_io + 1 - p_oo)`.
    ///
    /// Errors when `p_io = 0` and `p_oo = 1`: both states are absorbing and
    /// the chain has no unique stationary distribution.
    pub fn stationary_idle_prob(&self, channel: usize) -> Result<f64> {
        let pio = self.p_idle_to_occ[channel];
        let poo = self.p_occ_to_occ[channel];
        let denom = pio + 1.0 - poo;
        if denom <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "channel {channel}: chain with p_io = {pio}, p_oo = {poo} is reducible; \
                 no unique stationary distribution"
            )));
        }
        Ok((1.0 - poo) / denom)
    }

    /// Redraw every channel's state from its stationary distribution.
    pub fn reset_stationary(&mut self, rng: &mut impl Rng) -> Result<()> {
        for k in 0..self.states.len() {
            let idle = self.stationary_idle_prob(k)?;
            self.states[k] = rng.gen::<f64>() >= idle;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// ChannelParams
// ---------------------------------------------------------------------------

/// Static radio parameters shared by sensing and rate computations.
#[derive(Debug, Clone)]
pub struct ChannelParams {
    /// Total system bandwidth in Hz, divided evenly over `channels`.
    pub bandwidth_hz: f64,
    pub channels: usize,
    /// Complex noise variance (Watts).
    pub noise_var: f64,
    /// PU transmit power per channel (Watts).
    pub pu_power: Vec<f64>,
    /// Average PU SNR at each secondary user, indexed `[su][channel]`
    /// (linear ratio, not dB).
    pub pu_snr: Vec<Vec<f64>>,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("channel count must be at least 1".into()));
        }
        if !(self.noise_var > 0.0) {
            return Err(Error::Config(format!(
                "noise variance must be positive, got {}",
                self.noise_var
            )));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::Config(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth_hz
            )));
        }
        if self.pu_power.len() != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "pu_power has {} entries for {} channels",
                self.pu_power.len(),
                self.channels
            )));
        }
        if self.pu_power.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Config("PU power must be non-negative".into()));
        }
        for (n, row) in self.pu_snr.iter().enumerate() {
            if row.len() != self.channels {
                return Err(Error::ShapeMismatch(format!(
                    "pu_snr row {} has {} entries for {} channels",
                    n,
                    row.len(),
                    self.channels
                )));
            }
            if row.iter().any(|&r| !(r >= 0.0)) {
                return Err(Error::Config(format!(
                    "pu_snr row {n} has a negative entry"
                )));
            }
        }
        Ok(())
    }

    /// Bandwidth of one channel.
    pub fn channel_bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz / self.channels as f64
    }
}

// ===========================================================================
// Tests
// ===========================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn gain_constant_within_block() {
        let mut fp = FadingProcess::new(1e-3, 1.0, 7).unwrap();
        let g0 = fp.sample_gain(0.0).unwrap();
        let g1 = fp.sample_gain(0.4e-3).unwrap();
        let g2 = fp.sample_gain(0.999e-3).unwrap();
        assert_eq!(g0, g1);
        assert_eq!(g0, g2);
        let g3 = fp.sample_gain(1.000_5e-3).unwrap();
        assert_ne!(g0, g3, "crossing the block boundary must redraw");
    }

    #[test]
    fn zero_mean_power_gives_zero_gain() {
        let mut fp = FadingProcess::new(1e-3, 0.0, 3).unwrap();
        for i in 0..50 {
            let g = fp.sample_gain(i as f64 * 1e-3).unwrap();
            assert_eq!(g, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn negative_time_rejected() {
        let mut fp = FadingProcess::new(1e-3, 1.0, 3).unwrap();
        assert!(matches!(fp.sample_gain(-1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn gain_power_mean_matches_unit_target() {
        // Monte Carlo mean of |h|^2 over 1e5 blocks; exponential(1) oracle.
        let mut fp = FadingProcess::new(1.0, 1.0, 42).unwrap();
        let blocks = 100_000u64;
        let mut acc = 0.0;
        for b in 0..blocks {
            let g = fp.sample_gain(b as f64).unwrap();
            acc += g.norm_sqr();
        }
        let mean = acc / blocks as f64;
        assert!(
            (mean - 1.0).abs() < 0.01,
            "E|h|^2 should be 1 within 1%, got {mean}"
        );
    }

    #[test]
    fn gain_deterministic_per_seed_and_block() {
        let mut a = FadingProcess::new(1e-3, 1.0, 99).unwrap();
        let mut b = FadingProcess::new(1e-3, 1.0, 99).unwrap();
        // Query in different orders; block gains must still agree.
        let ga = a.sample_gain(17.5e-3).unwrap();
        b.sample_gain(3.0e-3).unwrap();
        let gb = b.sample_gain(17.2e-3).unwrap();
        assert_eq!(ga, gb);
    }

    #[test]
    fn gain_power_is_exponential() {
        // chi-squared goodness of fit of |h|^2 against exponential(1),
        // 20 equiprobable bins, significance 0.01.
        let mut fp = FadingProcess::new(1.0, 1.0, 5).unwrap();
        let n = 100_000u64;
        let bins = 20usize;
        let mut counts = vec![0u64; bins];
        for b in 0..n {
            let x = fp.sample_gain(b as f64).unwrap().norm_sqr();
            // exponential(1) CDF
            let u = 1.0 - (-x).exp();
            let mut idx = (u * bins as f64) as usize;
            if idx >= bins {
                idx = bins - 1;
            }
            counts[idx] += 1;
        }
        let expected = n as f64 / bins as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let crit = ChiSquared::new((bins - 1) as f64)
            .unwrap()
            .inverse_cdf(0.99);
        assert!(
            stat < crit,
            "chi^2 statistic {stat} exceeds the 1% critical value {crit}"
        );
    }

    #[test]
    fn absorbing_busy_chain_stays_busy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut occ = PuOccupancy::new(vec![0.0], vec![1.0], vec![true]).unwrap();
        for _ in 0..1000 {
            occ.step(&mut rng);
            assert!(occ.is_occupied(0));
        }
    }

    #[test]
    fn deterministic_alternation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut occ = PuOccupancy::new_idle(vec![1.0], vec![0.0]).unwrap();
        let mut expect = false;
        for _ in 0..100 {
            occ.step(&mut rng);
            expect = !expect;
            assert_eq!(occ.is_occupied(0), expect);
        }
    }

    #[test]
    fn busy_fraction_matches_stationary_distribution() {
        // p_io = 0.3, p_oo = 0.7 -> stationary busy = 0.3 / 0.6 = 0.5.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut occ = PuOccupancy::new_idle(vec![0.3], vec![0.7]).unwrap();
        let steps = 1_000_000u64;
        let mut busy = 0u64;
        for _ in 0..steps {
            occ.step(&mut rng);
            busy += occ.is_occupied(0) as u64;
        }
        let frac = busy as f64 / steps as f64;
        assert!(
            (frac - 0.5).abs() < 0.005,
            "busy fraction {frac} should be 0.5 within 0.005"
        );
    }

    #[test]
    fn stationary_idle_prob_values() {
        let occ = PuOccupancy::new_idle(vec![0.5, 0.2, 1.0], vec![0.5, 0.6, 1.0]).unwrap();
        assert!((occ.stationary_idle_prob(0).unwrap() - 0.5).abs() < 1e-15);
        assert!((occ.stationary_idle_prob(1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(occ.stationary_idle_prob(2).unwrap(), 0.0);
    }

    #[test]
    fn stationary_idle_prob_long_run_agreement() {
        // Long-run simulation oracle for p_io = 0.2, p_oo = 0.6.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut occ = PuOccupancy::new_idle(vec![0.2], vec![0.6]).unwrap();
        let steps = 1_000_000u64;
        let mut idle = 0u64;
        for _ in 0..steps {
            occ.step(&mut rng);
            idle += !occ.is_occupied(0) as u64;
        }
        let frac = idle as f64 / steps as f64;
        let analytic = occ.stationary_idle_prob(0).unwrap();
        assert!(
            (frac - analytic).abs() < 0.01 * analytic.max(1e-12),
            "idle fraction {frac} should match {analytic} within 1%"
        );
    }

    #[test]
    fn degenerate_chain_rejected() {
        let occ = PuOccupancy::new_idle(vec![0.0], vec![1.0]).unwrap();
        assert!(occ.stationary_idle_prob(0).is_err());
    }

    #[test]
    fn invalid_probabilities_rejected() {
        assert!(PuOccupancy::new_idle(vec![1.2], vec![0.5]).is_err());
        assert!(PuOccupancy::new_idle(vec![0.2], vec![-0.1]).is_err());
    }
}
