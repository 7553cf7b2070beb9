//! Energy-detection spectrum sensing.
//!
//! A secondary user senses `M` channels sequentially inside a window of
//! length `tau`, collecting `S = floor(eps * tau / M)` complex samples per
//! channel at sampling rate `eps`. The test statistic is the mean sample
//! energy; comparing it against a per-link threshold `psi` yields the binary
//! occupancy belief.
//!
//! Under additive white Gaussian noise the central-limit approximation gives
//! closed forms for the detection and false-alarm probabilities:
//!
//! ```text
//! P_de(psi) = Q( (psi/sigma^2 - rho - 1) * sqrt(S / (2 rho + 1)) )
//! P_fa(psi) = Q( (psi/sigma^2 - 1) * sqrt(S) )
//! ```
//!
//! where `rho` is the average PU SNR on the link and `Q` is the standard
//! normal tail. Keeping `sigma^2 <= psi <= sigma^2 (1 + rho)` guarantees
//! `P_de >= 0.5` and `P_fa <= 0.5`.
//!
//! With Rayleigh fading the PU signal is further multiplied by a
//! block-constant channel gain; a sensing window then spans
//! `C = ceil((tau/M) / t_c)` gain realizations. The closed forms above only
//! become accurate once `C` is large enough for `|h|^2` to average out.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use crate::channel::FadingProcess;
use crate::{Error, Result};

/// Symbol model for the primary user's transmitted signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignalModel {
    /// Circularly-symmetric complex Gaussian symbols.
    #[default]
    Gaussian,
    /// Antipodal real symbols of equal energy.
    Bpsk,
}

/// Per-network sensing parameters.
#[derive(Debug, Clone)]
pub struct SensingConfig {
    /// Sampling rate `eps` (samples/second).
    pub sampling_rate_hz: f64,
    /// Sensing window `tau` (seconds), shared by the M channels.
    pub window_s: f64,
    /// Time block `Gamma` (seconds): one sense/transmit cycle.
    pub block_s: f64,
    /// Channels each secondary user senses (`M`).
    pub channels_per_su: usize,
    /// Decision thresholds in Watts, indexed `[su][channel]`.
    pub thresholds: Vec<Vec<f64>>,
    pub signal_model: SignalModel,
}

impl SensingConfig {
    /// Samples collected per sensed channel: `floor(eps * tau / M)`.
    pub fn samples_per_channel(&self) -> usize {
        let raw = self.sampling_rate_hz * self.window_s / self.channels_per_su as f64;
        (raw + 1e-9).floor() as usize
    }

    /// Time spent on one channel inside the window.
    pub fn per_channel_window_s(&self) -> f64 {
        self.window_s / self.channels_per_su as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0 && self.window_s < self.block_s) {
            return Err(Error::Config(format!(
                "sensing window tau = {} must satisfy 0 < tau < Gamma = {}",
                self.window_s, self.block_s
            )));
        }
        if self.channels_per_su == 0 {
            return Err(Error::Config("channels_per_su must be at least 1".into()));
        }
        if !(self.sampling_rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "sampling rate must be positive, got {}",
                self.sampling_rate_hz
            )));
        }
        if self.samples_per_channel() < 1 {
            return Err(Error::Config(format!(
                "floor(eps * tau / M) = 0 samples per channel (eps = {}, tau = {}, M = {})",
                self.sampling_rate_hz, self.window_s, self.channels_per_su
            )));
        }
        for (n, row) in self.thresholds.iter().enumerate() {
            if row.iter().any(|&t| !(t > 0.0)) {
                return Err(Error::Config(format!(
                    "thresholds for SU {n} must all be positive"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Closed forms
// ---------------------------------------------------------------------------

/// Standard normal tail probability `Q(y) = Pr(Z > y)`.
pub fn q_tail(y: f64) -> f64 {
    0.5 * erfc(y / std::f64::consts::SQRT_2)
}

/// False-alarm probability of the energy detector under noise only.
pub fn p_false_alarm(threshold: f64, noise_var: f64, samples: usize) -> f64 {
    let s = samples as f64;
    q_tail((threshold / noise_var - 1.0) * s.sqrt())
}

/// Detection probability of the energy detector for a PU at linear SNR
/// `snr`, non-fading case.
pub fn p_detect(threshold: f64, noise_var: f64, snr: f64, samples: usize) -> f64 {
    let s = samples as f64;
    q_tail((threshold / noise_var - snr - 1.0) * (s / (2.0 * snr + 1.0)).sqrt())
}

/// Midpoint threshold `sigma^2 (1 + rho/2)`, always inside the
/// `[sigma^2, sigma^2 (1 + rho)]` band.
pub fn default_threshold(noise_var: f64, snr: f64) -> f64 {
    noise_var * (1.0 + snr / 2.0)
}

/// Channel gain realizations seen per channel per sensing window:
/// `C = ceil((tau / M) / t_c)`, at least 1.
pub fn realizations_per_window(window_s: f64, coherence_s: f64, channels_per_su: usize) -> usize {
    let per_channel = window_s / channels_per_su as f64;
    let c = (per_channel / coherence_s - 1e-9).ceil() as usize;
    c.max(1)
}

/// Whether the detector clears a required detection-probability floor `mu`.
/// Reported for configuration review; nothing enforces it during training.
pub fn meets_detection_floor(
    threshold: f64,
    noise_var: f64,
    snr: f64,
    samples: usize,
    floor: f64,
) -> bool {
    p_detect(threshold, noise_var, snr, samples) >= floor
}

// ---------------------------------------------------------------------------
// Sample generation and decisions
// ---------------------------------------------------------------------------

/// Draw one complex Gaussian variate with total variance `var`.
fn complex_gaussian(var: f64, rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * (var / 2.0).sqrt()
}

/// Generate the received sample sequence for one sensed channel.
///
/// Under the idle hypothesis the sequence is pure noise `CN(0, sigma^2)`.
/// Under the busy hypothesis each sample is `h * xi + v`, where the PU
/// symbol `xi` carries power `sigma^2 * snr` and the gain `h` is constant
/// inside each coherence block of the window. The window's samples are
/// split into `C` contiguous blocks of equal size, the last taking any
/// remainder.
pub fn collect_samples(
    occupied: bool,
    fading: &mut FadingProcess,
    window_start_s: f64,
    noise_var: f64,
    snr: f64,
    cfg: &SensingConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Complex64>> {
    let samples = cfg.samples_per_channel();
    if samples == 0 {
        return Err(Error::InvalidInput(
            "sensing configuration yields zero samples per channel".into(),
        ));
    }
    let mut out = Vec::with_capacity(samples);
    if !occupied {
        for _ in 0..samples {
            out.push(complex_gaussian(noise_var, rng));
        }
        return Ok(out);
    }

    let t_c = fading.coherence_time_s();
    let blocks = realizations_per_window(cfg.window_s, t_c, cfg.channels_per_su);
    let per_block = samples / blocks;
    let signal_power = noise_var * snr;
    for b in 0..blocks {
        let count = if b + 1 == blocks {
            samples - per_block * (blocks - 1)
        } else {
            per_block
        };
        let gain = fading.sample_gain(window_start_s + b as f64 * t_c)?;
        for _ in 0..count {
            let symbol = match cfg.signal_model {
                SignalModel::Gaussian => complex_gaussian(signal_power, rng),
                SignalModel::Bpsk => {
                    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    Complex64::new(sign * signal_power.sqrt(), 0.0)
                }
            };
            out.push(gain * symbol + complex_gaussian(noise_var, rng));
        }
    }
    Ok(out)
}

/// Mean sample energy `T = (1/S) * sum |z_i|^2`.
pub fn test_statistic(samples: &[Complex64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(
            "test statistic of an empty sample sequence".into(),
        ));
    }
    Ok(samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / samples.len() as f64)
}

/// Threshold decision: `true` (believed occupied) iff `T > psi`.
pub fn detect(statistic: f64, threshold: f64) -> bool {
    statistic > threshold
}

// ===========================================================================
// Tests
// ===========================================================================
