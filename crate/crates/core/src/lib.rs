//! Cognitive-radio network (CRN) simulation and multi-agent training core.
//!
//! The crate is organized around the lifecycle of an opportunistic-access
//! secondary network:
//!
//! - [`channel`]: block-Rayleigh fading links and the primary users'
//!   two-state Markov occupancy chains.
//! - [`sensing`]: energy detection; sample generation under both
//!   hypotheses, test statistics, thresholds, and the Gaussian-approximation
//!   closed forms for detection / false-alarm probabilities.
//! - [`env`]: the decentralized partially-observable environment. Secondary
//!   users observe local occupancy beliefs plus raw test statistics, emit a
//!   hybrid action (channel-or-idle plus transmit power), and receive
//!   penalty-shaped rewards derived from their empirical data rates.
//! - [`nn`]: a small dense-network substrate with hand-rolled reverse-mode
//!   gradients, an Adam optimizer, and stochastic policy heads.
//! - [`checkpoint`]: flat binary serialization for network parameters.
//! - [`mhsac`]: the multi-agent hybrid soft actor-critic trainer with twin
//!   D-headed critics, a monotonic value-mixing hypernetwork, dual
//!   auto-tuned entropy temperatures, and a replay buffer.
//!
//! Every stochastic component draws from explicit seeds; a whole training
//! run is reproducible bit-for-bit from its configuration and master seed.

pub mod channel;
pub mod checkpoint;
pub mod env;
pub mod mhsac;
pub mod nn;
pub mod sensing;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Vector/matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// A gradient or loss became non-finite during training.
    #[error("training diverged: {0}")]
    Diverged(String),
    /// Checkpoint bytes did not match the documented layout.
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
