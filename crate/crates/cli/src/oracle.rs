//! Exhaustive joint-assignment oracle.
//!
//! Scores every joint discrete choice (each SU picks one of its sensed
//! channels or idles) at full transmit power against a frozen environment
//! snapshot, using the same belief-gated empirical rates and penalty
//! composition the live environment applies. Exponential in the number of
//! SUs, so deliberately capped to small instances; it exists as a
//! reference optimum for evaluating learned policies.

use anyhow::{bail, Result};
use crn_core::env::{score_assignment, AllocationSnapshot, EnvConfig};

pub const MAX_CHANNELS: usize = 6;
pub const MAX_USERS: usize = 4;

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Best joint discrete choice, one arm per SU (arm M = idle).
    pub arms: Vec<usize>,
    /// Penalty-adjusted sum reward of that choice at maximum power.
    pub score: f64,
    pub rewards: Vec<f64>,
}

/// Enumerate all `(M+1)^N` joint assignments at `p_n = p_max` and return
/// the best. Ties resolve to the lexicographically-first assignment.
pub fn brute_force_allocation_oracle(
    snapshot: &AllocationSnapshot,
    cfg: &EnvConfig,
    sensed: &[Vec<usize>],
) -> Result<OracleResult> {
    let users = cfg.secondary_users;
    let channels = cfg.channels();
    if channels > MAX_CHANNELS || users > MAX_USERS {
        bail!(
            "oracle limited to {MAX_CHANNELS} channels and {MAX_USERS} SUs, got {channels}/{users}"
        );
    }
    let arms_per_su = cfg.arms();
    let powers = cfg.max_power.clone();
    let total = arms_per_su.pow(users as u32);
    let mut best: Option<OracleResult> = None;
    let mut arms = vec![0usize; users];
    for code in 0..total {
        let mut c = code;
        for a in arms.iter_mut() {
            *a = c % arms_per_su;
            c /= arms_per_su;
        }
        let (rewards, score, _) = score_assignment(snapshot, cfg, sensed, &arms, &powers)?;
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(OracleResult {
                arms: arms.clone(),
                score,
                rewards,
            });
        }
    }
    Ok(best.expect("at least the all-idle assignment exists"))
}
