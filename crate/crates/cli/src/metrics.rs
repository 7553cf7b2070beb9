//! Metric logs: CSV emission, smoothing overlays, and run summaries.
//!
//! The raw log holds one row per environment step. The smoothed companion
//! carries two overlays per plotted column: an exponential weighted moving
//! average with factor 0.2 (`ewma_t = 0.2 x_t + 0.8 ewma_{t-1}`, seeded with
//! the first value) and the mean of exactly the previous 100 rows, left
//! empty until 100 rows exist.
//!
//! CSV is RFC-4180 with a header row; all values are plain numbers, floats
//! printed in Rust's shortest round-trip form so a parsed log reproduces
//! the in-memory log exactly.

use std::io::{BufRead, Write};

use anyhow::{bail, Context, Result};
use crn_core::mhsac::{StepRecord, TrainingRun};

pub const EWMA_FACTOR: f64 = 0.2;
pub const TRAILING_WINDOW: usize = 100;
pub const SUMMARY_WINDOW: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub su_count: usize,
    pub rows: Vec<StepRecord>,
}

impl MetricsLog {
    pub fn from_run(run: &TrainingRun) -> Self {
        let su_count = run.records.first().map_or(0, |r| r.powers.len());
        Self {
            su_count,
            rows: run.records.clone(),
        }
    }

    pub fn header(&self) -> String {
        let mut cols = vec![
            "step".to_string(),
            "joint_reward".to_string(),
            "idle_utilization".to_string(),
            "occupied_utilization".to_string(),
            "collisions".to_string(),
        ];
        for n in 0..self.su_count {
            cols.push(format!("power_w_{n}"));
        }
        cols.extend(
            ["critic_loss", "actor_loss", "alpha_d", "alpha_c"]
                .iter()
                .map(|s| s.to_string()),
        );
        cols.join(",")
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{}", self.header())?;
        for r in &self.rows {
            write!(
                w,
                "{},{},{},{},{}",
                r.step, r.joint_reward, r.idle_utilization, r.occupied_utilization, r.collisions
            )?;
            for p in &r.powers {
                write!(w, ",{p}")?;
            }
            writeln!(
                w,
                ",{},{},{},{}",
                r.critic_loss, r.actor_loss, r.alpha_d, r.alpha_c
            )?;
        }
        Ok(())
    }

    pub fn read_csv(r: &mut impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .context("empty metrics CSV")?
            .context("reading header")?;
        let cols: Vec<&str> = header.split(',').collect();
        let su_count = cols.iter().filter(|c| c.starts_with("power_w_")).count();
        let expected = 9 + su_count;
        if cols.len() != expected {
            bail!(
                "metrics CSV header has {} columns, expected {expected}",
                cols.len()
            );
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.with_context(|| format!("reading row {i}"))?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != expected {
                bail!("row {i} has {} fields, expected {expected}", f.len());
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .with_context(|| format!("row {i}: bad number {s:?}"))
            };
            rows.push(StepRecord {
                step: f[0].parse().with_context(|| format!("row {i}: bad step"))?,
                joint_reward: num(f[1])?,
                idle_utilization: num(f[2])?,
                occupied_utilization: num(f[3])?,
                collisions: num(f[4])?,
                powers: f[5..5 + su_count]
                    .iter()
                    .map(|s| num(s))
                    .collect::<Result<_>>()?,
                critic_loss: num(f[5 + su_count])?,
                actor_loss: num(f[6 + su_count])?,
                alpha_d: num(f[7 + su_count])?,
                alpha_c: num(f[8 + su_count])?,
            });
        }
        Ok(Self { su_count, rows })
    }

    /// Smoothed companion: EWMA and trailing-window overlays of the plotted
    /// metrics columns.
    pub fn write_smoothed_csv(&self, w: &mut impl Write) -> Result<()> {
        let series: [(&str, Box<dyn Fn(&StepRecord) -> f64>); 4] = [
            ("joint_reward", Box::new(|r: &StepRecord| r.joint_reward)),
            (
                "idle_utilization",
                Box::new(|r: &StepRecord| r.idle_utilization),
            ),
            (
                "occupied_utilization",
                Box::new(|r: &StepRecord| r.occupied_utilization),
            ),
            ("collisions", Box::new(|r: &StepRecord| r.collisions)),
        ];
        let mut header = vec!["step".to_string()];
        for (name, _) in &series {
            header.push(format!("{name}_ewma"));
            header.push(format!("{name}_trail{TRAILING_WINDOW}"));
        }
        writeln!(w, "{}", header.join(","))?;

        let columns: Vec<Vec<f64>> = series
            .iter()
            .map(|(_, f)| self.rows.iter().map(f).collect())
            .collect();
        let ewmas: Vec<Vec<f64>> = columns.iter().map(|c| ewma(c, EWMA_FACTOR)).collect();
        let trails: Vec<Vec<Option<f64>>> = columns
            .iter()
            .map(|c| trailing_mean(c, TRAILING_WINDOW))
            .collect();
        for (i, r) in self.rows.iter().enumerate() {
            write!(w, "{}", r.step)?;
            for c in 0..series.len() {
                write!(w, ",{}", ewmas[c][i])?;
                match trails[c][i] {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Means of every numeric column over the last `window` rows (all rows
    /// when the log is shorter).
    pub fn summary(&self, window: usize) -> SummaryStats {
        let start = self.rows.len().saturating_sub(window);
        let tail = &self.rows[start..];
        let count = tail.len().max(1) as f64;
        let mean = |f: &dyn Fn(&StepRecord) -> f64| tail.iter().map(f).sum::<f64>() / count;
        SummaryStats {
            rows_used: tail.len(),
            joint_reward: mean(&|r| r.joint_reward),
            idle_utilization: mean(&|r| r.idle_utilization),
            occupied_utilization: mean(&|r| r.occupied_utilization),
            collisions: mean(&|r| r.collisions),
            powers: (0..self.su_count).map(|n| mean(&|r| r.powers[n])).collect(),
            critic_loss: mean(&|r| r.critic_loss),
            actor_loss: mean(&|r| r.actor_loss),
            alpha_d: mean(&|r| r.alpha_d),
            alpha_c: mean(&|r| r.alpha_c),
        }
    }
}

/// Trailing means over the plotted metrics, for summaries.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SummaryStats {
    pub rows_used: usize,
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

pub fn ewma(values: &[f64], factor: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut state = f64::NAN;
    for (i, &x) in values.iter().enumerate() {
        // state = factor * x + (1 - factor) * state, written so a constant
        // series passes through unchanged.
        state = if i == 0 {
            x
        } else {
            state + factor * (x - state)
        };
        out.push(state);
    }
    out
}

/// Mean of exactly the previous `window` values; `None` until that many
/// exist.
pub fn trailing_mean(values: &[f64], window: usize) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        if i >= window {
            out.push(Some(acc / window as f64));
            acc += values[i] - values[i - window];
        } else {
            out.push(None);
            acc += values[i];
        }
    }
    out
}
