use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Daily message volume the platform must sustain.
pub const DAILY_REQUIREMENT: u64 = 2_000_000;
pub const SECONDS_PER_DAY: u64 = 86_400;
pub const DEFAULT_LINEARITY_THRESHOLD: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("duration must be positive")]
    ZeroDuration,
    #[error("linearity needs at least 2 runs at distinct totals, got {0}")]
    TooFewRuns(usize),
    #[error("sustained window must be positive")]
    EmptyWindow,
}

/// Minimum rate that meets the daily requirement, in msg/s.
pub fn required_rate() -> f64 {
    DAILY_REQUIREMENT as f64 / SECONDS_PER_DAY as f64
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Messages per second, to one decimal.
pub fn compute_throughput(total: u64, duration_ms: f64) -> Result<f64, MetricError> {
    if duration_ms.is_nan() || duration_ms <= 0.0 {
        return Err(MetricError::ZeroDuration);
    }
    Ok(round1(total as f64 / (duration_ms / 1000.0)))
}

/// `(max - min) / max`; 0 for an empty or all-zero set.
pub fn relative_spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.is_empty() || max <= 0.0 {
        return 0.0;
    }
    (max - min) / max
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearityResult {
    pub spread: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Throughput should stay flat as the total grows. `points` are
/// `(total_messages, messages_per_second)`.
pub fn linearity_check(
    points: &[(u64, f64)],
    threshold: f64,
) -> Result<LinearityResult, MetricError> {
    let mut totals: Vec<u64> = points.iter().map(|p| p.0).collect();
    totals.sort_unstable();
    totals.dedup();
    if totals.len() < 2 {
        return Err(MetricError::TooFewRuns(totals.len()));
    }
    let tps: Vec<f64> = points.iter().map(|p| p.1).collect();
    let spread = relative_spread(&tps);
    Ok(LinearityResult {
        spread,
        threshold,
        pass: spread <= threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SustainedCheck {
    pub window_s: f64,
    pub delivered: u64,
    pub loss: u64,
    pub achieved_rate: f64,
    pub required_rate: f64,
    /// achieved / required
    pub margin: f64,
    pub pass: bool,
}

/// Whether `delivered` messages over `window` with `loss` meets the daily requirement.
pub fn requirement_check_sustained(
    delivered: u64,
    loss: u64,
    window: Duration,
) -> Result<SustainedCheck, MetricError> {
    let window_s = window.as_secs_f64();
    if window_s <= 0.0 {
        return Err(MetricError::EmptyWindow);
    }
    let achieved_rate = delivered as f64 / window_s;
    let required = required_rate();
    Ok(SustainedCheck {
        window_s,
        delivered,
        loss,
        achieved_rate,
        required_rate: required,
        margin: achieved_rate / required,
        pass: achieved_rate >= required && loss == 0,
    })
}
