use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid pacing plan: {0} must be >= 1")]
pub struct PlanError(pub &'static str);

/// Load shape: `total_messages` split into `num_batches` bursts separated by
/// `inter_batch_sleep_ms`, spread over `workers` connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacingPlan {
    pub total_messages: u64,
    pub num_batches: u64,
    pub inter_batch_sleep_ms: u64,
    pub workers: usize,
}

pub fn build_plan(
    total: u64,
    batches: u64,
    sleep_ms: u64,
    workers: usize,
) -> Result<PacingPlan, PlanError> {
    if total == 0 {
        return Err(PlanError("total_messages"));
    }
    if batches == 0 {
        return Err(PlanError("num_batches"));
    }
    if workers == 0 {
        return Err(PlanError("workers"));
    }
    Ok(PacingPlan {
        total_messages: total,
        num_batches: batches,
        inter_batch_sleep_ms: sleep_ms,
        workers,
    })
}

impl PacingPlan {
    pub fn batch_size(&self) -> u64 {
        self.total_messages.div_ceil(self.num_batches)
    }

    /// Sleep time alone, with no sleep after the final batch.
    pub fn floor_duration_ms(&self) -> u64 {
        (self.num_batches - 1) * self.inter_batch_sleep_ms
    }

    /// Messages in each batch; the last takes whatever remains.
    pub fn batch_sizes(&self) -> Vec<u64> {
        let size = self.batch_size();
        let mut left = self.total_messages;
        (0..self.num_batches)
            .map(|_| {
                let n = size.min(left);
                left -= n;
                n
            })
            .collect()
    }

    /// Messages worker `worker` sends in a batch of `batch_len`.
    pub fn worker_share(&self, batch_len: u64, worker: usize) -> u64 {
        split(batch_len, self.workers, worker)
    }

    /// Total messages each worker sends over the whole plan.
    pub fn worker_totals(&self) -> Vec<u64> {
        let sizes = self.batch_sizes();
        (0..self.workers)
            .map(|w| sizes.iter().map(|&b| self.worker_share(b, w)).sum())
            .collect()
    }
}

/// Even split of `n` over `parts`, earlier parts taking the remainder.
pub(crate) fn split(n: u64, parts: usize, index: usize) -> u64 {
    let parts = parts as u64;
    n / parts + u64::from((index as u64) < n % parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_plans() {
        let p = build_plan(50_000, 10, 950, 10).unwrap();
        assert_eq!(p.batch_size(), 5_000);
        assert_eq!(p.floor_duration_ms(), 8_550);
        assert_eq!(
            build_plan(100_000, 20, 950, 10)
                .unwrap()
                .floor_duration_ms(),
            18_050
        );
        assert_eq!(
            build_plan(150_000, 30, 950, 10)
                .unwrap()
                .floor_duration_ms(),
            27_550
        );
    }

    #[test]
    fn small_plan() {
        let p = build_plan(9, 3, 0, 1).unwrap();
        assert_eq!(p.batch_sizes(), [3, 3, 3]);
        assert_eq!(p.floor_duration_ms(), 0);
        let single = build_plan(10, 1, 0, 1).unwrap();
        assert_eq!(single.batch_sizes(), [10]);
    }

    #[test]
    fn remainder_goes_to_last_batch() {
        let p = build_plan(10, 4, 5, 3).unwrap();
        assert_eq!(p.batch_size(), 3);
        assert_eq!(p.batch_sizes(), [3, 3, 3, 1]);
        assert_eq!(p.worker_totals().iter().sum::<u64>(), 10);
        assert_eq!(p.worker_share(3, 0), 1);
        assert_eq!(p.worker_share(1, 2), 0);
    }

    #[test]
    fn zero_inputs_rejected() {
        assert_eq!(build_plan(0, 1, 0, 1), Err(PlanError("total_messages")));
        assert_eq!(build_plan(1, 0, 0, 1), Err(PlanError("num_batches")));
        assert_eq!(build_plan(1, 1, 0, 0), Err(PlanError("workers")));
    }

    #[test]
    fn shares_cover_plan() {
        for (total, batches, workers) in [(50_000, 10, 10), (1_000, 2, 4), (7, 3, 5), (1, 1, 3)] {
            let p = build_plan(total, batches, 0, workers).unwrap();
            assert_eq!(p.batch_sizes().iter().sum::<u64>(), total);
            assert_eq!(p.worker_totals().iter().sum::<u64>(), total);
        }
    }
}
