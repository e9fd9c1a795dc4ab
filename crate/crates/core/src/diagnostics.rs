//! Batch-means mixing diagnostics.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Linear-interpolation quantile on the order statistics (position
/// `1 + q (len - 1)`, one-based).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config("quantile level must lie in [0, 1]".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, q))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Lower quartile, mean and upper quartile of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    pub q25: f64,
    pub mean: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub batch_size: usize,
    pub batches: Vec<BatchStats>,
    /// Cross-batch mean of each statistic.
    pub mean: BatchStats,
    /// Cross-batch standard deviation (denominator `B - 1`).
    pub sd: BatchStats,
}

/// Splits the first `batches * batch_size` values into consecutive batches.
pub fn batch_summaries(trace: &[f64], batches: usize, batch_size: usize) -> Result<BatchSummary> {
    if batches == 0 || batch_size == 0 {
        return Err(Error::Config("batch count and size must be positive".into()));
    }
    let needed = batches * batch_size;
    if trace.len() < needed {
        return Err(Error::TraceLength {
            needed,
            available: trace.len(),
        });
    }
    let stats: Vec<BatchStats> = trace[..needed]
        .chunks_exact(batch_size)
        .map(|chunk| {
            let mut sorted = chunk.to_vec();
            sorted.sort_by(f64::total_cmp);
            BatchStats {
                q25: quantile_sorted(&sorted, 0.25),
                mean: chunk.iter().sum::<f64>() / batch_size as f64,
                q75: quantile_sorted(&sorted, 0.75),
            }
        })
        .collect();
    let column = |f: fn(&BatchStats) -> f64| -> (f64, f64) {
        let vals: Vec<f64> = stats.iter().map(f).collect();
        mean_sd(&vals)
    };
    let (m25, s25) = column(|b| b.q25);
    let (mm, sm) = column(|b| b.mean);
    let (m75, s75) = column(|b| b.q75);
    Ok(BatchSummary {
        batch_size,
        batches: stats,
        mean: BatchStats {
            q25: m25,
            mean: mm,
            q75: m75,
        },
        sd: BatchStats {
            q25: s25,
            mean: sm,
            q75: s75,
        },
    })
}

/// Sample mean and standard deviation (denominator `len - 1`; zero for one value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, libm::sqrt(ss / (n - 1.0)))
}
