//! Cross-path reductions. Every sum here runs in path order on a single
//! thread, so results never depend on the rayon pool size.

use rayon::prelude::*;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl MeanEstimate {
    /// True when `target` lies within `k` standard errors of the mean.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Two-pass mean and standard error of the mean.
pub fn mean_estimate(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    let m = mean(values);
    let var = if n > 1 {
        values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    MeanEstimate {
        mean: m,
        std_error: (var / n.max(1) as f64).sqrt(),
        count: n,
    }
}

pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

/// Fixed chunk size for parallel reductions.
pub(crate) const REDUCE_CHUNK: usize = 4096;

/// Sums `width`-wide partial vectors produced per chunk of `0..n`.
///
/// Chunks are formed independently of the thread pool and their partial sums
/// are combined in chunk order, so the result is bit-identical for any number
/// of threads.
pub(crate) fn chunked_sum<F>(n: usize, width: usize, accumulate: F) -> Vec<f64>
where
    F: Fn(std::ops::Range<usize>, &mut [f64]) + Sync,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            let lo = c * REDUCE_CHUNK;
            accumulate(lo..(lo + REDUCE_CHUNK).min(n), &mut acc);
            acc
        })
        .collect();
    let mut total = vec![0.0; width];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}
