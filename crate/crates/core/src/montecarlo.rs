//! Deterministic parallel sampling and batch-means error estimates.
//!
//! Work is split into fixed-size chunks; chunk `c` draws from a ChaCha8
//! stream seeded by `(seed, stream = c)`. Results depend on the seed and the
//! chunk size only, never on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Samples per independent stream.
pub const CHUNK: usize = 4096;

/// Default number of batches for batch-means standard errors.
pub const DEFAULT_BATCHES: usize = 100;

/// RNG for chunk `chunk` of a run seeded with `seed`.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Draws `count` values with `draw`, in parallel and in a fixed order.
pub fn par_samples<T, F>(count: usize, seed: u64, draw: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c as u64);
            let len = CHUNK.min(count - c * CHUNK);
            (0..len).map(|_| draw(&mut rng)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

/// Mean with a batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchMeans {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Splits `values` into `batches` contiguous batches of equal length
/// (the remainder joins the last batch) and returns the overall mean and the
/// standard error from the spread of batch means.
pub fn batch_means(values: &[f64], batches: usize) -> Result<BatchMeans> {
    let n = values.len();
    if batches < 2 || n < batches {
        return Err(Error::TooFew(format!("{n} samples for {batches} batches")));
    }
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| {
            let end = if b + 1 == batches { n } else { (b + 1) * size };
            let s = &values[b * size..end];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    let bm = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - bm) * (m - bm)).sum::<f64>() / (batches - 1) as f64;
    Ok(BatchMeans { mean, std_error: (var / batches as f64).sqrt(), samples: n })
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and
/// the continuous CDF `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

/// Asymptotic 1% critical value of the one-sample KS distance.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}

/// Threads used by the global rayon pool, configured once. Later calls are
/// no-ops and return the pool size already in force.
pub fn configure_threads(threads: Option<usize>) -> usize {
    if let Some(t) = threads.filter(|&t| t > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    rayon::current_num_threads()
}
