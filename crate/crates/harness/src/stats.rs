//! Sample moments with standard errors, and the 4-SE acceptance rule.
//!
//! Chunked sampling: each chunk of `CHUNK` draws owns the RNG stream
//! `TRIAL_BASE + chunk index`, so results do not depend on how many worker
//! threads ran the chunks.

use airfl_core::channel::RngStream;
use airfl_core::config::streams::TRIAL_BASE;
use rayon::prelude::*;

/// Tolerance of every Monte-Carlo comparison, in standard errors.
pub const SE_MULTIPLIER: f64 = 4.0;

/// Draws per RNG stream in chunked sampling.
pub const CHUNK: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub se_mean: f64,
    /// From the fourth central moment: `√((m4 - s⁴·(n-3)/(n-1))/n)`.
    pub se_variance: f64,
}

impl Moments {
    /// Two-pass moments of `xs` (summed in order). Needs at least 4 values.
    pub fn of(xs: &[f64]) -> Self {
        assert!(xs.len() >= 4, "need at least 4 samples");
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let (mut m2, mut m4) = (0.0, 0.0);
        for x in xs {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m4 += d2 * d2;
        }
        let variance = m2 / (n - 1.0);
        let m4 = m4 / n;
        let var_of_var = (m4 - variance * variance * (n - 3.0) / (n - 1.0)) / n;
        Self {
            n: xs.len(),
            mean,
            variance,
            se_mean: (variance / n).sqrt(),
            se_variance: var_of_var.max(0.0).sqrt(),
        }
    }
}

/// `|estimate - target| ≤ 4·se`.
pub fn within_se(estimate: f64, se: f64, target: f64) -> bool {
    (estimate - target).abs() <= SE_MULTIPLIER * se
}

/// Split `n` draws into chunks and run `f(rng, len)` on each, in parallel.
/// Results come back in chunk order.
pub fn map_chunks<T, F>(n: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut RngStream, usize) -> T + Sync,
{
    (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::new(seed, TRIAL_BASE + c as u64);
            f(&mut rng, CHUNK.min(n - c * CHUNK))
        })
        .collect()
}

/// `n` draws of `f`, concatenated in chunk order.
pub fn sample_chunked<T, F>(n: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut RngStream) -> T + Sync,
{
    map_chunks(n, seed, |rng, len| (0..len).map(|_| f(rng)).collect::<Vec<T>>())
        .into_iter()
        .flatten()
        .collect()
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
