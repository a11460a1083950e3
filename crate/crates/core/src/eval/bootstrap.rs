//! Percentile bootstrap confidence intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pool::parallel_map;

pub const DEFAULT_RESAMPLES: usize = 5000;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Bootstrap distribution of `statistic` over `n_resamples` resamples of `n` indices.
///
/// Resample `b` draws from its own stream of the seeded generator, so the
/// result does not depend on `workers`.
pub fn bootstrap_distribution<F>(n: usize, n_resamples: usize, seed: u64, workers: usize, statistic: F) -> Result<Vec<f64>>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if n == 0 {
        return Err(Error::contract("cannot bootstrap empty data"));
    }
    if n_resamples == 0 {
        return Err(Error::contract("need at least one resample"));
    }
    let ids: Vec<u64> = (0..n_resamples as u64).collect();
    Ok(parallel_map(&ids, workers, |_, &b| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        statistic(&idx)
    }))
}

/// Percentile interval of a bootstrap distribution at `level`.
pub fn percentile_interval(mut stats: Vec<f64>, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::contract("confidence level must lie in (0, 1)"));
    }
    if stats.is_empty() {
        return Err(Error::contract("empty bootstrap distribution"));
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&stats, tail), quantile_sorted(&stats, 1.0 - tail)))
}

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_ci(values: &[f64], n_resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    let stats = bootstrap_distribution(values.len(), n_resamples, seed, 4, |idx| {
        idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
    })?;
    percentile_interval(stats, level)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_data_gives_zero_width() {
        let (lo, hi) = bootstrap_ci(&[0.3; 50], 200, 0.95, 1).unwrap();
        assert_eq!(lo, hi);
        assert!((lo - 0.3).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(bootstrap_ci(&[], 10, 0.95, 1).is_err());
        assert!(bootstrap_ci(&[1.0], 0, 0.95, 1).is_err());
        assert!(bootstrap_ci(&[1.0], 10, 1.0, 1).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&s, 0.5), 1.5);
        assert_eq!(quantile_sorted(&s, 0.0), 0.0);
        assert_eq!(quantile_sorted(&s, 1.0), 3.0);
    }
}
