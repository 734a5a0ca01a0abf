//! Percentile bootstrap for a binomial proportion.
//!
//! Each resample draws from an independent RNG stream keyed by (seed,
//! resample index), so the parallel and sequential paths produce bitwise
//! identical intervals for the same seed and resample count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::StatsError;

/// Fewer resamples than this gives intervals too noisy to report.
pub const MIN_RESAMPLES: u32 = 1_000;

fn validate(successes: u64, n: u64, level: f64, resamples: u32) -> Result<(), StatsError> {
    if n == 0 {
        return Err(StatsError::EmptySample);
    }
    if successes > n {
        return Err(StatsError::InvalidArguments(format!(
            "successes {successes} exceeds n {n}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidArguments(format!(
            "confidence level {level} must be inside (0, 1)"
        )));
    }
    if resamples < MIN_RESAMPLES {
        return Err(StatsError::InvalidArguments(format!(
            "resamples {resamples} below the minimum {MIN_RESAMPLES}"
        )));
    }
    Ok(())
}

fn one_resample(successes: u64, n: u64, seed: u64, index: u32) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(index) + 1);
    let p = successes as f64 / n as f64;
    let binomial = Binomial::new(n, p).expect("p validated in [0, 1]");
    binomial.sample(&mut rng) as f64 / n as f64
}

/// Linear-interpolation percentile over a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let position = q * (sorted.len() - 1) as f64;
    let lower = position.floor() as usize;
    let upper = position.ceil() as usize;
    if lower == upper {
        sorted[lower]
    } else {
        let weight = position - lower as f64;
        sorted[lower] * (1.0 - weight) + sorted[upper] * weight
    }
}

fn interval_from(mut draws: Vec<f64>, level: f64) -> (f64, f64) {
    draws.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    (
        percentile(&draws, alpha / 2.0),
        percentile(&draws, 1.0 - alpha / 2.0),
    )
}

/// Percentile bootstrap interval for `successes / n`.
///
/// Uses the rayon path when the `parallel` feature is on; the result is
/// identical either way.
pub fn bootstrap_ci(
    successes: u64,
    n: u64,
    level: f64,
    resamples: u32,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    validate(successes, n, level, resamples)?;
    #[cfg(feature = "parallel")]
    let draws: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|i| one_resample(successes, n, seed, i))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let draws: Vec<f64> = (0..resamples)
        .map(|i| one_resample(successes, n, seed, i))
        .collect();
    Ok(interval_from(draws, level))
}

/// Single-threaded variant of [`bootstrap_ci`], kept callable under every
/// feature set for benchmarking and equivalence checks.
pub fn bootstrap_ci_sequential(
    successes: u64,
    n: u64,
    level: f64,
    resamples: u32,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    validate(successes, n, level, resamples)?;
    let draws: Vec<f64> = (0..resamples)
        .map(|i| one_resample(successes, n, seed, i))
        .collect();
    Ok(interval_from(draws, level))
}
