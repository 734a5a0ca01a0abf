//! Pooled two-proportion z-test.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::StatsError;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ZTestResult {
    pub z: f64,
    /// Two-sided p-value under the standard normal.
    pub p_value: f64,
    pub p1: f64,
    pub p2: f64,
    pub pooled: f64,
}

/// Pooled two-proportion z-test on (x1/n1) versus (x2/n2).
///
/// Errors when either sample is empty or the pooled proportion is 0 or 1,
/// where the statistic is undefined.
pub fn two_prop_z(x1: u64, n1: u64, x2: u64, n2: u64) -> Result<ZTestResult, StatsError> {
    if n1 == 0 || n2 == 0 {
        return Err(StatsError::EmptySample);
    }
    if x1 > n1 || x2 > n2 {
        return Err(StatsError::InvalidArguments(format!(
            "successes exceed sample sizes: ({x1}/{n1}, {x2}/{n2})"
        )));
    }
    let p1 = x1 as f64 / n1 as f64;
    let p2 = x2 as f64 / n2 as f64;
    let pooled = (x1 + x2) as f64 / (n1 + n2) as f64;
    if pooled == 0.0 || pooled == 1.0 {
        return Err(StatsError::DegenerateProportion { pooled });
    }
    let standard_error =
        (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let z = (p1 - p2) / standard_error;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p_value = 2.0 * normal.cdf(-z.abs());
    Ok(ZTestResult {
        z,
        p_value,
        p1,
        p2,
        pooled,
    })
}
