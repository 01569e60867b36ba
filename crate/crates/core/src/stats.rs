//! Summary statistics for benchmark samples.

use serde::{Deserialize, Serialize};

use crate::error::{MegError, Result};

/// `stddev` is the sample (n-1) standard deviation; zero when n = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    pub stddev: f64,
}

pub fn compute_stats(samples: &[f64]) -> Result<BenchStats> {
    if samples.is_empty() {
        return Err(MegError::InvalidArgument("no samples".into()));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(MegError::InvalidArgument("non-finite sample".into()));
    }
    let n = samples.len();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let mean = samples.iter().sum::<f64>() / n as f64;
    let stddev = if n < 2 {
        0.0
    } else {
        let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    Ok(BenchStats { n, median, mean, stddev })
}
