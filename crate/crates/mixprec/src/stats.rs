//! Ensemble summary statistics.
//!
//! The headline quantity is the significant-bits estimate
//! `s2 = -log2 |sigma / mu|` over an ensemble of run results, with the
//! sample standard deviation Bessel-corrected. A spread of zero means the
//! ensemble agrees to full binary64 significance, reported as the sentinel
//! 53; estimates above 53 are capped there for the same reason.

use serde::Serialize;

use crate::error::{Error, Result};

/// Summary of one sample of ensemble values.
#[derive(Clone, Debug, Serialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    /// Bessel-corrected sample standard deviation; 0 when n = 1.
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    /// Significant bits; present only when n >= 2.
    pub s2: Option<f64>,
}

fn mean_and_stddev(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Significant bits shared by the sample: `-log2 |sigma / mu|`, capped at 53.
///
/// Degenerate cases: a zero spread returns the sentinel 53 (full binary64
/// significance, also when every sample is zero); a zero mean with nonzero
/// spread returns 0 (no significant bits). Errors on samples of fewer than
/// two values, where the spread is undefined.
pub fn significant_bits(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::Stats(format!(
            "significant bits need at least two samples, got {}",
            xs.len()
        )));
    }
    let (mean, sd) = mean_and_stddev(xs);
    if sd == 0.0 {
        return Ok(53.0);
    }
    if mean == 0.0 {
        return Ok(0.0);
    }
    Ok((-(sd / mean).abs().log2()).min(53.0))
}

/// Summarizes a non-empty sample. `s2` is filled in from
/// [`significant_bits`] when the sample has at least two values.
pub fn summarize(xs: &[f64]) -> Result<SampleStats> {
    if xs.is_empty() {
        return Err(Error::Stats("cannot summarize an empty sample".into()));
    }
    let (mean, stddev) = mean_and_stddev(xs);
    let (mut min, mut max) = (xs[0], xs[0]);
    for &x in &xs[1..] {
        if x < min {
            min = x;
        }
        if x > max {
            max = x;
        }
    }
    let s2 = if xs.len() >= 2 {
        Some(significant_bits(xs)?)
    } else {
        None
    };
    Ok(SampleStats {
        n: xs.len(),
        mean,
        stddev,
        min,
        max,
        s2,
    })
}
