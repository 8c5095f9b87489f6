//! Paired t-test.

use anyhow::{bail, Result};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    /// Mean of `a − b`.
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
    /// One-sided p-value in the direction of the observed mean difference.
    pub p_one_sided: f64,
}

/// Student's paired t-test on `a − b`. Constant differences give `t = ±∞`
/// (p = 0), or `t = 0` (p = 1) when they are all zero.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        bail!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        );
    }
    let n = a.len();
    if n < 2 {
        bail!("paired t-test needs at least two pairs");
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        bail!("paired samples must be finite");
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let t = if se > 0.0 {
        mean / se
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    };
    let upper = if t.is_infinite() {
        0.0
    } else {
        StudentsT::new(0.0, 1.0, df)?.sf(t.abs())
    };
    Ok(PairedTest {
        n,
        mean_diff: mean,
        t,
        df,
        p_two_sided: (2.0 * upper).min(1.0),
        p_one_sided: upper,
    })
}
