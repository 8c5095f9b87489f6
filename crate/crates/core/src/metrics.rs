//! Closed-form predictives and evaluation metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::losses::ordinal_probs;
use crate::math;
use crate::model::{ForwardMessage, Model, Task};
use crate::special::{gauss_conv_nll, ndtr, ndtri};
use crate::{Error, Matrix, Result};

/// Nominal coverage levels `0.05, 0.10, …, 0.95`.
pub fn calibration_levels() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

pub const ECE_BINS: usize = 10;
pub const CLASS_PROB_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionPredictive {
    /// Original target units.
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl RegressionPredictive {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::Dimension {
                op: "RegressionPredictive",
                lhs: (mean.len(), 1),
                rhs: (variance.len(), 1),
            });
        }
        if variance.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::domain(
                "RegressionPredictive",
                "variance must be > 0",
            ));
        }
        Ok(RegressionPredictive { mean, variance })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassPredictive {
    pub probs: Matrix,
}

impl ClassPredictive {
    /// Normalises each row; an all-zero row becomes uniform.
    pub fn from_unnormalized(mut scores: Matrix) -> Result<Self> {
        let k = scores.cols();
        if k == 0 || scores.data().iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::domain(
                "ClassPredictive",
                "scores must be finite and >= 0",
            ));
        }
        for i in 0..scores.rows() {
            let s: f64 = scores.row(i).iter().sum();
            for j in 0..k {
                scores[(i, j)] = if s > 0.0 {
                    scores[(i, j)] / s
                } else {
                    1.0 / k as f64
                };
            }
        }
        Ok(ClassPredictive { probs: scores })
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }

    pub fn classes(&self) -> usize {
        self.probs.cols()
    }

    /// First index of the largest probability.
    pub fn argmax(&self, i: usize) -> usize {
        let row = self.probs.row(i);
        let mut best = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = j;
            }
        }
        best
    }
}

fn check_len(op: &'static str, n: usize, m: usize) -> Result<()> {
    if n != m || n == 0 {
        return Err(Error::Dimension {
            op,
            lhs: (n, 1),
            rhs: (m, 1),
        });
    }
    Ok(())
}

/// Mean Gaussian negative log-likelihood including `½ log 2π`.
pub fn gaussian_nll(pred: &RegressionPredictive, y: &[f64]) -> Result<f64> {
    check_len("gaussian_nll", pred.len(), y.len())?;
    let mut s = 0.0;
    for ((m, v), t) in pred.mean.iter().zip(&pred.variance).zip(y) {
        s += gauss_conv_nll(*t, *m, *v)?;
    }
    Ok(s / y.len() as f64)
}

pub fn rmse(pred: &RegressionPredictive, y: &[f64]) -> Result<f64> {
    check_len("rmse", pred.len(), y.len())?;
    let sse: f64 = pred
        .mean
        .iter()
        .zip(y)
        .map(|(m, t)| (m - t) * (m - t))
        .sum();
    Ok(math::sqrt(sse / y.len() as f64))
}

/// Empirical coverage of the central interval at each level of
/// [`calibration_levels`].
pub fn coverage(pred: &RegressionPredictive, y: &[f64]) -> Result<Vec<f64>> {
    check_len("coverage", pred.len(), y.len())?;
    let n = y.len() as f64;
    calibration_levels()
        .into_iter()
        .map(|a| {
            let z = ndtri(0.5 * (1.0 + a))?;
            let inside = pred
                .mean
                .iter()
                .zip(&pred.variance)
                .zip(y)
                .filter(|((m, v), t)| (*t - *m).abs() <= z * math::sqrt(**v))
                .count();
            Ok(inside as f64 / n)
        })
        .collect()
}

/// Mean absolute gap between empirical and nominal coverage.
pub fn calib_err(pred: &RegressionPredictive, y: &[f64]) -> Result<f64> {
    let cov = coverage(pred, y)?;
    let levels = calibration_levels();
    Ok(cov
        .iter()
        .zip(&levels)
        .map(|(c, a)| (c - a).abs())
        .sum::<f64>()
        / levels.len() as f64)
}

fn check_labels(pred: &ClassPredictive, labels: &[usize]) -> Result<()> {
    check_len("class metrics", pred.len(), labels.len())?;
    if labels.iter().any(|&k| k >= pred.classes()) {
        return Err(Error::invalid("label outside the predictive's classes"));
    }
    Ok(())
}

pub fn accuracy(pred: &ClassPredictive, labels: &[usize]) -> Result<f64> {
    check_labels(pred, labels)?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, &k)| pred.argmax(*i) == k)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean `−log p(true label)`, probabilities floored at `1e-300`.
pub fn class_nll(pred: &ClassPredictive, labels: &[usize]) -> Result<f64> {
    check_labels(pred, labels)?;
    let s: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &k)| -math::ln(pred.probs[(i, k)].max(CLASS_PROB_FLOOR)))
        .sum();
    Ok(s / labels.len() as f64)
}

/// One equal-width confidence bin.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

/// Equal-width bins on max-probability confidence. Confidence 1 falls in
/// the last bin.
pub fn reliability_bins(
    pred: &ClassPredictive,
    labels: &[usize],
    bins: usize,
) -> Result<Vec<ReliabilityBin>> {
    check_labels(pred, labels)?;
    if bins == 0 {
        return Err(Error::invalid("need at least one bin"));
    }
    let mut hit = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for (i, &k) in labels.iter().enumerate() {
        let j = pred.argmax(i);
        let c = pred.probs[(i, j)];
        let b = ((c * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += c;
        hit[b] += usize::from(j == k);
    }
    Ok((0..bins)
        .map(|b| {
            let n = count[b].max(1) as f64;
            ReliabilityBin {
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                count: count[b],
                accuracy: hit[b] as f64 / n,
                confidence: conf[b] / n,
            }
        })
        .collect())
}

/// Expected calibration error over [`ECE_BINS`] bins.
pub fn ece(pred: &ClassPredictive, labels: &[usize]) -> Result<f64> {
    let n = labels.len() as f64;
    Ok(reliability_bins(pred, labels, ECE_BINS)?
        .iter()
        .map(|b| b.count as f64 / n * (b.accuracy - b.confidence).abs())
        .sum())
}

// ---------------------------------------------------------------------------
// model predictives

/// Whether the last-layer variance enters the predictive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Readout {
    /// Full Bethe predictive with `v = ψᵀΣψ`.
    Bayes,
    /// Point prediction, `v = 0`.
    Point,
}

fn readout_messages(model: &Model, x: &Matrix, readout: Readout) -> Result<Vec<ForwardMessage>> {
    let mut msgs = model.messages(x)?;
    if readout == Readout::Point {
        for m in &mut msgs {
            m.v.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(msgs)
}

/// `N(μᵀψ + ȳ, σ²_obs + v)` in original units.
pub fn predictive_regression(
    model: &Model,
    x: &Matrix,
    target_mean: f64,
    readout: Readout,
) -> Result<RegressionPredictive> {
    if model.task != Task::Regression {
        return Err(Error::invalid(
            "regression predictive on a classification model",
        ));
    }
    let msg = readout_messages(model, x, readout)?.remove(0);
    let s2 = model.sigma_obs_sq();
    RegressionPredictive::new(
        msg.mu_f.iter().map(|m| m + target_mean).collect(),
        msg.v.iter().map(|v| s2 + v).collect(),
    )
}

fn probit_positive(msg: &ForwardMessage, i: usize, c: f64) -> f64 {
    ndtr(msg.mu_f[i] / math::sqrt(c * c + msg.v[i]))
}

/// Columns `(P(y = 0), P(y = 1))`.
pub fn predictive_binary(msg: &ForwardMessage, c: f64) -> Result<ClassPredictive> {
    let p = Matrix::from_fn(msg.len(), 2, |i, j| {
        let q = probit_positive(msg, i, c);
        if j == 1 {
            q
        } else {
            1.0 - q
        }
    });
    Ok(ClassPredictive { probs: p })
}

/// `p_k ∝ Φ(μ_k/√(c² + v_k))`.
pub fn predictive_ova(msgs: &[ForwardMessage], c: f64) -> Result<ClassPredictive> {
    let n = msgs.first().map_or(0, ForwardMessage::len);
    if msgs.iter().any(|m| m.len() != n) {
        return Err(Error::invalid("OvA heads disagree on sample count"));
    }
    ClassPredictive::from_unnormalized(Matrix::from_fn(n, msgs.len(), |i, k| {
        probit_positive(&msgs[k], i, c)
    }))
}

/// Class probabilities of any classification model.
pub fn predictive_class(
    model: &Model,
    x: &Matrix,
    c: f64,
    readout: Readout,
) -> Result<ClassPredictive> {
    let msgs = readout_messages(model, x, readout)?;
    match model.task {
        Task::Regression => Err(Error::invalid("class predictive on a regression model")),
        Task::Binary => predictive_binary(&msgs[0], c),
        Task::Ova { .. } => predictive_ova(&msgs, c),
        Task::Ordinal { .. } => {
            let t = model
                .thresholds
                .as_ref()
                .ok_or_else(|| Error::invalid("ordinal model without thresholds"))?;
            Ok(ClassPredictive {
                probs: ordinal_probs(&msgs[0], t, c)?,
            })
        }
    }
}

/// Gaussian moment-matched to an equal-weight mixture.
pub fn mixture_regression(members: &[RegressionPredictive]) -> Result<RegressionPredictive> {
    let first = members
        .first()
        .ok_or_else(|| Error::invalid("empty ensemble"))?;
    let n = first.len();
    if members.iter().any(|m| m.len() != n) {
        return Err(Error::invalid("ensemble members disagree on sample count"));
    }
    let m = members.len() as f64;
    let mut mean = vec![0.0; n];
    let mut var = vec![0.0; n];
    for i in 0..n {
        let mu = members.iter().map(|p| p.mean[i]).sum::<f64>() / m;
        let second = members
            .iter()
            .map(|p| p.variance[i] + p.mean[i] * p.mean[i])
            .sum::<f64>()
            / m;
        mean[i] = mu;
        // guards the identical-member case against cancellation
        let spread = members
            .iter()
            .map(|p| (p.mean[i] - mu) * (p.mean[i] - mu))
            .sum::<f64>()
            / m;
        let avg_var = members.iter().map(|p| p.variance[i]).sum::<f64>() / m;
        var[i] = if spread == 0.0 {
            avg_var
        } else {
            (second - mu * mu).max(avg_var)
        };
    }
    RegressionPredictive::new(mean, var)
}

/// Equal-weight average of class probabilities.
pub fn average_class(members: &[ClassPredictive]) -> Result<ClassPredictive> {
    let first = members
        .first()
        .ok_or_else(|| Error::invalid("empty ensemble"))?;
    let (n, k) = first.probs.shape();
    if members.iter().any(|m| m.probs.shape() != (n, k)) {
        return Err(Error::invalid("ensemble members disagree on shape"));
    }
    let m = members.len() as f64;
    Ok(ClassPredictive {
        probs: Matrix::from_fn(n, k, |i, j| {
            members.iter().map(|p| p.probs[(i, j)]).sum::<f64>() / m
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg(mean: Vec<f64>, var: Vec<f64>) -> RegressionPredictive {
        RegressionPredictive::new(mean, var).unwrap()
    }

    #[test]
    fn gaussian_nll_constants() {
        let p = reg(vec![1.0, -2.0], vec![1.0, 1.0]);
        assert!((gaussian_nll(&p, &[1.0, -2.0]).unwrap() - 0.918_938_533_204_672_7).abs() < 1e-12);
        let tau = 2.0 * core::f64::consts::PI;
        let p = reg(vec![0.0], vec![1.0 / tau]);
        assert!(gaussian_nll(&p, &[0.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn rmse_examples() {
        let p = reg(vec![1.0, 2.0, 3.0], vec![1.0; 3]);
        assert_eq!(rmse(&p, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((rmse(&p, &[4.0, -1.0, 6.0]).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn calib_err_extremes() {
        let y = [1.0, -1.0, 0.5];
        let tiny = reg(vec![0.0; 3], vec![1e-300; 3]);
        assert!((calib_err(&tiny, &y).unwrap() - 0.5).abs() < 1e-12);
        let huge = reg(vec![0.0; 3], vec![1e300; 3]);
        assert!((calib_err(&huge, &y).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_hot_predictions_are_perfect() {
        let p = ClassPredictive {
            probs: Matrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]),
        };
        let l = [0, 2];
        assert_eq!(accuracy(&p, &l).unwrap(), 1.0);
        assert_eq!(class_nll(&p, &l).unwrap(), 0.0);
        assert_eq!(ece(&p, &l).unwrap(), 0.0);
    }

    #[test]
    fn uniform_binary() {
        let p = ClassPredictive {
            probs: Matrix::filled(4, 2, 0.5),
        };
        let l = [0, 1, 1, 1];
        let acc = accuracy(&p, &l).unwrap();
        assert_eq!(acc, 0.25);
        assert!((class_nll(&p, &l).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        assert!((ece(&p, &l).unwrap() - (acc - 0.5f64).abs()).abs() < 1e-15);
    }

    #[test]
    fn zero_rows_become_uniform() {
        let p = ClassPredictive::from_unnormalized(Matrix::from_rows(&[&[0.0, 0.0], &[1.0, 3.0]]))
            .unwrap();
        assert_eq!(p.probs.row(0), &[0.5, 0.5]);
        assert_eq!(p.probs.row(1), &[0.25, 0.75]);
    }

    #[test]
    fn binary_at_zero_mean() {
        let msg = ForwardMessage {
            mu_f: vec![0.0],
            v: vec![3.0],
        };
        assert_eq!(
            predictive_binary(&msg, 1.0).unwrap().probs.row(0),
            &[0.5, 0.5]
        );
    }

    #[test]
    fn ensemble_moment_matching() {
        let a = reg(vec![1.0], vec![1e-300]);
        let b = reg(vec![-1.0], vec![1e-300]);
        let mix = mixture_regression(&[a.clone(), b]).unwrap();
        assert_eq!(mix.mean, vec![0.0]);
        assert!((mix.variance[0] - 1.0).abs() < 1e-15);
        let same = mixture_regression(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(same, a);
    }
}
