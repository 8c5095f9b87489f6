//! Training objectives.
//!
//! Every objective is the prior term `−log Z_w` plus one closed-form data
//! term per observation; the deterministic backbone contributes nothing but
//! its L2 penalty. Tape builders (`*_on_tape`) are what the trainer
//! differentiates; the plain functions wrap them on constant tapes.

use alloc::format;
use alloc::vec::Vec;

use crate::linalg;
use crate::math::{self, HALF_LN_2PI, LN_2PI};
use crate::model::{
    bind_posterior, message_on_tape, CovVars, ForwardMessage, HeadVars, LastLayerPosterior,
    MessageVars, Model, OrdinalThresholds, Task,
};
use crate::special::{log_ndtr, mills_ratio, QuadratureRule};
use crate::tensor::{Matrix, Tape, Var};
use crate::{Error, Result};

/// Probit scale used throughout.
pub const DEFAULT_PROBIT_SCALE: f64 = 1.0;
pub const DEFAULT_LAMBDA_BB: f64 = 0.01;
pub const DEFAULT_LAMBDA_LL: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub prior_term: f64,
    pub data_term: f64,
    pub backbone_l2: f64,
    pub total: f64,
}

/// Tape nodes of one objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub prior: Var,
    pub data: Var,
    pub backbone_l2: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            prior_term: tape.scalar(self.prior),
            data_term: tape.scalar(self.data),
            backbone_l2: tape.scalar(self.backbone_l2),
            total: tape.scalar(self.total),
        }
    }
}

/// What the last layer is trained against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// Bethe free energy with the `−log Z_w` prior term.
    Bethe,
    /// Point estimate: `v = 0` and `λ_ll ‖μ‖²` instead of the prior term.
    Map { lambda_ll: f64 },
}

// ---------------------------------------------------------------------------
// tape builders

/// `−log N(mu; 0, Σ_eff + α⁻¹ I)`.
pub fn prior_term_on_tape(tape: &mut Tape, head: &HeadVars) -> Result<Var> {
    let h = tape.value(head.mu).rows();
    let half_h = 0.5 * h as f64;
    match head.cov {
        CovVars::None => {
            // (α/2)‖μ‖² − (H/2) log α + (H/2) log 2π
            let alpha = tape.exp(head.log_alpha)?;
            let sq = tape.square(head.mu)?;
            let norm = tape.sum(sq)?;
            let quad = tape.hadamard(alpha, norm)?;
            let quad = tape.scale(quad, 0.5)?;
            let logdet = tape.scale(head.log_alpha, half_h)?;
            let t = tape.sub(quad, logdet)?;
            tape.add_const(t, half_h * LN_2PI)
        }
        CovVars::Diag(log_var) => {
            let neg = tape.scale(head.log_alpha, -1.0)?;
            let inv_alpha = tape.exp(neg)?;
            let inv_alpha = tape.broadcast_row(inv_alpha, h)?;
            let s = tape.exp(log_var)?;
            let s = tape.add_const(s, head.epsilon)?;
            let s = tape.add(s, inv_alpha)?;
            let sq = tape.square(head.mu)?;
            let q = tape.div(sq, s)?;
            let q = tape.sum(q)?;
            let ld = tape.log(s)?;
            let ld = tape.sum(ld)?;
            let t = tape.add(q, ld)?;
            let t = tape.scale(t, 0.5)?;
            tape.add_const(t, half_h * LN_2PI)
        }
        CovVars::Chol(raw) => {
            let l = tape.lower_exp_diag(raw)?;
            let lt = tape.transpose(l)?;
            let sigma = tape.matmul(l, lt)?;
            let neg = tape.scale(head.log_alpha, -1.0)?;
            let inv_alpha = tape.exp(neg)?;
            let diag = tape.add_const(inv_alpha, head.epsilon)?;
            let eye = tape.constant(Matrix::identity(h));
            let ridge = tape.scale_by(eye, diag)?;
            let cov = tape.add(sigma, ridge)?;
            tape.gauss_nll(head.mu, cov)
        }
    }
}

/// `Σ_n [(y_n − μ_n)²/(2V_n) + ½ log V_n + ½ log 2π]`, `V_n = σ²_obs + v_n`.
pub fn regression_data_on_tape(
    tape: &mut Tape,
    msg: MessageVars,
    y: &[f64],
    log_sigma_obs_sq: Var,
) -> Result<Var> {
    let n = check_len(tape, msg, y.len())?;
    let s2 = tape.exp(log_sigma_obs_sq)?;
    let s2 = tape.broadcast_row(s2, n)?;
    let total_var = tape.add(msg.var, s2)?;
    let yv = tape.constant(Matrix::column(y.to_vec()));
    let resid = tape.sub(yv, msg.mean)?;
    let r2 = tape.square(resid)?;
    let two_v = tape.scale(total_var, 2.0)?;
    let fit = tape.div(r2, two_v)?;
    let fit = tape.sum(fit)?;
    let logv = tape.log(total_var)?;
    let logv = tape.sum(logv)?;
    let logv = tape.scale(logv, 0.5)?;
    let t = tape.add(fit, logv)?;
    tape.add_const(t, n as f64 * HALF_LN_2PI)
}

/// `Σ_n −log Φ(y_n μ_n / √(c² + v_n))` for `y_n ∈ {−1, +1}`.
pub fn probit_data_on_tape(tape: &mut Tape, msg: MessageVars, y_pm: &[f64], c: f64) -> Result<Var> {
    check_len(tape, msg, y_pm.len())?;
    check_scale(c)?;
    let d = tape.add_const(msg.var, c * c)?;
    let d = tape.sqrt(d)?;
    let yv = tape.constant(Matrix::column(y_pm.to_vec()));
    let margin = tape.hadamard(yv, msg.mean)?;
    let t = tape.div(margin, d)?;
    let lp = tape.log_ndtr(t)?;
    let s = tape.sum(lp)?;
    tape.scale(s, -1.0)
}

/// `Σ_n −log P(y_n)` of the cumulative probit with cut points `thresholds`.
pub fn ordinal_data_on_tape(
    tape: &mut Tape,
    msg: MessageVars,
    labels: &[usize],
    thresholds: Var,
    c: f64,
) -> Result<Var> {
    check_len(tape, msg, labels.len())?;
    check_scale(c)?;
    let d = tape.add_const(msg.var, c * c)?;
    let d = tape.sqrt(d)?;
    let ll = tape.ordinal_log_lik(msg.mean, d, thresholds, labels)?;
    let s = tape.sum(ll)?;
    tape.scale(s, -1.0)
}

/// `λ ‖W‖²_F`.
pub fn l2_on_tape(tape: &mut Tape, w: Var, lambda: f64) -> Result<Var> {
    let sq = tape.square(w)?;
    let s = tape.sum(sq)?;
    tape.scale(s, lambda)
}

fn sum_or_zero(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut it = terms.iter();
    let Some(&first) = it.next() else {
        return Ok(tape.constant(Matrix::scalar(0.0)));
    };
    let mut acc = first;
    for &t in it {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

fn check_len(tape: &Tape, msg: MessageVars, n: usize) -> Result<usize> {
    let m = tape.value(msg.mean);
    if m.shape() != (n, 1) || tape.value(msg.var).shape() != (n, 1) {
        return Err(Error::Dimension {
            op: "data term",
            lhs: m.shape(),
            rhs: (n, 1),
        });
    }
    Ok(n)
}

fn check_scale(c: f64) -> Result<()> {
    if c > 0.0 {
        Ok(())
    } else {
        Err(Error::domain("probit", "scale c must be > 0"))
    }
}

/// Class index targets stored as floats.
pub fn labels_from_targets(y: &[f64], classes: usize) -> Result<Vec<usize>> {
    y.iter()
        .map(|&v| {
            let k = v as usize;
            if v < 0.0 || v != k as f64 || k >= classes {
                Err(Error::invalid(format!("label {v} outside 0..{classes}")))
            } else {
                Ok(k)
            }
        })
        .collect()
}

/// `+1` for `label == positive`, `−1` otherwise.
pub fn one_vs_rest(labels: &[usize], positive: usize) -> Vec<f64> {
    labels
        .iter()
        .map(|&k| if k == positive { 1.0 } else { -1.0 })
        .collect()
}

/// Full objective of `model` on inputs `x` (a tape node) and targets `y`.
pub fn model_loss_on_tape(
    tape: &mut Tape,
    model: &Model,
    bound: &crate::model::BoundModel,
    x: Var,
    y: &[f64],
    objective: Objective,
    lambda_bb: f64,
    c: f64,
) -> Result<LossVars> {
    let psi = crate::model::features_on_tape(tape, x, &bound.backbone)?;
    let n = tape.value(psi).rows();
    let mut msgs = Vec::with_capacity(bound.heads.len());
    for head in &bound.heads {
        let msg = match objective {
            Objective::Bethe => message_on_tape(tape, head, psi)?,
            Objective::Map { .. } => MessageVars {
                mean: tape.matmul(psi, head.mu)?,
                var: tape.constant(Matrix::zeros(n, 1)),
            },
        };
        msgs.push(msg);
    }
    let mut priors = Vec::with_capacity(bound.heads.len());
    for head in &bound.heads {
        priors.push(match objective {
            Objective::Bethe => prior_term_on_tape(tape, head)?,
            Objective::Map { lambda_ll } => l2_on_tape(tape, head.mu, lambda_ll)?,
        });
    }
    let prior = sum_or_zero(tape, &priors)?;
    let data = match model.task {
        Task::Regression => regression_data_on_tape(tape, msgs[0], y, bound.log_sigma_obs_sq)?,
        Task::Binary => {
            let labels = labels_from_targets(y, 2)?;
            probit_data_on_tape(tape, msgs[0], &one_vs_rest(&labels, 1), c)?
        }
        Task::Ova { classes } => {
            let labels = labels_from_targets(y, classes)?;
            let mut terms = Vec::with_capacity(classes);
            for (k, msg) in msgs.iter().enumerate() {
                terms.push(probit_data_on_tape(
                    tape,
                    *msg,
                    &one_vs_rest(&labels, k),
                    c,
                )?);
            }
            sum_or_zero(tape, &terms)?
        }
        Task::Ordinal { classes } => {
            let labels = labels_from_targets(y, classes)?;
            let (tau1, gaps) = (
                bound
                    .tau1
                    .ok_or_else(|| Error::invalid("ordinal model without thresholds"))?,
                bound.log_gaps.expect("bound with tau1"),
            );
            let taus = tape.ordered_thresholds(tau1, gaps)?;
            ordinal_data_on_tape(tape, msgs[0], &labels, taus, c)?
        }
    };
    let mut l2_terms = Vec::with_capacity(bound.backbone.len());
    for &w in &bound.backbone {
        l2_terms.push(l2_on_tape(tape, w, lambda_bb)?);
    }
    let backbone_l2 = sum_or_zero(tape, &l2_terms)?;
    let t = tape.add(prior, data)?;
    let total = tape.add(t, backbone_l2)?;
    Ok(LossVars {
        prior,
        data,
        backbone_l2,
        total,
    })
}

// ---------------------------------------------------------------------------
// plain evaluation

/// `−log N(mu; 0, Σ_eff + α⁻¹ I)`; `sigma_eff = None` is the `Σ = 0` case.
pub fn prior_neg_log_z(mu: &Matrix, sigma_eff: Option<&Matrix>, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::domain("prior_neg_log_z", "alpha must be > 0"));
    }
    let h = mu.rows();
    let half_h = 0.5 * h as f64;
    match sigma_eff {
        None => Ok(0.5 * alpha * mu.frobenius_sq() - half_h * math::ln(alpha) + half_h * LN_2PI),
        Some(s) => {
            let mut cov = s.clone();
            for i in 0..h {
                cov[(i, i)] += 1.0 / alpha;
            }
            let l = linalg::cholesky(&cov)?;
            let x = linalg::cholesky_solve(&l, mu)?;
            let quad: f64 = mu.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
            Ok(0.5 * quad + 0.5 * linalg::chol_log_det(&l) + half_h * LN_2PI)
        }
    }
}

/// Prior term of a posterior through the same tape path used in training.
pub fn posterior_prior_term(post: &LastLayerPosterior) -> Result<f64> {
    let mut tape = Tape::new();
    let head = bind_posterior(&mut tape, post, false);
    let p = prior_term_on_tape(&mut tape, &head)?;
    Ok(tape.scalar(p))
}

fn message_constants(tape: &mut Tape, msg: &ForwardMessage) -> MessageVars {
    MessageVars {
        mean: tape.constant(Matrix::column(msg.mu_f.clone())),
        var: tape.constant(Matrix::column(msg.v.clone())),
    }
}

fn breakdown(prior: f64, data: f64) -> LossBreakdown {
    LossBreakdown {
        prior_term: prior,
        data_term: data,
        backbone_l2: 0.0,
        total: prior + data,
    }
}

pub fn regression_loss(
    msg: &ForwardMessage,
    y: &[f64],
    sigma_obs_sq: f64,
    prior: f64,
) -> Result<LossBreakdown> {
    if !(sigma_obs_sq > 0.0) || msg.v.iter().any(|&v| !(sigma_obs_sq + v > 0.0)) {
        return Err(Error::domain("regression_loss", "V_n must be > 0"));
    }
    let mut tape = Tape::new();
    let m = message_constants(&mut tape, msg);
    let ls = tape.constant(Matrix::scalar(math::ln(sigma_obs_sq)));
    let d = regression_data_on_tape(&mut tape, m, y, ls)?;
    Ok(breakdown(prior, tape.scalar(d)))
}

/// Per-sample regression data terms.
pub fn regression_data_terms(
    msg: &ForwardMessage,
    y: &[f64],
    sigma_obs_sq: f64,
) -> Result<Vec<f64>> {
    (0..msg.len())
        .map(|i| {
            let single = ForwardMessage {
                mu_f: alloc::vec![msg.mu_f[i]],
                v: alloc::vec![msg.v[i]],
            };
            regression_loss(&single, &y[i..=i], sigma_obs_sq, 0.0).map(|b| b.data_term)
        })
        .collect()
}

pub fn binary_class_loss(
    msg: &ForwardMessage,
    y_pm: &[f64],
    c: f64,
    prior: f64,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let m = message_constants(&mut tape, msg);
    let d = probit_data_on_tape(&mut tape, m, y_pm, c)?;
    Ok(breakdown(prior, tape.scalar(d)))
}

/// Per-sample `−log Φ(t_n)`.
pub fn probit_data_terms(msg: &ForwardMessage, y_pm: &[f64], c: f64) -> Result<Vec<f64>> {
    check_scale(c)?;
    Ok((0..msg.len())
        .map(|i| -log_ndtr(y_pm[i] * msg.mu_f[i] / math::sqrt(c * c + msg.v[i])))
        .collect())
}

/// Sum of `K` binary losses with `y_{n,k} = +1` iff `label_n == k`.
pub fn ova_loss(
    msgs: &[ForwardMessage],
    labels: &[usize],
    c: f64,
    priors: &[f64],
) -> Result<LossBreakdown> {
    let k = msgs.len();
    if k < 2 || priors.len() != k {
        return Err(Error::invalid(
            "OvA needs K >= 2 heads and one prior per head",
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {bad} outside 0..{k}")));
    }
    let mut data = 0.0;
    for (head, msg) in msgs.iter().enumerate() {
        data += binary_class_loss(msg, &one_vs_rest(labels, head), c, 0.0)?.data_term;
    }
    Ok(breakdown(priors.iter().sum(), data))
}

pub fn ordinal_loss(
    msg: &ForwardMessage,
    labels: &[usize],
    thresholds: &OrdinalThresholds,
    c: f64,
    prior: f64,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let m = message_constants(&mut tape, msg);
    let t1 = tape.constant(Matrix::scalar(thresholds.tau1));
    let g = tape.constant(Matrix::column(thresholds.log_gaps.clone()));
    let taus = tape.ordered_thresholds(t1, g)?;
    let d = ordinal_data_on_tape(&mut tape, m, labels, taus, c)?;
    Ok(breakdown(prior, tape.scalar(d)))
}

/// Class probabilities of the cumulative probit, one row per sample.
pub fn ordinal_probs(
    msg: &ForwardMessage,
    thresholds: &OrdinalThresholds,
    c: f64,
) -> Result<Matrix> {
    check_scale(c)?;
    let taus = thresholds.taus();
    let k = taus.len() + 1;
    Ok(Matrix::from_fn(msg.len(), k, |i, j| {
        let d = math::sqrt(c * c + msg.v[i]);
        let upper = (j + 1 < k).then(|| (taus[j] - msg.mu_f[i]) / d);
        let lower = (j > 0).then(|| (taus[j - 1] - msg.mu_f[i]) / d);
        math::exp(crate::special::log_ndtr_diff(upper, lower))
    }))
}

/// Squared-error NLL at fixed `σ²_obs` plus `λ_ll ‖w‖²` plus the backbone
/// penalty already evaluated by the caller.
pub fn map_regression_loss(
    preds: &[f64],
    y: &[f64],
    sigma_obs_sq: f64,
    weights: &Matrix,
    lambda_ll: f64,
    backbone_l2: f64,
) -> Result<LossBreakdown> {
    let msg = ForwardMessage {
        mu_f: preds.to_vec(),
        v: alloc::vec![0.0; preds.len()],
    };
    let data = regression_loss(&msg, y, sigma_obs_sq, 0.0)?.data_term;
    let prior = lambda_ll * weights.frobenius_sq();
    Ok(LossBreakdown {
        prior_term: prior,
        data_term: data,
        backbone_l2,
        total: prior + data + backbone_l2,
    })
}

/// Probit cross-entropy `Σ −log Φ(y f)` plus `λ_ll ‖w‖²` plus the backbone
/// penalty.
pub fn map_probit_loss(
    logits: &[f64],
    y_pm: &[f64],
    weights: &Matrix,
    lambda_ll: f64,
    backbone_l2: f64,
) -> Result<LossBreakdown> {
    let msg = ForwardMessage {
        mu_f: logits.to_vec(),
        v: alloc::vec![0.0; logits.len()],
    };
    let data = binary_class_loss(&msg, y_pm, 1.0, 0.0)?.data_term;
    let prior = lambda_ll * weights.frobenius_sq();
    Ok(LossBreakdown {
        prior_term: prior,
        data_term: data,
        backbone_l2,
        total: prior + data + backbone_l2,
    })
}

/// Observation likelihood for the expected-log-likelihood reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Likelihood {
    Gaussian { sigma_obs_sq: f64 },
    Probit { c: f64 },
}

/// `Σ_n E_{q(f_n)}[−log p(y_n | f_n)]` by Gauss–Hermite quadrature: the
/// data part of the variational bound.
pub fn elbo_data_term(
    msg: &ForwardMessage,
    y: &[f64],
    lik: Likelihood,
    rule: &QuadratureRule,
) -> f64 {
    (0..msg.len())
        .map(|i| {
            let yi = y[i];
            match lik {
                Likelihood::Gaussian { sigma_obs_sq } => rule.expectation(
                    |f| {
                        (yi - f) * (yi - f) / (2.0 * sigma_obs_sq)
                            + 0.5 * math::ln(sigma_obs_sq)
                            + HALF_LN_2PI
                    },
                    msg.mu_f[i],
                    msg.v[i],
                ),
                Likelihood::Probit { c } => {
                    rule.expectation(|f| -log_ndtr(yi * f / c), msg.mu_f[i], msg.v[i])
                }
            }
        })
        .sum()
}

/// `∂/∂v [−log Φ(t)]` with `t = y μ / √(c² + v)`, written in terms of `t`:
/// `½ h(t) t / (c² + v)`.
pub fn dloss_dv_probit(t: f64, c: f64, v: f64) -> f64 {
    0.5 * mills_ratio(t) * t / (c * c + v)
}

/// `∂/∂v` of the Gaussian data term: `(1 − r²/V) / (2V)`.
pub fn dloss_dv_gauss(resid: f64, total_var: f64) -> f64 {
    (1.0 - resid * resid / total_var) / (2.0 * total_var)
}
