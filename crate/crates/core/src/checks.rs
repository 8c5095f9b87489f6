//! Self-verification suites shared by the `verify` command and the test
//! suite. Each suite draws seeded random instances and reports the worst
//! deviation against its tolerance.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::seeded_rng;
use crate::losses::{self, Likelihood, Objective};
use crate::math;
use crate::model::{
    bind_posterior, ForwardMessage, LastLayerPosterior, Model, OrdinalThresholds, Task, Variant,
};
use crate::special::{log_ndtr, normal_pdf, QuadratureRule, DEFAULT_QUADRATURE_NODES};
use crate::trainer::closed_form_alpha_v1;
use crate::{Matrix, Result, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Extra failure context, empty on success.
    pub note: String,
}

impl CheckReport {
    fn new(name: &str, cases: usize, worst: f64, tolerance: f64) -> Self {
        CheckReport {
            name: String::from(name),
            cases,
            worst,
            tolerance,
            passed: worst <= tolerance,
            note: String::new(),
        }
    }

    fn failed(name: &str, note: String) -> Self {
        CheckReport {
            name: String::from(name),
            cases: 0,
            worst: f64::INFINITY,
            tolerance: 0.0,
            passed: false,
            note,
        }
    }

    fn with_condition(mut self, ok: bool, note: &str) -> Self {
        if !ok {
            self.passed = false;
            self.note = String::from(note);
        }
        self
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} cases={} worst={:.3e} tol={:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst,
            self.tolerance
        )?;
        if !self.note.is_empty() {
            write!(f, " ({})", self.note)?;
        }
        Ok(())
    }
}

fn settle(name: &str, run: impl FnOnce() -> Result<CheckReport>) -> CheckReport {
    run().unwrap_or_else(|e| CheckReport::failed(name, format!("{e}")))
}

fn u(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

fn rule() -> Result<QuadratureRule> {
    QuadratureRule::gauss_hermite(DEFAULT_QUADRATURE_NODES)
}

/// Gauss–Hermite reproduces even moments of the standard normal.
pub fn quadrature_moments() -> CheckReport {
    settle("quadrature moments", || {
        let r = rule()?;
        let mut worst: f64 = 0.0;
        let mut double_fact = 1.0;
        for m in 0..=10 {
            if m > 0 {
                double_fact *= (2 * m - 1) as f64;
            }
            let got = r.expectation(|x| math::powf(x, (2 * m) as f64), 0.0, 1.0);
            worst = worst.max((got - double_fact).abs() / double_fact);
            let odd = r.expectation(|x| math::powf(x, (2 * m + 1) as f64), 0.0, 1.0);
            worst = worst.max(odd.abs() / double_fact);
        }
        Ok(CheckReport::new("quadrature moments", 22, worst, 1e-10))
    })
}

/// Closed-form Gaussian and probit convolutions against 128-node
/// quadrature of the marginal likelihood.
pub fn convolution_exactness(configs: usize, seed: u64) -> CheckReport {
    settle("convolution exactness", || {
        let r = rule()?;
        let mut rng = seeded_rng(seed, 0);
        let mut worst: f64 = 0.0;
        for _ in 0..configs {
            let mu = u(&mut rng, -3.0, 3.0);
            let v = u(&mut rng, 0.01, 1.0);
            let s2 = u(&mut rng, 0.25, 2.0);
            let y = mu + u(&mut rng, -3.0, 3.0);
            let msg = ForwardMessage {
                mu_f: vec![mu],
                v: vec![v],
            };
            let closed = losses::regression_data_terms(&msg, &[y], s2)?[0];
            let marg = r.expectation(
                |f| normal_pdf((y - f) / math::sqrt(s2)) / math::sqrt(s2),
                mu,
                v,
            );
            worst = worst.max((closed + math::ln(marg)).abs());

            let c = u(&mut rng, 0.5, 2.0);
            let ypm = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let closed = losses::probit_data_terms(&msg, &[ypm], c)?[0];
            let marg = r.expectation(|f| math::exp(log_ndtr(ypm * f / c)), mu, v);
            worst = worst.max((closed + math::ln(marg)).abs());
        }
        Ok(CheckReport::new(
            "convolution exactness",
            2 * configs,
            worst,
            1e-8,
        ))
    })
}

/// Bethe data term never exceeds the expected log-likelihood term; equal
/// when `v = 0`.
pub fn jensen_ordering(instances: usize, seed: u64) -> CheckReport {
    settle("jensen ordering", || {
        let r = rule()?;
        let mut rng = seeded_rng(seed, 0);
        let mut worst_eq: f64 = 0.0;
        let mut min_gap = f64::INFINITY;
        for i in 0..instances {
            let mu = u(&mut rng, -2.0, 2.0);
            let v = u(&mut rng, 0.05, 1.0);
            let (bethe_of, lik, y) = if i % 2 == 0 {
                let s2 = u(&mut rng, 0.25, 2.0);
                let y = mu + u(&mut rng, -2.0, 2.0);
                (
                    losses::regression_data_terms(
                        &ForwardMessage {
                            mu_f: vec![mu],
                            v: vec![v],
                        },
                        &[y],
                        s2,
                    )?[0],
                    Likelihood::Gaussian { sigma_obs_sq: s2 },
                    y,
                )
            } else {
                let c = u(&mut rng, 0.5, 2.0);
                let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                (
                    losses::probit_data_terms(
                        &ForwardMessage {
                            mu_f: vec![mu],
                            v: vec![v],
                        },
                        &[y],
                        c,
                    )?[0],
                    Likelihood::Probit { c },
                    y,
                )
            };
            let elbo = losses::elbo_data_term(
                &ForwardMessage {
                    mu_f: vec![mu],
                    v: vec![v],
                },
                &[y],
                lik,
                &r,
            );
            min_gap = min_gap.min(elbo - bethe_of);
            let point = ForwardMessage {
                mu_f: vec![mu],
                v: vec![0.0],
            };
            let (b0, e0) = match lik {
                Likelihood::Gaussian { sigma_obs_sq } => (
                    losses::regression_data_terms(&point, &[y], sigma_obs_sq)?[0],
                    losses::elbo_data_term(&point, &[y], lik, &r),
                ),
                Likelihood::Probit { c } => (
                    losses::probit_data_terms(&point, &[y], c)?[0],
                    losses::elbo_data_term(&point, &[y], lik, &r),
                ),
            };
            worst_eq = worst_eq.max((b0 - e0).abs());
        }
        Ok(
            CheckReport::new("jensen ordering", instances, worst_eq, 1e-9)
                .with_condition(min_gap > 0.0, "bethe term not strictly below the bound"),
        )
    })
}

/// `∂/∂v` identities against central differences, with their sign rules.
pub fn dloss_dv_identities(points: usize, seed: u64) -> CheckReport {
    settle("dloss/dv identities", || {
        let mut rng = seeded_rng(seed, 0);
        let mut worst: f64 = 0.0;
        let mut signs_ok = true;
        for _ in 0..points {
            let c = u(&mut rng, 0.5, 2.0);
            let v = u(&mut rng, 0.1, 3.0);
            let mut ymu = u(&mut rng, -3.0, 3.0);
            if ymu.abs() < 0.1 {
                ymu += 0.2f64.copysign(ymu);
            }
            let f = |vv: f64| -log_ndtr(ymu / math::sqrt(c * c + vv));
            let h = 1e-4 * v;
            let fd = (f(v + h) - f(v - h)) / (2.0 * h);
            let t = ymu / math::sqrt(c * c + v);
            let an = losses::dloss_dv_probit(t, c, v);
            worst = worst.max((an - fd).abs() / an.abs());
            signs_ok &= (an > 0.0) == (t > 0.0);

            let s2 = u(&mut rng, 0.1, 2.0);
            let total = s2 + v;
            let mut ratio = u(&mut rng, 0.0, 3.0);
            if (ratio - 1.0).abs() < 0.05 {
                ratio += 0.1;
            }
            let r = math::sqrt(ratio * total);
            let g = |vv: f64| r * r / (2.0 * (s2 + vv)) + 0.5 * math::ln(s2 + vv);
            let fd = (g(v + h) - g(v - h)) / (2.0 * h);
            let an = losses::dloss_dv_gauss(r, total);
            worst = worst.max((an - fd).abs() / an.abs());
            signs_ok &= (an > 0.0) == (r * r < total);
        }
        Ok(
            CheckReport::new("dloss/dv identities", 2 * points, worst, 1e-6)
                .with_condition(signs_ok, "sign condition violated"),
        )
    })
}

/// K = 2 ordinal loss equals the binary probit loss with the threshold
/// absorbed into the mean.
pub fn ordinal_reduction(draws: usize, seed: u64) -> CheckReport {
    settle("ordinal K=2 reduction", || {
        let mut rng = seeded_rng(seed, 0);
        let mut worst: f64 = 0.0;
        for _ in 0..draws {
            let n = 6;
            let c = u(&mut rng, 0.5, 2.0);
            let tau = u(&mut rng, -2.0, 2.0);
            let mu: Vec<f64> = (0..n).map(|_| u(&mut rng, -3.0, 3.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| u(&mut rng, 0.0, 2.0)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let th = OrdinalThresholds {
                tau1: tau,
                log_gaps: Vec::new(),
            };
            let ord = losses::ordinal_loss(
                &ForwardMessage {
                    mu_f: mu.clone(),
                    v: v.clone(),
                },
                &labels,
                &th,
                c,
                0.0,
            )?;
            let shifted = ForwardMessage {
                mu_f: mu.iter().map(|m| m - tau).collect(),
                v,
            };
            let bin =
                losses::binary_class_loss(&shifted, &losses::one_vs_rest(&labels, 1), c, 0.0)?;
            worst = worst.max((ord.data_term - bin.data_term).abs());
        }
        Ok(CheckReport::new(
            "ordinal K=2 reduction",
            draws,
            worst,
            1e-10,
        ))
    })
}

/// Random instance used by the model-level suites.
struct Instance {
    x: Matrix,
    y: Vec<f64>,
}

fn instance(task: Task, rng: &mut ChaCha8Rng, n: usize, d: usize) -> Instance {
    let x = Matrix::from_fn(n, d, |_, _| gauss(rng));
    let y = (0..n)
        .map(|_| match task {
            Task::Regression => gauss(rng),
            _ => rng.random_range(0..task.classes()) as f64,
        })
        .collect();
    Instance { x, y }
}

fn perturbed_model(
    task: Task,
    variant: Variant,
    depth: usize,
    d: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Model> {
    let mut m = Model::init(task, variant, d, depth, 4, 1.0, rng)?;
    for key in m.keys() {
        let base = m.get(key)?;
        let next = match key {
            crate::model::ParamKey::LogAlpha(_) => Matrix::scalar(u(rng, -2.0, 2.0)),
            crate::model::ParamKey::LogSigmaObsSq => Matrix::scalar(u(rng, -1.0, 1.0)),
            _ => {
                let mut b = base;
                b.data_mut().iter_mut().for_each(|w| *w += 0.3 * gauss(rng));
                b
            }
        };
        m.set(key, next)?;
    }
    Ok(m)
}

fn model_loss(
    model: &Model,
    inst: &Instance,
    objective: Objective,
    grad: bool,
) -> Result<(f64, Vec<Matrix>)> {
    let keys = model.keys();
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, &|_| grad);
    let xv = tape.constant(inst.x.clone());
    let lv = losses::model_loss_on_tape(
        &mut tape,
        model,
        &bound,
        xv,
        &inst.y,
        objective,
        losses::DEFAULT_LAMBDA_BB,
        losses::DEFAULT_PROBIT_SCALE,
    )?;
    let value = tape.scalar(lv.total);
    if !grad {
        return Ok((value, Vec::new()));
    }
    let g = tape.backward(lv.total)?;
    Ok((
        value,
        keys.iter()
            .map(|k| g.wrt(bound.var(*k).expect("bound")).clone())
            .collect(),
    ))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)` over all entries.
fn relative_error(a: &[Matrix], b: &[Matrix]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.data().iter().zip(y.data()) {
            diff += (p - q) * (p - q);
            na += p * p;
            nb += q * q;
        }
    }
    math::sqrt(diff) / math::sqrt(na).max(math::sqrt(nb)).max(1e-8)
}

fn numeric_gradient(
    params: &[Matrix],
    step: f64,
    mut eval: impl FnMut(&[Matrix]) -> Result<f64>,
) -> Result<Vec<Matrix>> {
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut g = Matrix::zeros(params[i].rows(), params[i].cols());
        for j in 0..params[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (fp - fm) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

pub const FD_STEP: f64 = 1e-5;

/// Adjusts analytic gradients before comparison; the identity in normal use.
pub type GradientHook<'a> = &'a dyn Fn(&mut [Matrix]);

/// Names of the losses exercised by [`gradient_integrity`].
pub fn gradient_cases() -> Vec<(&'static str, Task, Variant, Objective)> {
    let map = Objective::Map {
        lambda_ll: losses::DEFAULT_LAMBDA_LL,
    };
    vec![
        (
            "regression v1",
            Task::Regression,
            Variant::V1,
            Objective::Bethe,
        ),
        (
            "regression v2",
            Task::Regression,
            Variant::V2,
            Objective::Bethe,
        ),
        (
            "regression v3",
            Task::Regression,
            Variant::V3,
            Objective::Bethe,
        ),
        ("binary v3", Task::Binary, Variant::V3, Objective::Bethe),
        ("binary v2", Task::Binary, Variant::V2, Objective::Bethe),
        (
            "ova k=3 v3",
            Task::Ova { classes: 3 },
            Variant::V3,
            Objective::Bethe,
        ),
        (
            "ordinal k=3 v3",
            Task::Ordinal { classes: 3 },
            Variant::V3,
            Objective::Bethe,
        ),
        (
            "ordinal k=3 v1",
            Task::Ordinal { classes: 3 },
            Variant::V1,
            Objective::Bethe,
        ),
        ("map regression", Task::Regression, Variant::V1, map),
        ("map binary", Task::Binary, Variant::V1, map),
    ]
}

/// Tape gradients against central differences for every loss and for the
/// prior term alone, at `points` random parameter settings each.
pub fn gradient_integrity(points: usize, seed: u64, hook: GradientHook<'_>) -> Vec<CheckReport> {
    let mut reports = Vec::new();
    for (ci, (name, task, variant, objective)) in gradient_cases().into_iter().enumerate() {
        let label = format!("gradient {name}");
        reports.push(settle(&label, || {
            let mut rng = seeded_rng(seed, 100 + ci as u64);
            let mut worst: f64 = 0.0;
            for p in 0..points {
                let depth = 1 + p % 2;
                let model = perturbed_model(task, variant, depth, 3, &mut rng)?;
                let inst = instance(task, &mut rng, 8, 3);
                let (_, mut analytic) = model_loss(&model, &inst, objective, true)?;
                hook(&mut analytic);
                let keys = model.keys();
                let params = keys
                    .iter()
                    .map(|k| model.get(*k))
                    .collect::<Result<Vec<_>>>()?;
                let numeric = numeric_gradient(&params, FD_STEP, |ps| {
                    let mut m = model.clone();
                    for (k, v) in keys.iter().zip(ps) {
                        m.set(*k, v.clone())?;
                    }
                    model_loss(&m, &inst, objective, false).map(|r| r.0)
                })?;
                worst = worst.max(relative_error(&analytic, &numeric));
            }
            Ok(CheckReport::new(&label, points, worst, 1e-4))
        }));
    }
    for (vi, variant) in [Variant::V1, Variant::V2, Variant::V3]
        .into_iter()
        .enumerate()
    {
        let label = format!("gradient prior term {variant}");
        reports.push(settle(&label, || {
            let mut rng = seeded_rng(seed, 200 + vi as u64);
            let mut worst: f64 = 0.0;
            for _ in 0..points {
                let model = perturbed_model(Task::Binary, variant, 0, 5, &mut rng)?;
                let post = &model.heads[0];
                let prior = |p: &LastLayerPosterior, grad: bool| -> Result<(f64, Vec<Matrix>)> {
                    let mut tape = Tape::new();
                    let hv = bind_posterior(&mut tape, p, grad);
                    let out = losses::prior_term_on_tape(&mut tape, &hv)?;
                    let value = tape.scalar(out);
                    if !grad {
                        return Ok((value, Vec::new()));
                    }
                    let g = tape.backward(out)?;
                    let mut gs = vec![g.wrt(hv.mu).clone()];
                    if let crate::model::CovVars::Diag(c) | crate::model::CovVars::Chol(c) = hv.cov
                    {
                        gs.push(g.wrt(c).clone());
                    }
                    gs.push(g.wrt(hv.log_alpha).clone());
                    Ok((value, gs))
                };
                let (_, mut analytic) = prior(post, true)?;
                hook(&mut analytic);
                let mut params = vec![post.mu.clone()];
                match &post.cov {
                    crate::model::Covariance::Diag { log_var } => params.push(log_var.clone()),
                    crate::model::Covariance::Chol { raw } => params.push(raw.clone()),
                    crate::model::Covariance::None => {}
                }
                params.push(Matrix::scalar(post.log_alpha));
                let numeric = numeric_gradient(&params, FD_STEP, |ps| {
                    let mut q = post.clone();
                    q.mu = ps[0].clone();
                    match &mut q.cov {
                        crate::model::Covariance::Diag { log_var } => *log_var = ps[1].clone(),
                        crate::model::Covariance::Chol { raw } => *raw = ps[1].clone(),
                        crate::model::Covariance::None => {}
                    }
                    q.log_alpha = ps[ps.len() - 1].as_scalar()?;
                    prior(&q, false).map(|r| r.0)
                })?;
                worst = worst.max(relative_error(&analytic, &numeric));
            }
            Ok(CheckReport::new(&label, points, worst, 1e-4))
        }));
    }
    reports
}

/// With every log-variance at −30 and no jitter, Bethe data terms equal the
/// MAP data terms.
pub fn map_limit(instances: usize, seed: u64) -> CheckReport {
    settle("MAP limit", || {
        let mut rng = seeded_rng(seed, 0);
        let mut worst: f64 = 0.0;
        let tasks = [
            Task::Regression,
            Task::Binary,
            Task::Ova { classes: 3 },
            Task::Ordinal { classes: 3 },
        ];
        for i in 0..instances {
            let task = tasks[i % tasks.len()];
            let variant = if i % 2 == 0 { Variant::V2 } else { Variant::V3 };
            let mut model = perturbed_model(task, variant, 1, 3, &mut rng)?;
            for head in &mut model.heads {
                head.epsilon = 0.0;
                head.cov = match &head.cov {
                    crate::model::Covariance::Diag { log_var } => crate::model::Covariance::Diag {
                        log_var: log_var.map(|_| -30.0),
                    },
                    crate::model::Covariance::Chol { raw } => crate::model::Covariance::Chol {
                        raw: Matrix::from_fn(raw.rows(), raw.cols(), |r, c| {
                            if r == c {
                                -30.0
                            } else {
                                0.0
                            }
                        }),
                    },
                    crate::model::Covariance::None => crate::model::Covariance::None,
                };
            }
            let inst = instance(task, &mut rng, 10, 3);
            let data = |obj: Objective| -> Result<f64> {
                let mut tape = Tape::new();
                let bound = model.bind(&mut tape, &|_| false);
                let xv = tape.constant(inst.x.clone());
                let lv = losses::model_loss_on_tape(
                    &mut tape, &model, &bound, xv, &inst.y, obj, 0.0, 1.0,
                )?;
                Ok(lv.breakdown(&tape).data_term)
            };
            let bethe = data(Objective::Bethe)?;
            let map = data(Objective::Map { lambda_ll: 0.0 })?;
            worst = worst.max((bethe - map).abs());
        }
        Ok(CheckReport::new("MAP limit", instances, worst, 1e-6))
    })
}

/// The V1 prior term is stationary in `log α` at `α = H/‖μ‖²`.
pub fn v1_fixed_point(draws: usize, seed: u64) -> CheckReport {
    settle("V1 alpha fixed point", || {
        let mut rng = seeded_rng(seed, 0);
        let mut worst: f64 = 0.0;
        for _ in 0..draws {
            let h = rng.random_range(1..40);
            let scale = math::exp(u(&mut rng, -2.0, 2.0));
            let mut post = LastLayerPosterior::init(Variant::V1, h);
            post.mu = Matrix::from_fn(h, 1, |_, _| scale * gauss(&mut rng));
            post.log_alpha = math::ln(closed_form_alpha_v1(&post.mu)?);
            let mut tape = Tape::new();
            let hv = bind_posterior(&mut tape, &post, true);
            let out = losses::prior_term_on_tape(&mut tape, &hv)?;
            let g = tape.backward(out)?;
            worst = worst.max(g.wrt(hv.log_alpha).as_scalar()?.abs());
        }
        Ok(CheckReport::new("V1 alpha fixed point", draws, worst, 1e-8))
    })
}

/// Every suite at its default size.
pub fn run_all(seed: u64) -> Vec<CheckReport> {
    let mut out = vec![
        quadrature_moments(),
        convolution_exactness(125, seed),
        jensen_ordering(1000, seed),
        dloss_dv_identities(100, seed),
        ordinal_reduction(50, seed),
        map_limit(40, seed),
        v1_fixed_point(100, seed),
    ];
    out.extend(gradient_integrity(20, seed, &|_| {}));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_flip_is_caught() {
        let reports = gradient_integrity(2, 3, &|g| {
            for m in g.iter_mut() {
                *m = m.map(|v| -v);
            }
        });
        assert!(reports.iter().all(|r| !r.passed), "{reports:?}");
    }
}
