//! Full-batch training with validation early stopping, the α regimes,
//! the fixed-σ² variant and deep ensembles.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{seeded_rng, Dataset, Prepared, INIT_STREAM};
use crate::losses::{self, labels_from_targets, LossBreakdown, Objective};
use crate::math;
use crate::metrics::{self, ClassPredictive, Readout, RegressionPredictive};
use crate::model::{Model, ParamKey, Task, Variant, DEFAULT_EPSILON, DEFAULT_WIDTH};
use crate::optim::{AdamConfig, AdamState, DEFAULT_LR};
use crate::{Error, Matrix, Result, Tape};

pub const DEFAULT_MAX_STEPS: usize = 5000;
pub const DEFAULT_PATIENCE: usize = 50;
pub const DEFAULT_MIN_IMPROVEMENT: f64 = 1e-6;
pub const DEFAULT_FS_WARM_STEPS: usize = 500;
pub const DEFAULT_ENSEMBLE_SIZE: usize = 5;
pub const ALPHA_RUNAWAY: f64 = 1e4;

pub fn default_cv_grid() -> Vec<f64> {
    alloc::vec![0.01, 0.1, 1.0, 10.0]
}

/// How the prior precision is chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum Regime {
    /// Learned jointly with everything else.
    Eb,
    Fixed(f64),
    /// One fixed-α run per grid point, best validation NLL wins.
    Cv(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Bethe,
    /// Point estimate with `λ_ll ‖μ‖²`; σ²_obs for regression is set to the
    /// validation MSE.
    Map,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub method: Method,
    pub variant: Variant,
    pub regime: Regime,
    /// Fix σ²_obs at the validation MSE of a MAP warm start.
    pub fixed_sigma: bool,
    pub depth: usize,
    pub width: usize,
    pub lr: f64,
    pub max_steps: usize,
    pub patience: usize,
    pub min_improvement: f64,
    pub lambda_bb: f64,
    pub lambda_ll: f64,
    pub probit_scale: f64,
    pub epsilon: f64,
    pub fs_warm_steps: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(task: Task, variant: Variant, seed: u64) -> Self {
        TrainConfig {
            task,
            method: Method::Bethe,
            variant,
            regime: Regime::Eb,
            fixed_sigma: false,
            depth: 1,
            width: DEFAULT_WIDTH,
            lr: DEFAULT_LR,
            max_steps: DEFAULT_MAX_STEPS,
            patience: DEFAULT_PATIENCE,
            min_improvement: DEFAULT_MIN_IMPROVEMENT,
            lambda_bb: losses::DEFAULT_LAMBDA_BB,
            lambda_ll: losses::DEFAULT_LAMBDA_LL,
            probit_scale: losses::DEFAULT_PROBIT_SCALE,
            epsilon: DEFAULT_EPSILON,
            fs_warm_steps: DEFAULT_FS_WARM_STEPS,
            seed,
        }
    }

    pub fn map(task: Task, seed: u64) -> Self {
        TrainConfig {
            method: Method::Map,
            ..TrainConfig::new(task, Variant::V1, seed)
        }
    }

    fn objective(&self) -> Objective {
        match self.method {
            Method::Bethe => Objective::Bethe,
            Method::Map => Objective::Map {
                lambda_ll: self.lambda_ll,
            },
        }
    }

    fn readout(&self) -> Readout {
        match self.method {
            Method::Bethe => Readout::Bayes,
            Method::Map => Readout::Point,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.patience == 0 || !(self.probit_scale > 0.0) {
            return Err(Error::invalid(
                "lr, patience and probit scale must be positive",
            ));
        }
        if !(self.epsilon >= 0.0) || !(self.lambda_bb >= 0.0) || !(self.lambda_ll >= 0.0) {
            return Err(Error::invalid("penalties and jitter must be non-negative"));
        }
        match &self.regime {
            Regime::Fixed(a) if !(*a > 0.0) => Err(Error::invalid("fixed alpha must be > 0")),
            Regime::Cv(g) if g.is_empty() || g.iter().any(|a| !(*a > 0.0)) => {
                Err(Error::invalid("CV grid must be non-empty and positive"))
            }
            _ => Ok(()),
        }
    }
}

/// State after one step (step 0 is the initialisation).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub train: LossBreakdown,
    pub val_nll: f64,
    pub test_nll: f64,
    /// Mean prior precision over heads; NaN for MAP.
    pub alpha: f64,
    /// NaN for classification.
    pub sigma_obs_sq: f64,
    /// Mean training-set `v_n`; NaN unless Bethe regression.
    pub mean_v: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    /// Smallest test NLL along the run.
    pub fn oracle_test_nll(&self) -> Option<f64> {
        self.records
            .iter()
            .map(|r| r.test_nll)
            .filter(|v| v.is_finite())
            .reduce(f64::min)
    }

    pub fn max_alpha(&self) -> Option<f64> {
        self.records
            .iter()
            .map(|r| r.alpha)
            .filter(|v| v.is_finite())
            .reduce(f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    EarlyStopped,
    MaxSteps,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub alpha_runaway: bool,
    pub variance_starvation: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Best-validation checkpoint.
    pub model: Model,
    pub trajectory: Trajectory,
    pub best_step: usize,
    pub best_val_nll: f64,
    pub stop: StopReason,
    pub diagnostics: Diagnostics,
    /// Set when the α came from a CV grid.
    pub selected_alpha: Option<f64>,
}

/// Patience counter over a stream of validation losses.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_improvement: f64,
    best: f64,
    best_step: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Check {
    /// Strictly below every earlier value; take a checkpoint.
    pub new_best: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_improvement: f64) -> Self {
        EarlyStopping {
            patience,
            min_improvement,
            best: f64::INFINITY,
            best_step: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, step: usize, value: f64) -> Check {
        let significant = value < self.best - self.min_improvement;
        let new_best = value < self.best;
        if new_best {
            self.best = value;
            self.best_step = step;
        }
        if significant {
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Check {
            new_best,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_step(&self) -> usize {
        self.best_step
    }
}

/// `H / ‖μ‖²`, the stationary prior precision when `Σ = 0`.
pub fn closed_form_alpha_v1(mu: &Matrix) -> Result<f64> {
    let sq = mu.frobenius_sq();
    if !(sq > 0.0) {
        return Err(Error::domain(
            "closed_form_alpha_v1",
            "mu is zero; alpha is unbounded",
        ));
    }
    Ok(mu.len() as f64 / sq)
}

fn population_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

fn point_mse(model: &Model, ds: &Dataset) -> Result<f64> {
    let msg = model.messages(&ds.x)?.remove(0);
    Ok(msg
        .mu_f
        .iter()
        .zip(&ds.y)
        .map(|(m, y)| (m - y) * (m - y))
        .sum::<f64>()
        / ds.len() as f64)
}

/// Predictive distributions of a trained model; regression in original units.
pub fn predict_regression(
    model: &Model,
    ds: &Dataset,
    readout: Readout,
) -> Result<RegressionPredictive> {
    metrics::predictive_regression(model, &ds.x, ds.target_mean, readout)
}

pub fn predict_class(
    model: &Model,
    ds: &Dataset,
    c: f64,
    readout: Readout,
) -> Result<ClassPredictive> {
    metrics::predictive_class(model, &ds.x, c, readout)
}

/// Mean predictive NLL of `model` on `ds`; `sigma_override` replaces
/// σ²_obs in a regression predictive.
fn heldout_nll(
    model: &Model,
    ds: &Dataset,
    cfg: &TrainConfig,
    sigma_override: Option<f64>,
) -> Result<f64> {
    if model.task == Task::Regression {
        let mut pred = metrics::predictive_regression(model, &ds.x, 0.0, cfg.readout())?;
        if let Some(s2) = sigma_override {
            let base = model.sigma_obs_sq();
            pred.variance.iter_mut().for_each(|v| *v = *v - base + s2);
        }
        metrics::gaussian_nll(&pred, &ds.y)
    } else {
        let pred = metrics::predictive_class(model, &ds.x, cfg.probit_scale, cfg.readout())?;
        metrics::class_nll(&pred, &labels_from_targets(&ds.y, model.task.classes())?)
    }
}

fn is_numerical(e: &Error) -> bool {
    matches!(
        e,
        Error::NonFinite { .. } | Error::Domain { .. } | Error::NotPositiveDefinite { .. }
    )
}

fn dump(model: &Model, x: &Matrix, cause: &str) -> String {
    let v = model
        .messages(x)
        .ok()
        .and_then(|m| m.into_iter().next())
        .map(|m| m.v);
    let vstats = match v {
        Some(v) if !v.is_empty() => {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            format!("v mean={mean:e} min={min:e} max={max:e}")
        }
        _ => String::from("v unavailable"),
    };
    format!(
        "{cause}; alpha={:?} sigma_obs_sq={:e} {vstats}",
        model.alphas(),
        model.sigma_obs_sq()
    )
}

struct Phase<'a> {
    cfg: &'a TrainConfig,
    objective: Objective,
    keys: Vec<ParamKey>,
}

impl Phase<'_> {
    /// Training loss at the current parameters, and its gradient.
    fn loss_and_grad(
        &self,
        model: &Model,
        x: &Matrix,
        y: &[f64],
    ) -> Result<(LossBreakdown, Vec<Matrix>)> {
        let mut tape = Tape::new();
        let keys = &self.keys;
        let bound = model.bind(&mut tape, &|k| keys.contains(&k));
        let xv = tape.constant(x.clone());
        let lv = losses::model_loss_on_tape(
            &mut tape,
            model,
            &bound,
            xv,
            y,
            self.objective,
            self.cfg.lambda_bb,
            self.cfg.probit_scale,
        )?;
        let breakdown = lv.breakdown(&tape);
        let grad = tape.backward(lv.total)?;
        if !grad.is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        let grads = self
            .keys
            .iter()
            .map(|k| grad.wrt(bound.var(*k).expect("bound key")).clone())
            .collect();
        Ok((breakdown, grads))
    }

    fn apply(&self, model: &mut Model, adam: &mut AdamState, grads: &[Matrix]) -> Result<()> {
        let mut params = self
            .keys
            .iter()
            .map(|k| model.get(*k))
            .collect::<Result<Vec<_>>>()?;
        adam.step(&mut params, grads, self.cfg.lr)?;
        for (k, p) in self.keys.iter().zip(params) {
            model.set(*k, p)?;
        }
        Ok(())
    }
}

fn trainable_keys(model: &Model, cfg: &TrainConfig, objective: Objective) -> Vec<ParamKey> {
    let bethe = objective == Objective::Bethe;
    model
        .keys()
        .into_iter()
        .filter(|k| match k {
            ParamKey::Backbone(_) | ParamKey::Mu(_) | ParamKey::Tau1 | ParamKey::LogGaps => true,
            ParamKey::Cov(_) => bethe,
            ParamKey::LogAlpha(_) => bethe && cfg.regime == Regime::Eb,
            ParamKey::LogSigmaObsSq => bethe && !cfg.fixed_sigma,
        })
        .collect()
}

/// Trains one model. A [`Regime::Cv`] config delegates to [`cv_select`].
pub fn train(cfg: &TrainConfig, data: &Prepared) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Regime::Cv(grid) = &cfg.regime {
        return cv_select(cfg, grid, data).map(|c| c.outcome);
    }
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::invalid(
            "train and validation folds must be non-empty",
        ));
    }
    let regression = cfg.task == Task::Regression;
    if regression != (data.task_classes() == 0) {
        return Err(Error::invalid(
            "task kind does not match the dataset targets",
        ));
    }
    let (train, val, test) = (&data.train, &data.val, &data.test);
    let init_sigma = if regression {
        let s = population_variance(&train.y);
        if !(s > 0.0) {
            return Err(Error::invalid("training targets are constant"));
        }
        s
    } else {
        1.0
    };
    let variant = match cfg.method {
        Method::Bethe => cfg.variant,
        Method::Map => Variant::V1,
    };
    let mut rng = seeded_rng(cfg.seed, INIT_STREAM);
    let mut model = Model::init(
        cfg.task,
        variant,
        train.dim(),
        cfg.depth,
        cfg.width,
        init_sigma,
        &mut rng,
    )?;
    for head in &mut model.heads {
        head.epsilon = cfg.epsilon;
        if let Regime::Fixed(a) = cfg.regime {
            head.log_alpha = math::ln(a);
        }
    }

    let fs = cfg.fixed_sigma && regression && cfg.method == Method::Bethe;
    if fs {
        let warm_obj = Objective::Map {
            lambda_ll: cfg.lambda_ll,
        };
        let warm = Phase {
            cfg,
            objective: warm_obj,
            keys: trainable_keys(&model, cfg, warm_obj)
                .into_iter()
                .filter(|k| matches!(k, ParamKey::Backbone(_) | ParamKey::Mu(_)))
                .collect(),
        };
        let mut adam = AdamState::new(AdamConfig::default());
        for step in 1..=cfg.fs_warm_steps {
            let r = warm
                .loss_and_grad(&model, &train.x, &train.y)
                .and_then(|(_, g)| warm.apply(&mut model, &mut adam, &g));
            if let Err(e) = r {
                return Err(diverged(e, step, &model, &train.x, "warm start"));
            }
        }
        let mse = point_mse(&model, val)?;
        if !(mse > 0.0) {
            return Err(Error::invalid("validation MSE is zero; cannot fix sigma"));
        }
        model.log_sigma_obs_sq = math::ln(mse);
    }

    let objective = cfg.objective();
    let phase = Phase {
        cfg,
        objective,
        keys: trainable_keys(&model, cfg, objective),
    };
    let map_regression = regression && cfg.method == Method::Map;
    let mut adam = AdamState::new(AdamConfig::default());
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_improvement);
    let mut best = model.clone();
    let mut best_sigma = None;
    let mut records = Vec::new();
    let mut stop = StopReason::MaxSteps;
    let mut starvation = false;

    for step in 0..=cfg.max_steps {
        let evaluated =
            (|| -> Result<(LossBreakdown, Vec<Matrix>, TrajectoryRecord, Option<f64>)> {
                let (train_loss, grads) = phase.loss_and_grad(&model, &train.x, &train.y)?;
                let sigma = if map_regression {
                    Some(point_mse(&model, val)?)
                } else {
                    None
                };
                let val_nll = heldout_nll(&model, val, cfg, sigma)?;
                let test_nll = if test.is_empty() {
                    f64::NAN
                } else {
                    heldout_nll(&model, test, cfg, sigma)?
                };
                if !val_nll.is_finite() {
                    return Err(Error::NonFinite {
                        op: "validation NLL",
                    });
                }
                let mean_v = if regression && cfg.method == Method::Bethe {
                    let v = model.messages(&train.x)?.remove(0).v;
                    v.iter().sum::<f64>() / v.len() as f64
                } else {
                    f64::NAN
                };
                let alphas = model.alphas();
                let record = TrajectoryRecord {
                    step,
                    train: train_loss,
                    val_nll,
                    test_nll,
                    alpha: match cfg.method {
                        Method::Bethe => alphas.iter().sum::<f64>() / alphas.len() as f64,
                        Method::Map => f64::NAN,
                    },
                    sigma_obs_sq: if regression {
                        sigma.unwrap_or_else(|| model.sigma_obs_sq())
                    } else {
                        f64::NAN
                    },
                    mean_v,
                };
                Ok((train_loss, grads, record, sigma))
            })();
        let (_, grads, record, sigma) = match evaluated {
            Ok(v) => v,
            Err(e) => return Err(diverged(e, step, &model, &train.x, "loss evaluation")),
        };
        if regression
            && cfg.method == Method::Bethe
            && record.sigma_obs_sq < 0.1 * init_sigma
            && record.mean_v < 0.01 * record.sigma_obs_sq
        {
            starvation = true;
        }
        let check = stopper.observe(step, record.val_nll);
        records.push(record);
        if check.new_best {
            best.clone_from(&model);
            best_sigma = sigma;
        }
        if check.stop {
            stop = StopReason::EarlyStopped;
            break;
        }
        if step == cfg.max_steps {
            break;
        }
        if let Err(e) = phase.apply(&mut model, &mut adam, &grads) {
            return Err(diverged(e, step + 1, &model, &train.x, "parameter update"));
        }
    }

    if let Some(s2) = best_sigma {
        best.log_sigma_obs_sq = math::ln(s2);
    }
    let trajectory = Trajectory { records };
    let diagnostics = Diagnostics {
        alpha_runaway: trajectory.max_alpha().is_some_and(|a| a > ALPHA_RUNAWAY),
        variance_starvation: starvation,
    };
    Ok(TrainOutcome {
        model: best,
        best_step: stopper.best_step(),
        best_val_nll: stopper.best(),
        trajectory,
        stop,
        diagnostics,
        selected_alpha: match cfg.regime {
            Regime::Fixed(a) if cfg.method == Method::Bethe => Some(a),
            _ => None,
        },
    })
}

fn diverged(e: Error, step: usize, model: &Model, x: &Matrix, stage: &str) -> Error {
    if is_numerical(&e) {
        Error::Diverged {
            step,
            detail: dump(model, x, &format!("{stage}: {e}")),
        }
    } else {
        e
    }
}

/// Outcome of a grid search over fixed α.
#[derive(Clone, Debug, PartialEq)]
pub struct CvOutcome {
    pub alpha: f64,
    pub outcome: TrainOutcome,
    /// Best validation NLL per grid point; `None` where training diverged.
    pub scores: Vec<(f64, Option<f64>)>,
}

/// Trains one fixed-α model per grid point and keeps the lowest best
/// validation NLL. Exact ties go to the larger α; diverged points are
/// skipped.
pub fn cv_select(cfg: &TrainConfig, grid: &[f64], data: &Prepared) -> Result<CvOutcome> {
    let mut order: Vec<f64> = grid.to_vec();
    order.sort_by(f64::total_cmp);
    let mut chosen: Option<TrainOutcome> = None;
    let mut scores = Vec::with_capacity(order.len());
    for &alpha in &order {
        let point = TrainConfig {
            regime: Regime::Fixed(alpha),
            ..cfg.clone()
        };
        match train(&point, data) {
            Ok(out) => {
                scores.push((alpha, Some(out.best_val_nll)));
                if chosen
                    .as_ref()
                    .is_none_or(|c| out.best_val_nll <= c.best_val_nll)
                {
                    chosen = Some(out);
                }
            }
            Err(Error::Diverged { .. }) => scores.push((alpha, None)),
            Err(e) => return Err(e),
        }
    }
    let outcome = chosen.ok_or(Error::Diverged {
        step: 0,
        detail: String::from("every CV grid point diverged"),
    })?;
    Ok(CvOutcome {
        alpha: outcome.selected_alpha.expect("fixed regime"),
        outcome,
        scores,
    })
}

/// Independently seeded MAP models.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub members: Vec<TrainOutcome>,
    pub probit_scale: f64,
}

impl Ensemble {
    pub fn predict_regression(&self, ds: &Dataset) -> Result<RegressionPredictive> {
        let preds = self
            .members
            .iter()
            .map(|m| predict_regression(&m.model, ds, Readout::Point))
            .collect::<Result<Vec<_>>>()?;
        metrics::mixture_regression(&preds)
    }

    pub fn predict_class(&self, ds: &Dataset) -> Result<ClassPredictive> {
        let preds = self
            .members
            .iter()
            .map(|m| predict_class(&m.model, ds, self.probit_scale, Readout::Point))
            .collect::<Result<Vec<_>>>()?;
        metrics::average_class(&preds)
    }
}

/// `m` MAP trainings with seeds `seed, seed + 1, …`.
pub fn deep_ensemble(cfg: &TrainConfig, m: usize, data: &Prepared) -> Result<Ensemble> {
    if m < 2 {
        return Err(Error::invalid("an ensemble needs at least two members"));
    }
    let members = (0..m as u64)
        .map(|i| {
            let member = TrainConfig {
                method: Method::Map,
                regime: Regime::Eb,
                fixed_sigma: false,
                seed: cfg.seed.wrapping_add(i),
                ..cfg.clone()
            };
            train(&member, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        members,
        probit_scale: cfg.probit_scale,
    })
}
