//! Deterministic `tanh` backbone and the Gaussian last-layer posterior.
//!
//! A [`Model`] owns every parameter as plain matrices. Training binds the
//! parameters onto a fresh [`Tape`] each step through [`Model::bind`].

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::math;
use crate::tensor::{Matrix, Tape, Var};
use crate::{Error, Result};

pub const DEFAULT_WIDTH: usize = 50;
pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const INIT_DIAG_VARIANCE: f64 = 1e-2;
pub const INIT_CHOL_DIAG: f64 = 0.1;

/// Covariance family of the last-layer posterior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// `Σ = 0`: only the observation model carries uncertainty.
    V1,
    /// Diagonal `Σ`.
    V2,
    /// Full `Σ = L Lᵀ`.
    V3,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            "v3" => Ok(Variant::V3),
            other => Err(Error::invalid(format!("unknown variant '{other}'"))),
        }
    }
}

/// Observation model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Regression,
    /// Probit on labels {0, 1} (mapped to ∓1).
    Binary,
    /// `classes` independent probit heads, normalised at prediction time.
    Ova {
        classes: usize,
    },
    /// Cumulative probit with `classes − 1` ordered cut points.
    Ordinal {
        classes: usize,
    },
}

impl Task {
    pub fn classes(&self) -> usize {
        match *self {
            Task::Regression => 0,
            Task::Binary => 2,
            Task::Ova { classes } | Task::Ordinal { classes } => classes,
        }
    }

    pub fn heads(&self) -> usize {
        match *self {
            Task::Ova { classes } => classes,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Binary => "binary",
            Task::Ova { .. } => "ova",
            Task::Ordinal { .. } => "ordinal",
        }
    }
}

/// Bias-free `tanh` MLP. Zero layers means the identity feature map (the
/// linear last-layer-only model).
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub layers: Vec<Matrix>,
}

impl Backbone {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        if layers.len() > 2 {
            return Err(Error::invalid("backbone depth must be 0, 1 or 2"));
        }
        for w in layers.windows(2) {
            if w[0].cols() != w[1].rows() {
                return Err(Error::Dimension {
                    op: "backbone",
                    lhs: w[0].shape(),
                    rhs: w[1].shape(),
                });
            }
        }
        Ok(Backbone { layers })
    }

    /// Uniform(±1/√fan_in) weights.
    pub fn init<R: Rng>(input_dim: usize, depth: usize, width: usize, rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(depth);
        let mut fan_in = input_dim;
        for _ in 0..depth {
            let bound = 1.0 / math::sqrt(fan_in as f64);
            layers.push(Matrix::from_fn(fan_in, width, |_, _| {
                rng.random_range(-bound..bound)
            }));
            fan_in = width;
        }
        Self::new(layers)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(input_dim, Matrix::cols)
    }

    /// `λ_bb Σ_l ‖W_l‖²_F`.
    pub fn l2(&self, lambda: f64) -> f64 {
        lambda * self.layers.iter().map(Matrix::frobenius_sq).sum::<f64>()
    }

    /// Feature matrix `Ψ` outside any training tape.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let layers: Vec<Var> = self
            .layers
            .iter()
            .map(|w| tape.constant(w.clone()))
            .collect();
        let xv = tape.constant(x.clone());
        let psi = features_on_tape(&mut tape, xv, &layers)?;
        Ok(tape.value(psi).clone())
    }
}

/// `tanh(… tanh(X W₁) W₂ …)`.
pub fn features_on_tape(tape: &mut Tape, x: Var, layers: &[Var]) -> Result<Var> {
    let mut h = x;
    for &w in layers {
        let z = tape.matmul(h, w)?;
        h = tape.tanh(z)?;
    }
    Ok(h)
}

/// Parametrisation of `Σ`.
#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    None,
    /// Log-variances `ρ` (`H × 1`), `σ²_d = exp ρ_d`.
    Diag {
        log_var: Matrix,
    },
    /// Unconstrained `H × H`; strict lower part of `L` as stored, diagonal
    /// as logs.
    Chol {
        raw: Matrix,
    },
}

/// `q(w) = N(mu, Σ)` with prior `N(0, α⁻¹ I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LastLayerPosterior {
    pub mu: Matrix,
    pub cov: Covariance,
    pub log_alpha: f64,
    pub epsilon: f64,
}

impl LastLayerPosterior {
    pub fn init(variant: Variant, dim: usize) -> Self {
        let cov = match variant {
            Variant::V1 => Covariance::None,
            Variant::V2 => Covariance::Diag {
                log_var: Matrix::filled(dim, 1, math::ln(INIT_DIAG_VARIANCE)),
            },
            Variant::V3 => Covariance::Chol {
                raw: Matrix::from_fn(dim, dim, |i, j| {
                    if i == j {
                        math::ln(INIT_CHOL_DIAG)
                    } else {
                        0.0
                    }
                }),
            },
        };
        LastLayerPosterior {
            mu: Matrix::zeros(dim, 1),
            cov,
            log_alpha: 0.0,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn variant(&self) -> Variant {
        match self.cov {
            Covariance::None => Variant::V1,
            Covariance::Diag { .. } => Variant::V2,
            Covariance::Chol { .. } => Variant::V3,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.rows()
    }

    pub fn alpha(&self) -> f64 {
        math::exp(self.log_alpha)
    }

    /// Lower-triangular factor implied by the V3 parameters.
    pub fn chol_factor(&self) -> Option<Matrix> {
        match &self.cov {
            Covariance::Chol { raw } => {
                Some(Matrix::from_fn(raw.rows(), raw.cols(), |i, j| {
                    match i.cmp(&j) {
                        core::cmp::Ordering::Greater => raw[(i, j)],
                        core::cmp::Ordering::Equal => math::exp(raw[(i, i)]),
                        core::cmp::Ordering::Less => 0.0,
                    }
                }))
            }
            _ => None,
        }
    }

    /// The implied `Σ` (without jitter).
    pub fn sigma(&self) -> Matrix {
        let h = self.dim();
        match &self.cov {
            Covariance::None => Matrix::zeros(h, h),
            Covariance::Diag { log_var } => Matrix::from_fn(h, h, |i, j| {
                if i == j {
                    math::exp(log_var[(i, 0)])
                } else {
                    0.0
                }
            }),
            Covariance::Chol { .. } => {
                let l = self.chol_factor().expect("chol variant");
                l.matmul_t(&l).expect("square factor")
            }
        }
    }

    /// `Σ + εI` for V2/V3; `None` for V1, which carries no jitter.
    pub fn sigma_eff(&self) -> Option<Matrix> {
        match self.cov {
            Covariance::None => None,
            _ => {
                let mut s = self.sigma();
                for i in 0..self.dim() {
                    s[(i, i)] += self.epsilon;
                }
                Some(s)
            }
        }
    }
}

/// Gaussian message `N(mu_f, v)` at each latent output.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardMessage {
    pub mu_f: Vec<f64>,
    pub v: Vec<f64>,
}

impl ForwardMessage {
    pub fn len(&self) -> usize {
        self.mu_f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_f.is_empty()
    }
}

/// Tape counterpart of [`ForwardMessage`]: two `N × 1` nodes.
#[derive(Clone, Copy, Debug)]
pub struct MessageVars {
    pub mean: Var,
    pub var: Var,
}

/// Posterior parameters bound to tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub mu: Var,
    pub cov: CovVars,
    pub log_alpha: Var,
    pub epsilon: f64,
}

#[derive(Clone, Copy, Debug)]
pub enum CovVars {
    None,
    Diag(Var),
    Chol(Var),
}

/// `mu_f = Ψ mu`; `v = diag(Ψ Σ_eff Ψᵀ)` with `v = 0` for V1.
pub fn message_on_tape(tape: &mut Tape, head: &HeadVars, psi: Var) -> Result<MessageVars> {
    let mean = tape.matmul(psi, head.mu)?;
    let n = tape.value(psi).rows();
    let var = match head.cov {
        CovVars::None => tape.constant(Matrix::zeros(n, 1)),
        CovVars::Diag(log_var) => {
            let sq = tape.square(psi)?;
            let s = tape.exp(log_var)?;
            let quad = tape.matmul(sq, s)?;
            let norm = tape.row_sum(sq)?;
            let jitter = tape.scale(norm, head.epsilon)?;
            tape.add(quad, jitter)?
        }
        CovVars::Chol(raw) => {
            let l = tape.lower_exp_diag(raw)?;
            let b = tape.matmul(psi, l)?;
            let b2 = tape.square(b)?;
            let quad = tape.row_sum(b2)?;
            let sq = tape.square(psi)?;
            let norm = tape.row_sum(sq)?;
            let jitter = tape.scale(norm, head.epsilon)?;
            tape.add(quad, jitter)?
        }
    };
    Ok(MessageVars { mean, var })
}

/// Forward message of `post` at the feature rows `psi`.
pub fn forward_message(post: &LastLayerPosterior, psi: &Matrix) -> Result<ForwardMessage> {
    if psi.cols() != post.dim() {
        return Err(Error::Dimension {
            op: "forward_message",
            lhs: psi.shape(),
            rhs: post.mu.shape(),
        });
    }
    let mut tape = Tape::new();
    let head = bind_head(&mut tape, post, &|_| false, 0);
    let p = tape.constant(psi.clone());
    let msg = message_on_tape(&mut tape, &head, p)?;
    Ok(ForwardMessage {
        mu_f: tape.value(msg.mean).data().to_vec(),
        v: tape.value(msg.var).data().to_vec(),
    })
}

/// Ordered cut points of the cumulative probit.
#[derive(Clone, Debug, PartialEq)]
pub struct OrdinalThresholds {
    pub tau1: f64,
    pub log_gaps: Vec<f64>,
}

impl OrdinalThresholds {
    /// Unit-spaced cut points centred on zero.
    pub fn init(classes: usize) -> Self {
        let cuts = classes.saturating_sub(1);
        OrdinalThresholds {
            tau1: -0.5 * (cuts as f64 - 1.0),
            log_gaps: vec![0.0; cuts.saturating_sub(1)],
        }
    }

    pub fn taus(&self) -> Vec<f64> {
        let mut t = self.tau1;
        let mut out = vec![t];
        for &g in &self.log_gaps {
            t += math::exp(g);
            out.push(t);
        }
        out
    }
}

/// Identifies one parameter tensor of a [`Model`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKey {
    Backbone(usize),
    Mu(usize),
    Cov(usize),
    LogAlpha(usize),
    LogSigmaObsSq,
    Tau1,
    LogGaps,
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamKey::Backbone(l) => write!(f, "backbone.{l}"),
            ParamKey::Mu(h) => write!(f, "head.{h}.mu"),
            ParamKey::Cov(h) => write!(f, "head.{h}.cov"),
            ParamKey::LogAlpha(h) => write!(f, "head.{h}.log_alpha"),
            ParamKey::LogSigmaObsSq => f.write_str("log_sigma_obs_sq"),
            ParamKey::Tau1 => f.write_str("ordinal.tau1"),
            ParamKey::LogGaps => f.write_str("ordinal.log_gaps"),
        }
    }
}

impl FromStr for ParamKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unknown parameter key '{s}'"));
        let parts: Vec<&str> = s.split('.').collect();
        match parts.as_slice() {
            ["backbone", l] => Ok(ParamKey::Backbone(l.parse().map_err(|_| bad())?)),
            ["head", h, field] => {
                let h = h.parse().map_err(|_| bad())?;
                match *field {
                    "mu" => Ok(ParamKey::Mu(h)),
                    "cov" => Ok(ParamKey::Cov(h)),
                    "log_alpha" => Ok(ParamKey::LogAlpha(h)),
                    _ => Err(bad()),
                }
            }
            ["log_sigma_obs_sq"] => Ok(ParamKey::LogSigmaObsSq),
            ["ordinal", "tau1"] => Ok(ParamKey::Tau1),
            ["ordinal", "log_gaps"] => Ok(ParamKey::LogGaps),
            _ => Err(bad()),
        }
    }
}

/// Backbone, one or more last-layer heads, observation noise and ordinal
/// cut points.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub task: Task,
    pub input_dim: usize,
    pub backbone: Backbone,
    pub heads: Vec<LastLayerPosterior>,
    /// Regression only; ignored by the probit tasks.
    pub log_sigma_obs_sq: f64,
    pub thresholds: Option<OrdinalThresholds>,
}

impl Model {
    pub fn init<R: Rng>(
        task: Task,
        variant: Variant,
        input_dim: usize,
        depth: usize,
        width: usize,
        sigma_obs_sq: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if matches!(task, Task::Ova { classes } | Task::Ordinal { classes } if classes < 2) {
            return Err(Error::invalid("classification needs at least two classes"));
        }
        if !(sigma_obs_sq > 0.0) {
            return Err(Error::invalid(
                "initial observation variance must be positive",
            ));
        }
        let backbone = Backbone::init(input_dim, depth, width, rng)?;
        let h = backbone.output_dim(input_dim);
        Ok(Model {
            task,
            input_dim,
            heads: (0..task.heads())
                .map(|_| LastLayerPosterior::init(variant, h))
                .collect(),
            backbone,
            log_sigma_obs_sq: math::ln(sigma_obs_sq),
            thresholds: match task {
                Task::Ordinal { classes } => Some(OrdinalThresholds::init(classes)),
                _ => None,
            },
        })
    }

    pub fn variant(&self) -> Variant {
        self.heads[0].variant()
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.output_dim(self.input_dim)
    }

    pub fn sigma_obs_sq(&self) -> f64 {
        math::exp(self.log_sigma_obs_sq)
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.heads.iter().map(LastLayerPosterior::alpha).collect()
    }

    /// Every parameter tensor present in this model, in a fixed order.
    pub fn keys(&self) -> Vec<ParamKey> {
        let mut keys: Vec<ParamKey> = (0..self.backbone.depth()).map(ParamKey::Backbone).collect();
        for (h, head) in self.heads.iter().enumerate() {
            keys.push(ParamKey::Mu(h));
            if head.variant() != Variant::V1 {
                keys.push(ParamKey::Cov(h));
            }
            keys.push(ParamKey::LogAlpha(h));
        }
        if self.task == Task::Regression {
            keys.push(ParamKey::LogSigmaObsSq);
        }
        if let Some(t) = &self.thresholds {
            keys.push(ParamKey::Tau1);
            if !t.log_gaps.is_empty() {
                keys.push(ParamKey::LogGaps);
            }
        }
        keys
    }

    pub fn get(&self, key: ParamKey) -> Result<Matrix> {
        let missing = || Error::invalid(format!("model has no parameter {key}"));
        Ok(match key {
            ParamKey::Backbone(l) => self.backbone.layers.get(l).ok_or_else(missing)?.clone(),
            ParamKey::Mu(h) => self.heads.get(h).ok_or_else(missing)?.mu.clone(),
            ParamKey::Cov(h) => match &self.heads.get(h).ok_or_else(missing)?.cov {
                Covariance::None => return Err(missing()),
                Covariance::Diag { log_var } => log_var.clone(),
                Covariance::Chol { raw } => raw.clone(),
            },
            ParamKey::LogAlpha(h) => {
                Matrix::scalar(self.heads.get(h).ok_or_else(missing)?.log_alpha)
            }
            ParamKey::LogSigmaObsSq => Matrix::scalar(self.log_sigma_obs_sq),
            ParamKey::Tau1 => Matrix::scalar(self.thresholds.as_ref().ok_or_else(missing)?.tau1),
            ParamKey::LogGaps => Matrix::column(
                self.thresholds
                    .as_ref()
                    .ok_or_else(missing)?
                    .log_gaps
                    .clone(),
            ),
        })
    }

    /// Replaces one tensor; the shape must match the current one.
    pub fn set(&mut self, key: ParamKey, value: Matrix) -> Result<()> {
        let current = self.get(key)?;
        if current.shape() != value.shape() {
            return Err(Error::Dimension {
                op: "Model::set",
                lhs: current.shape(),
                rhs: value.shape(),
            });
        }
        match key {
            ParamKey::Backbone(l) => self.backbone.layers[l] = value,
            ParamKey::Mu(h) => self.heads[h].mu = value,
            ParamKey::Cov(h) => match &mut self.heads[h].cov {
                Covariance::Diag { log_var } => *log_var = value,
                Covariance::Chol { raw } => *raw = value,
                Covariance::None => unreachable!("checked by get"),
            },
            ParamKey::LogAlpha(h) => self.heads[h].log_alpha = value.data()[0],
            ParamKey::LogSigmaObsSq => self.log_sigma_obs_sq = value.data()[0],
            ParamKey::Tau1 => self.thresholds.as_mut().expect("checked").tau1 = value.data()[0],
            ParamKey::LogGaps => {
                self.thresholds.as_mut().expect("checked").log_gaps = value.into_vec()
            }
        }
        Ok(())
    }

    /// Places every parameter on `tape`; keys for which `trainable` is true
    /// become differentiable leaves.
    pub fn bind(&self, tape: &mut Tape, trainable: &dyn Fn(ParamKey) -> bool) -> BoundModel {
        let mut leaves = Vec::new();
        let leaf =
            |tape: &mut Tape, leaves: &mut Vec<(ParamKey, Var)>, key: ParamKey, value: Matrix| {
                let v = if trainable(key) {
                    tape.param(value)
                } else {
                    tape.constant(value)
                };
                leaves.push((key, v));
                v
            };
        let backbone = self
            .backbone
            .layers
            .iter()
            .enumerate()
            .map(|(l, w)| leaf(tape, &mut leaves, ParamKey::Backbone(l), w.clone()))
            .collect();
        let mut heads = Vec::with_capacity(self.heads.len());
        for (h, post) in self.heads.iter().enumerate() {
            let head = bind_head(tape, post, trainable, h);
            leaves.push((ParamKey::Mu(h), head.mu));
            if let CovVars::Diag(v) | CovVars::Chol(v) = head.cov {
                leaves.push((ParamKey::Cov(h), v));
            }
            leaves.push((ParamKey::LogAlpha(h), head.log_alpha));
            heads.push(head);
        }
        let log_sigma_obs_sq = leaf(
            tape,
            &mut leaves,
            ParamKey::LogSigmaObsSq,
            Matrix::scalar(self.log_sigma_obs_sq),
        );
        let (tau1, log_gaps) = match &self.thresholds {
            Some(t) => (
                Some(leaf(
                    tape,
                    &mut leaves,
                    ParamKey::Tau1,
                    Matrix::scalar(t.tau1),
                )),
                Some(leaf(
                    tape,
                    &mut leaves,
                    ParamKey::LogGaps,
                    Matrix::column(t.log_gaps.clone()),
                )),
            ),
            None => (None, None),
        };
        BoundModel {
            backbone,
            heads,
            log_sigma_obs_sq,
            tau1,
            log_gaps,
            leaves,
        }
    }

    /// Feature map applied to raw inputs.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim {
            return Err(Error::Dimension {
                op: "features",
                lhs: x.shape(),
                rhs: (x.rows(), self.input_dim),
            });
        }
        self.backbone.features(x)
    }

    /// One forward message per head.
    pub fn messages(&self, x: &Matrix) -> Result<Vec<ForwardMessage>> {
        let psi = self.features(x)?;
        self.heads
            .iter()
            .map(|h| forward_message(h, &psi))
            .collect()
    }

    /// Short human-readable description used in diagnostics.
    pub fn describe(&self) -> String {
        format!(
            "{} {} depth={} H={}",
            self.task.name(),
            self.variant(),
            self.backbone.depth(),
            self.feature_dim()
        )
        .to_string()
    }
}

/// A [`Model`] placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub backbone: Vec<Var>,
    pub heads: Vec<HeadVars>,
    pub log_sigma_obs_sq: Var,
    pub tau1: Option<Var>,
    pub log_gaps: Option<Var>,
    leaves: Vec<(ParamKey, Var)>,
}

impl BoundModel {
    pub fn leaves(&self) -> &[(ParamKey, Var)] {
        &self.leaves
    }

    pub fn var(&self, key: ParamKey) -> Option<Var> {
        self.leaves.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }
}

fn bind_head(
    tape: &mut Tape,
    post: &LastLayerPosterior,
    trainable: &dyn Fn(ParamKey) -> bool,
    h: usize,
) -> HeadVars {
    let leaf = |tape: &mut Tape, key: ParamKey, m: Matrix| {
        if trainable(key) {
            tape.param(m)
        } else {
            tape.constant(m)
        }
    };
    HeadVars {
        mu: leaf(tape, ParamKey::Mu(h), post.mu.clone()),
        cov: match &post.cov {
            Covariance::None => CovVars::None,
            Covariance::Diag { log_var } => {
                CovVars::Diag(leaf(tape, ParamKey::Cov(h), log_var.clone()))
            }
            Covariance::Chol { raw } => CovVars::Chol(leaf(tape, ParamKey::Cov(h), raw.clone())),
        },
        log_alpha: leaf(tape, ParamKey::LogAlpha(h), Matrix::scalar(post.log_alpha)),
        epsilon: post.epsilon,
    }
}

/// Binds a single posterior for the loss-level helpers and gradient checks.
pub fn bind_posterior(tape: &mut Tape, post: &LastLayerPosterior, trainable: bool) -> HeadVars {
    bind_head(tape, post, &|_| trainable, 0)
}
