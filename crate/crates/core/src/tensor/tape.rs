use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Matrix;
use crate::linalg;
use crate::math::{self, LN_2PI};
use crate::special::{self, log_ndtr, mills_ratio};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Floor applied to ordinal class probabilities before the log.
pub const ORDINAL_PROB_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    ScaleBy(Var, Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    RowSum(Var),
    BroadcastRow(Var),
    Transpose(Var),
    LogNdtr(Var),
    Softplus(Var),
    LowerExpDiag(Var),
    GaussNll {
        mu: Var,
        cov: Var,
        /// `S⁻¹ mu`
        solved: Matrix,
        inverse: Matrix,
    },
    OrderedThresholds(Var, Var),
    OrdinalLogLik {
        mean: Var,
        scale: Var,
        thresholds: Var,
        labels: Vec<usize>,
        /// Unfloored `log P(y_n)`.
        log_prob: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

/// Reverse-mode record of matrix operations. Nodes are appended in
/// evaluation order, so every input precedes its consumer.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// `∂root/∂leaf` for every registered parameter leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    grads: BTreeMap<Var, Matrix>,
}

impl Gradient {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(&v)
    }

    /// Like [`Gradient::get`] but panics for a leaf that is not a parameter.
    pub fn wrt(&self, v: Var) -> &Matrix {
        self.grads
            .get(&v)
            .unwrap_or_else(|| panic!("{v:?} is not a parameter leaf"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Matrix)> {
        self.grads.iter().map(|(v, m)| (*v, m))
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Matrix::is_finite)
    }
}

fn dim(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        let v = self.leaf(value, true);
        self.params.push(v);
        v
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    fn leaf(&mut self, value: Matrix, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on a non-scalar node");
        m.data()[0]
    }

    fn push(&mut self, name: &'static str, op: Op, value: Matrix, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", Op::MatMul(a, b), value, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x + y)
            .map_err(|_| dim("add", self.value(a), self.value(b)))?;
        self.push("add", Op::Add(a, b), value, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x - y)
            .map_err(|_| dim("sub", self.value(a), self.value(b)))?;
        self.push("sub", Op::Sub(a, b), value, &[a, b])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x * y)
            .map_err(|_| dim("hadamard", self.value(a), self.value(b)))?;
        self.push("hadamard", Op::Hadamard(a, b), value, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x / y)
            .map_err(|_| dim("div", self.value(a), self.value(b)))?;
        self.push("div", Op::Div(a, b), value, &[a, b])
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| c * x);
        self.push("scale", Op::Scale(a, c), value, &[a])
    }

    /// Elementwise addition of a constant.
    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x + c);
        self.push("add_const", Op::AddConst(a), value, &[a])
    }

    /// Matrix `a` times the `1 × 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(dim("scale_by", self.value(a), sv));
        }
        let c = sv.data()[0];
        let value = self.value(a).map(|x| c * x);
        self.push("scale_by", Op::ScaleBy(a, s), value, &[a, s])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(math::tanh);
        self.push("tanh", Op::Tanh(a), value, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(math::exp);
        self.push("exp", Op::Exp(a), value, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::domain(
                "log",
                format!("argument {bad} is not positive"),
            ));
        }
        let value = self.value(a).map(math::ln);
        self.push("log", Op::Log(a), value, &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x * x);
        self.push("square", Op::Square(a), value, &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::domain(
                "sqrt",
                format!("argument {bad} is not positive"),
            ));
        }
        let value = self.value(a).map(math::sqrt);
        self.push("sqrt", Op::Sqrt(a), value, &[a])
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(a).sum());
        self.push("sum", Op::Sum(a), value, &[a])
    }

    /// Per-row sums: `n × m → n × 1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let value = Matrix::column((0..m.rows()).map(|i| m.row(i).iter().sum()).collect());
        self.push("row_sum", Op::RowSum(a), value, &[a])
    }

    /// Repeats a `1 × m` row `rows` times.
    pub fn broadcast_row(&mut self, a: Var, rows: usize) -> Result<Var> {
        let m = self.value(a);
        if m.rows() != 1 {
            return Err(Error::Dimension {
                op: "broadcast_row",
                lhs: m.shape(),
                rhs: (1, m.cols()),
            });
        }
        let value = Matrix::from_fn(rows, m.cols(), |_, j| m[(0, j)]);
        self.push("broadcast_row", Op::BroadcastRow(a), value, &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push("transpose", Op::Transpose(a), value, &[a])
    }

    /// Elementwise `log Φ(x)`.
    pub fn log_ndtr(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(log_ndtr);
        self.push("log_ndtr", Op::LogNdtr(a), value, &[a])
    }

    /// Elementwise `log(1 + eˣ)`.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(math::softplus);
        self.push("softplus", Op::Softplus(a), value, &[a])
    }

    /// Square lower-triangular factor from an unconstrained matrix: strict
    /// lower entries copied, diagonal exponentiated, upper part ignored.
    pub fn lower_exp_diag(&mut self, raw: Var) -> Result<Var> {
        let m = self.value(raw);
        if m.rows() != m.cols() {
            return Err(Error::Dimension {
                op: "lower_exp_diag",
                lhs: m.shape(),
                rhs: (m.rows(), m.rows()),
            });
        }
        let value = Matrix::from_fn(m.rows(), m.cols(), |i, j| match i.cmp(&j) {
            core::cmp::Ordering::Greater => m[(i, j)],
            core::cmp::Ordering::Equal => math::exp(m[(i, i)]),
            core::cmp::Ordering::Less => 0.0,
        });
        self.push("lower_exp_diag", Op::LowerExpDiag(raw), value, &[raw])
    }

    /// `−log N(mu; 0, S)` for an `h × 1` mean and the symmetric part of an
    /// `h × h` covariance.
    pub fn gauss_nll(&mut self, mu: Var, cov: Var) -> Result<Var> {
        let m = self.value(mu);
        let s = self.value(cov);
        let h = m.rows();
        if m.cols() != 1 || s.shape() != (h, h) {
            return Err(dim("gauss_nll", m, s));
        }
        let sym = Matrix::from_fn(h, h, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));
        let l = linalg::cholesky(&sym)?;
        let solved = linalg::cholesky_solve(&l, m)?;
        let inverse = linalg::cholesky_inverse(&l)?;
        let quad: f64 = m.data().iter().zip(solved.data()).map(|(a, b)| a * b).sum();
        let value = 0.5 * quad + 0.5 * linalg::chol_log_det(&l) + 0.5 * h as f64 * LN_2PI;
        self.push(
            "gauss_nll",
            Op::GaussNll {
                mu,
                cov,
                solved,
                inverse,
            },
            Matrix::scalar(value),
            &[mu, cov],
        )
    }

    /// Increasing cut points `τ_1 = first`, `τ_{k+1} = τ_k + exp(log_gap_k)`
    /// as a `(g + 1) × 1` column.
    pub fn ordered_thresholds(&mut self, first: Var, log_gaps: Var) -> Result<Var> {
        let f = self.value(first);
        let g = self.value(log_gaps);
        if f.shape() != (1, 1) || (g.cols() != 1 && !g.is_empty()) {
            return Err(dim("ordered_thresholds", f, g));
        }
        let mut taus = Vec::with_capacity(g.len() + 1);
        let mut t = f.data()[0];
        taus.push(t);
        for &lg in g.data() {
            t += math::exp(lg);
            taus.push(t);
        }
        self.push(
            "ordered_thresholds",
            Op::OrderedThresholds(first, log_gaps),
            Matrix::column(taus),
            &[first, log_gaps],
        )
    }

    /// Per-sample `log P(y_n = k)` of the cumulative probit with latent mean
    /// `mean` (`n × 1`), scale `scale` (`n × 1`, positive) and cut points
    /// `thresholds` (`(K−1) × 1`). Probabilities are floored at
    /// [`ORDINAL_PROB_FLOOR`] in the value only.
    pub fn ordinal_log_lik(
        &mut self,
        mean: Var,
        scale: Var,
        thresholds: Var,
        labels: &[usize],
    ) -> Result<Var> {
        let (m, d, tau) = (self.value(mean), self.value(scale), self.value(thresholds));
        let n = m.rows();
        if m.cols() != 1 || d.shape() != (n, 1) || labels.len() != n || tau.cols() != 1 {
            return Err(dim("ordinal_log_lik", m, d));
        }
        let cuts = tau.rows();
        for w in tau.data().windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::domain(
                    "ordinal_log_lik",
                    "thresholds not increasing",
                ));
            }
        }
        let mut log_prob = Vec::with_capacity(n);
        for i in 0..n {
            let k = labels[i];
            if k > cuts {
                return Err(Error::domain(
                    "ordinal_log_lik",
                    format!("label {k} out of range"),
                ));
            }
            let (mi, di) = (m.data()[i], d.data()[i]);
            if !(di > 0.0) {
                return Err(Error::domain("ordinal_log_lik", "scale must be positive"));
            }
            let upper = (k < cuts).then(|| (tau.data()[k] - mi) / di);
            let lower = (k > 0).then(|| (tau.data()[k - 1] - mi) / di);
            log_prob.push(special::log_ndtr_diff(upper, lower));
        }
        let floor = math::ln(ORDINAL_PROB_FLOOR);
        let value = Matrix::column(log_prob.iter().map(|&lp| lp.max(floor)).collect());
        self.push(
            "ordinal_log_lik",
            Op::OrdinalLogLik {
                mean,
                scale,
                thresholds,
                labels: labels.to_vec(),
                log_prob,
            },
            value,
            &[mean, scale, thresholds],
        )
    }

    /// Adjoints of `root` with respect to every parameter leaf.
    pub fn backward(&self, root: Var) -> Result<Gradient> {
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {:?}",
                rv.shape()
            )));
        }
        if !rv.is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(node, &g, &mut adj)?;
        }
        let mut grads = BTreeMap::new();
        for &p in &self.params {
            let g = match adj.get_mut(p.0).and_then(Option::take) {
                Some(g) => g,
                None => {
                    let s = self.value(p).shape();
                    Matrix::zeros(s.0, s.1)
                }
            };
            grads.insert(p, g);
        }
        Ok(Gradient { grads })
    }

    fn accumulate(&self, adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut adj[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, adj: &mut [Option<Matrix>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    self.accumulate(adj, *a, g.matmul_t(val(*b))?);
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(adj, *b, val(*a).t_matmul(g)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(adj, *a, g.clone());
                self.accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, g.clone());
                self.accumulate(adj, *b, g.map(|x| -x));
            }
            Op::Hadamard(a, b) => {
                self.accumulate(adj, *a, g.zip_map(val(*b), |x, y| x * y)?);
                self.accumulate(adj, *b, g.zip_map(val(*a), |x, y| x * y)?);
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                self.accumulate(adj, *a, g.zip_map(bv, |x, y| x / y)?);
                // d(a/b)/db = −(a/b)/b
                let ratio = y.zip_map(bv, |q, d| q / d)?;
                self.accumulate(adj, *b, g.zip_map(&ratio, |x, r| -x * r)?);
            }
            Op::Scale(a, c) => self.accumulate(adj, *a, g.map(|x| c * x)),
            Op::AddConst(a) => self.accumulate(adj, *a, g.clone()),
            Op::ScaleBy(a, s) => {
                let c = val(*s).data()[0];
                self.accumulate(adj, *a, g.map(|x| c * x));
                let ds: f64 = g
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(x, y)| x * y)
                    .sum();
                self.accumulate(adj, *s, Matrix::scalar(ds));
            }
            Op::Tanh(a) => self.accumulate(adj, *a, g.zip_map(y, |x, t| x * (1.0 - t * t))?),
            Op::Exp(a) => self.accumulate(adj, *a, g.zip_map(y, |x, e| x * e)?),
            Op::Log(a) => self.accumulate(adj, *a, g.zip_map(val(*a), |x, u| x / u)?),
            Op::Square(a) => self.accumulate(adj, *a, g.zip_map(val(*a), |x, u| 2.0 * x * u)?),
            Op::Sqrt(a) => self.accumulate(adj, *a, g.zip_map(y, |x, r| 0.5 * x / r)?),
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                self.accumulate(adj, *a, Matrix::filled(r, c, g.data()[0]));
            }
            Op::RowSum(a) => {
                let (r, c) = val(*a).shape();
                self.accumulate(adj, *a, Matrix::from_fn(r, c, |i, _| g.data()[i]));
            }
            Op::BroadcastRow(a) => {
                let mut acc = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, x) in acc.data_mut().iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                self.accumulate(adj, *a, acc);
            }
            Op::Transpose(a) => self.accumulate(adj, *a, g.transpose()),
            Op::LogNdtr(a) => {
                self.accumulate(adj, *a, g.zip_map(val(*a), |x, u| x * mills_ratio(u))?)
            }
            Op::Softplus(a) => {
                self.accumulate(adj, *a, g.zip_map(val(*a), |x, u| x * math::sigmoid(u))?)
            }
            Op::LowerExpDiag(raw) => {
                let d = Matrix::from_fn(g.rows(), g.cols(), |i, j| match i.cmp(&j) {
                    core::cmp::Ordering::Greater => g[(i, j)],
                    core::cmp::Ordering::Equal => g[(i, i)] * y[(i, i)],
                    core::cmp::Ordering::Less => 0.0,
                });
                self.accumulate(adj, *raw, d);
            }
            Op::GaussNll {
                mu,
                cov,
                solved,
                inverse,
            } => {
                let s = g.data()[0];
                self.accumulate(adj, *mu, solved.map(|x| s * x));
                let h = solved.rows();
                let d = Matrix::from_fn(h, h, |i, j| {
                    0.5 * s * (inverse[(i, j)] - solved.data()[i] * solved.data()[j])
                });
                self.accumulate(adj, *cov, d);
            }
            Op::OrderedThresholds(first, gaps) => {
                // τ_k depends on every gap before it.
                let gv = g.data();
                self.accumulate(adj, *first, Matrix::scalar(gv.iter().sum()));
                let lg = val(*gaps);
                let mut tail = 0.0;
                let mut d = alloc::vec![0.0; lg.len()];
                for k in (0..lg.len()).rev() {
                    tail += gv[k + 1];
                    d[k] = tail * math::exp(lg.data()[k]);
                }
                let (r, c) = lg.shape();
                self.accumulate(adj, *gaps, Matrix::from_vec(r, c, d)?);
            }
            Op::OrdinalLogLik {
                mean,
                scale,
                thresholds,
                labels,
                log_prob,
            } => {
                let (m, d, tau) = (val(*mean), val(*scale), val(*thresholds));
                let cuts = tau.rows();
                let mut gm = Matrix::zeros(m.rows(), 1);
                let mut gd = Matrix::zeros(m.rows(), 1);
                let mut gt = Matrix::zeros(cuts, 1);
                for (i, &k) in labels.iter().enumerate() {
                    let (mi, di, lp) = (m.data()[i], d.data()[i], log_prob[i]);
                    let gi = g.data()[i];
                    // ∂ log P / ∂ bound = ±φ(bound)/P
                    if k < cuts {
                        let a = (tau.data()[k] - mi) / di;
                        let w = gi * math::exp(special::log_normal_pdf(a) - lp) / di;
                        gm.data_mut()[i] -= w;
                        gd.data_mut()[i] -= w * a;
                        gt.data_mut()[k] += w;
                    }
                    if k > 0 {
                        let b = (tau.data()[k - 1] - mi) / di;
                        let w = gi * math::exp(special::log_normal_pdf(b) - lp) / di;
                        gm.data_mut()[i] += w;
                        gd.data_mut()[i] += w * b;
                        gt.data_mut()[k - 1] -= w;
                    }
                }
                self.accumulate(adj, *mean, gm);
                self.accumulate(adj, *scale, gd);
                self.accumulate(adj, *thresholds, gt);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_forward_values() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::zeros(2, 3));
        let th = t.tanh(z).unwrap();
        assert_eq!(t.value(th), &Matrix::zeros(2, 3));

        let i3 = t.constant(Matrix::identity(3));
        let a = t.constant(Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64));
        let p = t.matmul(i3, a).unwrap();
        assert_eq!(t.value(p), t.value(a));

        let v = t.constant(Matrix::row_vector(alloc::vec![3.0, 4.0]));
        let sq = t.square(v).unwrap();
        let s = t.sum(sq).unwrap();
        assert_eq!(t.scalar(s), 25.0);
    }

    #[test]
    fn trivial_gradients() {
        let mut t = Tape::new();
        let w = t.param(Matrix::row_vector(alloc::vec![1.0, 2.0]));
        let sq = t.square(w).unwrap();
        let s = t.sum(sq).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(w).data(), &[2.0, 4.0]);

        let mut t = Tape::new();
        let a = t.param(Matrix::row_vector(alloc::vec![1.5, -2.0]));
        let b = t.param(Matrix::column(alloc::vec![0.25, 3.0]));
        let r = t.matmul(a, b).unwrap();
        let g = t.backward(r).unwrap();
        assert_eq!(g.wrt(a), &t.value(b).transpose());
        assert_eq!(g.wrt(b), &t.value(a).transpose());
    }

    #[test]
    fn errors() {
        let mut t = Tape::new();
        let a = t.param(Matrix::zeros(2, 3));
        let b = t.param(Matrix::zeros(2, 2));
        assert!(matches!(t.matmul(a, a), Err(Error::Dimension { .. })));
        assert!(matches!(
            t.add(a, b),
            Err(Error::Dimension { op: "add", .. })
        ));
        assert!(matches!(t.log(a), Err(Error::Domain { op: "log", .. })));
        assert!(matches!(t.backward(a), Err(Error::Contract(_))));
        let big = t.constant(Matrix::scalar(1000.0));
        assert!(matches!(t.exp(big), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut t = Tape::new();
        let a = t.param(Matrix::scalar(2.0));
        let unused = t.param(Matrix::zeros(2, 2));
        let s = t.square(a).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(unused), &Matrix::zeros(2, 2));
        assert_eq!(g.wrt(a).data(), &[4.0]);
    }

    #[test]
    fn ordinal_rejects_bad_input() {
        let mut t = Tape::new();
        let m = t.constant(Matrix::column(alloc::vec![0.0]));
        let d = t.constant(Matrix::column(alloc::vec![1.0]));
        let tau = t.constant(Matrix::column(alloc::vec![0.5, 0.2]));
        assert!(t.ordinal_log_lik(m, d, tau, &[0]).is_err());
        let tau = t.constant(Matrix::column(alloc::vec![-0.5, 0.5]));
        assert!(t.ordinal_log_lik(m, d, tau, &[3]).is_err());
        let lp = t.ordinal_log_lik(m, d, tau, &[1]).unwrap();
        let want = math::ln(special::ndtr(0.5) - special::ndtr(-0.5));
        assert!((t.scalar(lp) - want).abs() < 1e-15);
    }
}
