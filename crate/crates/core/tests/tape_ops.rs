//! Every differentiable tape op against central differences, plus
//! linearity of the adjoint pass.

use bethe_core::{Matrix, Result, Tape, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

fn weights(rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| {
        (1.0 + 7.0 * i as f64 + 3.0 * j as f64).sin()
    })
}

/// Scalar objective: the op output contracted with fixed weights.
fn objective(tape: &mut Tape, vars: &[Var], build: Build) -> Result<Var> {
    let out = build(tape, vars)?;
    let (r, c) = tape.value(out).shape();
    if (r, c) == (1, 1) {
        return Ok(out);
    }
    let w = tape.constant(weights(r, c));
    let prod = tape.hadamard(out, w)?;
    tape.sum(prod)
}

fn eval(inputs: &[Matrix], build: Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
    let out = objective(&mut tape, &vars, build).unwrap();
    tape.scalar(out)
}

fn max_rel_error(inputs: Vec<Matrix>, build: Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = objective(&mut tape, &vars, build).unwrap();
    let grad = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    let mut work = inputs.clone();
    for (i, v) in vars.iter().enumerate() {
        let g = grad.wrt(*v);
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            let h = 1e-6 * x.abs().max(1.0);
            work[i].data_mut()[j] = x + h;
            let fp = eval(&work, build);
            work[i].data_mut()[j] = x - h;
            let fm = eval(&work, build);
            work[i].data_mut()[j] = x;
            let fd = (fp - fm) / (2.0 * h);
            let an = g.data()[j];
            diff += (an - fd) * (an - fd);
            norm = norm.max(an.abs()).max(fd.abs());
        }
        // norm-wise, so tiny entries are judged against the tensor's scale
        worst = worst.max(diff.sqrt() / norm.max(1e-3));
    }
    worst
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

fn cases(seed: u64) -> Vec<(&'static str, Vec<Matrix>, Build)> {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut g;
    vec![
        (
            "matmul",
            vec![
                rand_matrix(r, 3, 2, -2.0, 2.0),
                rand_matrix(r, 2, 4, -2.0, 2.0),
            ],
            |t, v| t.matmul(v[0], v[1]),
        ),
        (
            "add",
            vec![
                rand_matrix(r, 3, 2, -2.0, 2.0),
                rand_matrix(r, 3, 2, -2.0, 2.0),
            ],
            |t, v| t.add(v[0], v[1]),
        ),
        (
            "sub",
            vec![
                rand_matrix(r, 3, 2, -2.0, 2.0),
                rand_matrix(r, 3, 2, -2.0, 2.0),
            ],
            |t, v| t.sub(v[0], v[1]),
        ),
        (
            "hadamard",
            vec![
                rand_matrix(r, 2, 3, -2.0, 2.0),
                rand_matrix(r, 2, 3, -2.0, 2.0),
            ],
            |t, v| t.hadamard(v[0], v[1]),
        ),
        (
            "div",
            vec![
                rand_matrix(r, 2, 3, -2.0, 2.0),
                rand_matrix(r, 2, 3, 0.5, 2.0),
            ],
            |t, v| t.div(v[0], v[1]),
        ),
        ("scale", vec![rand_matrix(r, 2, 2, -2.0, 2.0)], |t, v| {
            t.scale(v[0], -1.7)
        }),
        (
            "add_const",
            vec![rand_matrix(r, 2, 2, -2.0, 2.0)],
            |t, v| t.add_const(v[0], 0.3),
        ),
        (
            "scale_by",
            vec![
                rand_matrix(r, 3, 2, -2.0, 2.0),
                rand_matrix(r, 1, 1, -2.0, 2.0),
            ],
            |t, v| t.scale_by(v[0], v[1]),
        ),
        ("tanh", vec![rand_matrix(r, 3, 2, -3.0, 3.0)], |t, v| {
            t.tanh(v[0])
        }),
        ("exp", vec![rand_matrix(r, 3, 2, -3.0, 3.0)], |t, v| {
            t.exp(v[0])
        }),
        ("log", vec![rand_matrix(r, 3, 2, 0.1, 5.0)], |t, v| {
            t.log(v[0])
        }),
        ("square", vec![rand_matrix(r, 3, 2, -3.0, 3.0)], |t, v| {
            t.square(v[0])
        }),
        ("sqrt", vec![rand_matrix(r, 3, 2, 0.1, 5.0)], |t, v| {
            t.sqrt(v[0])
        }),
        (
            "log_ndtr",
            vec![rand_matrix(r, 4, 2, -12.0, 8.0)],
            |t, v| t.log_ndtr(v[0]),
        ),
        ("softplus", vec![rand_matrix(r, 3, 2, -6.0, 6.0)], |t, v| {
            t.softplus(v[0])
        }),
        ("sum", vec![rand_matrix(r, 3, 4, -2.0, 2.0)], |t, v| {
            t.sum(v[0])
        }),
        ("row_sum", vec![rand_matrix(r, 3, 4, -2.0, 2.0)], |t, v| {
            t.row_sum(v[0])
        }),
        (
            "broadcast_row",
            vec![rand_matrix(r, 1, 3, -2.0, 2.0)],
            |t, v| t.broadcast_row(v[0], 4),
        ),
        (
            "transpose",
            vec![rand_matrix(r, 2, 3, -2.0, 2.0)],
            |t, v| t.transpose(v[0]),
        ),
        (
            "lower_exp_diag",
            vec![rand_matrix(r, 3, 3, -1.0, 1.0)],
            |t, v| t.lower_exp_diag(v[0]),
        ),
        (
            "gauss_nll",
            vec![
                rand_matrix(r, 3, 1, -2.0, 2.0),
                rand_matrix(r, 3, 3, -1.0, 1.0),
            ],
            |t, v| {
                let at = t.transpose(v[1])?;
                let aat = t.matmul(v[1], at)?;
                let eye = t.constant(Matrix::identity(3));
                let cov = t.add(aat, eye)?;
                t.gauss_nll(v[0], cov)
            },
        ),
        (
            "ordered_thresholds",
            vec![
                rand_matrix(r, 1, 1, -2.0, 2.0),
                rand_matrix(r, 3, 1, -1.0, 1.0),
            ],
            |t, v| t.ordered_thresholds(v[0], v[1]),
        ),
        (
            "ordinal_log_lik",
            vec![
                rand_matrix(r, 6, 1, -3.0, 3.0),
                rand_matrix(r, 6, 1, 0.5, 2.0),
                rand_matrix(r, 1, 1, -1.5, -0.5),
                rand_matrix(r, 2, 1, -0.5, 0.5),
            ],
            |t, v| {
                let taus = t.ordered_thresholds(v[2], v[3])?;
                t.ordinal_log_lik(v[0], v[1], taus, &[0, 1, 2, 3, 1, 0])
            },
        ),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_op_matches_finite_differences(seed in any::<u64>()) {
        for (name, inputs, build) in cases(seed) {
            let err = max_rel_error(inputs, build);
            prop_assert!(err < 1e-6, "{name}: relative error {err:e}");
        }
    }

    #[test]
    fn adjoints_are_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut g = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_matrix(&mut g, 3, 2, -1.0, 1.0);
        let w = rand_matrix(&mut g, 2, 2, -1.0, 1.0);
        let grad_of = |ca: f64, cb: f64| {
            let mut t = Tape::new();
            let xv = t.param(x.clone());
            let wv = t.param(w.clone());
            let prod = t.matmul(xv, wv).unwrap();
            let th = t.tanh(prod).unwrap();
            let f = t.sum(th).unwrap();
            let sq = t.square(xv).unwrap();
            let s = t.sum(sq).unwrap();
            let fa = t.scale(f, ca).unwrap();
            let gb = t.scale(s, cb).unwrap();
            let root = t.add(fa, gb).unwrap();
            let gr = t.backward(root).unwrap();
            (gr.wrt(xv).clone(), gr.wrt(wv).clone())
        };
        let (fx, fw) = grad_of(1.0, 0.0);
        let (gx, gw) = grad_of(0.0, 1.0);
        let (cx, cw) = grad_of(a, b);
        let lin_x = fx.zip_map(&gx, |p, q| a * p + b * q).unwrap();
        let lin_w = fw.zip_map(&gw, |p, q| a * p + b * q).unwrap();
        prop_assert!(cx.max_abs_diff(&lin_x) < 1e-12);
        prop_assert!(cw.max_abs_diff(&lin_w) < 1e-12);
    }
}

#[test]
fn constants_receive_no_gradient_and_unused_params_get_zeros() {
    let mut t = Tape::new();
    let a = t.param(Matrix::column(vec![1.0, 2.0]));
    let unused = t.param(Matrix::zeros(2, 2));
    let c = t.constant(Matrix::column(vec![3.0, 4.0]));
    let p = t.hadamard(a, c).unwrap();
    let s = t.sum(p).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(a).data(), &[3.0, 4.0]);
    assert_eq!(g.wrt(unused), &Matrix::zeros(2, 2));
    assert!(g.get(c).is_none());
}

#[test]
fn non_finite_forward_values_are_errors() {
    let mut t = Tape::new();
    let a = t.param(Matrix::scalar(1000.0));
    assert!(t.exp(a).is_err());
    let z = t.param(Matrix::scalar(0.0));
    assert!(t.log(z).is_err());
    let m = t.param(Matrix::zeros(2, 1));
    assert!(t.backward(m).is_err());
}
