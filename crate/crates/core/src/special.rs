//! Normal-distribution kernels and the two Gaussian convolution identities.
//!
//! `log_ndtr` and `mills_ratio` stay finite and accurate far into the lower
//! tail, where a confidently wrong probit margin sends `Φ` below the
//! smallest normal double.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, HALF_LN_2PI, INV_SQRT_2PI, SQRT_2};
use crate::{Error, Result};

/// Below this point the lower tail goes through the continued fraction.
const LOWER_TAIL: f64 = -5.0;
/// Depth of the backward-evaluated Laplace continued fraction.
const CF_DEPTH: usize = 160;

/// Standard normal density φ(x).
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * math::exp(-0.5 * x * x)
}

#[inline]
pub fn log_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - HALF_LN_2PI
}

/// Standard normal CDF Φ(x).
#[inline]
pub fn ndtr(x: f64) -> f64 {
    0.5 * math::erfc(-x / SQRT_2)
}

/// Upper-tail Mills ratio `(1 − Φ(z)) / φ(z)` for `z ≥ 5` via Laplace's
/// continued fraction `1 / (z + 1/(z + 2/(z + 3/(z + …))))`.
fn upper_mills(z: f64) -> f64 {
    let mut t = z;
    for k in (1..=CF_DEPTH).rev() {
        t = z + k as f64 / t;
    }
    1.0 / t
}

/// `log Φ(x)`, finite for every finite `x`.
pub fn log_ndtr(x: f64) -> f64 {
    if x < LOWER_TAIL {
        log_normal_pdf(x) + math::ln(upper_mills(-x))
    } else if x > 0.0 {
        math::ln_1p(-ndtr(-x))
    } else {
        math::ln(ndtr(x))
    }
}

/// Inverse Mills ratio `h(t) = φ(t) / Φ(t)`, the derivative of `log Φ`.
pub fn mills_ratio(t: f64) -> f64 {
    if t < LOWER_TAIL {
        1.0 / upper_mills(-t)
    } else {
        normal_pdf(t) / ndtr(t)
    }
}

/// `log(Φ(upper) − Φ(lower))` for `upper > lower`; `None` stands for an
/// infinite end. Evaluated on whichever side of zero keeps both CDF values
/// away from 1.
pub fn log_ndtr_diff(upper: Option<f64>, lower: Option<f64>) -> f64 {
    match (upper, lower) {
        (None, None) => 0.0,
        (Some(a), None) => log_ndtr(a),
        (None, Some(b)) => log_ndtr(-b),
        (Some(a), Some(b)) => {
            if a <= 0.0 {
                log_sub_exp(log_ndtr(a), log_ndtr(b))
            } else if b >= 0.0 {
                log_sub_exp(log_ndtr(-b), log_ndtr(-a))
            } else {
                math::ln_1p(-(ndtr(b) + ndtr(-a)))
            }
        }
    }
}

/// `log(e^a − e^b)` for `a ≥ b`.
fn log_sub_exp(a: f64, b: f64) -> f64 {
    let d = b - a;
    if d > -core::f64::consts::LN_2 {
        a + math::ln(-math::exp_m1(d))
    } else {
        a + math::ln_1p(-math::exp(d))
    }
}

/// `∫ Φ(y f / c) N(f; mu_f, v_f) df = Φ(y mu_f / √(c² + v_f))`.
pub fn probit_gauss_conv(y: f64, mu_f: f64, v_f: f64, c: f64) -> Result<f64> {
    if !(v_f >= 0.0) {
        return Err(Error::domain("probit_gauss_conv", "variance must be >= 0"));
    }
    if !(c > 0.0) {
        return Err(Error::domain(
            "probit_gauss_conv",
            "probit scale must be > 0",
        ));
    }
    Ok(ndtr(y * mu_f / math::sqrt(c * c + v_f)))
}

/// `−log ∫ N(y; f, σ²) N(f; mu_f, v) df = −log N(y; mu_f, V)` with
/// `V = σ² + v`.
pub fn gauss_conv_nll(y: f64, mu_f: f64, total_var: f64) -> Result<f64> {
    if !(total_var > 0.0) {
        return Err(Error::domain(
            "gauss_conv_nll",
            "total variance must be > 0",
        ));
    }
    let r = y - mu_f;
    Ok(r * r / (2.0 * total_var) + 0.5 * math::ln(total_var) + HALF_LN_2PI)
}

/// Standard normal quantile `Φ⁻¹(p)`: Acklam's rational approximation
/// polished by one Halley step against [`ndtr`].
pub fn ndtri(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("ndtri", "p must lie in (0, 1)"));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let mut x = if p < P_LOW {
        let q = math::sqrt(-2.0 * math::ln(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = math::sqrt(-2.0 * math::ln_1p(-p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    for _ in 0..2 {
        let e = ndtr(x) - p;
        let u = e / normal_pdf(x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

/// Gauss–Hermite rule for `∫ e^{−x²} f(x) dx`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

pub const DEFAULT_QUADRATURE_NODES: usize = 128;
pub const MIN_QUADRATURE_NODES: usize = 64;

impl QuadratureRule {
    /// Nodes by Newton iteration on the orthonormal Hermite recurrence.
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        if n < MIN_QUADRATURE_NODES {
            return Err(Error::invalid("quadrature needs at least 64 nodes"));
        }
        const PI_M4: f64 = 0.751_125_544_464_942_5;
        let nf = n as f64;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let mut z = 0.0f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => math::sqrt(2.0 * nf + 1.0) - 1.855_75 * math::powf(2.0 * nf + 1.0, -1.0 / 6.0),
                1 => z - 1.14 * math::powf(nf, 0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PI_M4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * math::sqrt(2.0 / (jf + 1.0)) * p2 - math::sqrt(jf / (jf + 1.0)) * p3;
                }
                pp = math::sqrt(2.0 * nf) * p2;
                let step = p1 / pp;
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Ok(QuadratureRule { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(F)]` for `F ~ N(mu, var)`.
    pub fn expectation(&self, f: impl Fn(f64) -> f64, mu: f64, var: f64) -> f64 {
        let scale = math::sqrt(2.0 * var.max(0.0));
        let norm = 1.0 / math::sqrt(core::f64::consts::PI);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mu + scale * x))
            .sum::<f64>()
            * norm
    }
}

/// One-shot `E_{N(mu, var)}[f]` with an `nodes`-point Gauss–Hermite rule.
pub fn gauss_hermite_expectation(
    f: impl Fn(f64) -> f64,
    mu: f64,
    var: f64,
    nodes: usize,
) -> Result<f64> {
    Ok(QuadratureRule::gauss_hermite(nodes)?.expectation(f, mu, var))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    // Reference values computed with mpmath at 40 significant digits.
    const LOG_NDTR_REF: [(f64, f64); 9] = [
        (-40.0, -804.608_442_013_753_8),
        (-30.0, -454.321_243_956_343_2),
        (-10.0, -53.231_285_150_512_47),
        (-5.0, -15.064_998_393_988_725),
        (-1.0, -1.841_021_645_009_264_4),
        (0.0, -core::f64::consts::LN_2),
        (1.0, -0.172_753_779_023_449_9),
        (5.0, -2.866_516_129_637_636e-7),
        (10.0, -7.619_853_024_160_527e-24),
    ];

    #[test]
    fn ndtr_reference_points() {
        assert_eq!(ndtr(0.0), 0.5);
        assert!((ndtr(40.0) - 1.0).abs() <= 1e-15);
        assert!((ndtr(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        for &x in &[-7.3, -2.0, -0.1, 0.4, 3.3, 8.0] {
            assert!((ndtr(x) + ndtr(-x) - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn log_ndtr_matches_high_precision_reference() {
        for &(x, want) in &LOG_NDTR_REF {
            let got = log_ndtr(x);
            assert!(rel(got, want) < 1e-10, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn log_ndtr_is_continuous_across_branches() {
        for &x in &[LOWER_TAIL, 0.0] {
            let lo = log_ndtr(x - 1e-12);
            let hi = log_ndtr(x + 1e-12);
            assert!(rel(lo, hi) < 1e-9, "{lo} vs {hi}");
        }
    }

    #[test]
    fn mills_ratio_reference_points() {
        assert!((mills_ratio(0.0) - 0.797_884_560_802_865_4).abs() < 1e-14);
        // mpmath: phi(-20)/Phi(-20)
        assert!(rel(mills_ratio(-20.0), 20.049_753_068_527_85) < 1e-12);
        // Φ(20) == 1 in double precision, so h(20) == φ(20).
        assert!(rel(mills_ratio(20.0), 5.520_948_362_159_763e-88) < 1e-12);
    }

    #[test]
    fn derivative_of_log_ndtr_is_mills_ratio() {
        let h = 1e-5;
        let mut x = -10.0;
        while x <= 10.0 {
            let fd = (log_ndtr(x + h) - log_ndtr(x - h)) / (2.0 * h);
            assert!(rel(fd, mills_ratio(x)) < 1e-6, "x={x}");
            x += 0.37;
        }
    }

    #[test]
    fn log_ndtr_diff_cases() {
        let p = math::exp(log_ndtr_diff(Some(1.0), Some(-1.0)));
        assert!((p - 0.682_689_492_137_085_9).abs() < 1e-14);
        assert_eq!(log_ndtr_diff(Some(0.3), None), log_ndtr(0.3));
        assert_eq!(log_ndtr_diff(None, Some(0.3)), log_ndtr(-0.3));
        // far upper tail: Φ(9) − Φ(8) ≈ φ(8)·R(8) − φ(9)·R(9)
        let far = log_ndtr_diff(Some(9.0), Some(8.0));
        let want = math::ln(ndtr(-8.0) - ndtr(-9.0));
        assert!(rel(far, want) < 1e-12);
        let deep = log_ndtr_diff(Some(-30.0), Some(-31.0));
        assert!(deep.is_finite() && deep < -450.0);
    }

    #[test]
    fn convolution_domain_errors() {
        assert!(probit_gauss_conv(1.0, 0.0, -1.0, 1.0).is_err());
        assert!(probit_gauss_conv(1.0, 0.0, 1.0, 0.0).is_err());
        assert!(gauss_conv_nll(0.0, 0.0, 0.0).is_err());
        assert_eq!(probit_gauss_conv(1.0, 0.0, 7.0, 1.0).unwrap(), 0.5);
        assert_eq!(probit_gauss_conv(1.0, 1.3, 0.0, 1.0).unwrap(), ndtr(1.3));
        assert!((gauss_conv_nll(2.0, 2.0, 1.0).unwrap() - 0.918_938_533_204_672_8).abs() < 1e-15);
        assert!((gauss_conv_nll(3.0, 2.0, 1.0).unwrap() - 1.418_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn ndtri_inverts_ndtr() {
        for &p in &[1e-12, 1e-6, 0.01, 0.025, 0.3, 0.5, 0.7, 0.975, 0.999_999] {
            let x = ndtri(p).unwrap();
            assert!(rel(ndtr(x), p) < 1e-9, "p={p}");
        }
        assert!((ndtri(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-9);
        assert!(ndtri(0.0).is_err() && ndtri(1.0).is_err());
    }

    #[test]
    fn quadrature_integrates_moments() {
        let rule = QuadratureRule::gauss_hermite(DEFAULT_QUADRATURE_NODES).unwrap();
        assert_eq!(rule.len(), 128);
        assert!((rule.expectation(|_| 1.0, 0.3, 2.0) - 1.0).abs() < 1e-12);
        assert!((rule.expectation(|f| f, 3.0, 2.0) - 3.0).abs() < 1e-12);
        assert!((rule.expectation(|f| f * f, 0.0, 2.0) - 2.0).abs() < 1e-12);
        // fourth moment of N(0, 2) = 3·2²
        assert!((rule.expectation(|f| f * f * f * f, 0.0, 2.0) - 12.0).abs() < 1e-10);
        assert!(QuadratureRule::gauss_hermite(32).is_err());
    }
}
