//! Synthetic generators against independent oracles.

use bethe_core::data::{gen_linear_gaussian, gen_two_moons};

fn variance(y: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (y.len() - 1) as f64
}

#[test]
fn linear_gaussian_variance_given_w() {
    let (ds, w) = gen_linear_gaussian(100_000, 10, 2.0, 0.5, 17).unwrap();
    let want = w.iter().map(|v| v * v).sum::<f64>() + 0.25;
    let got = variance(&ds.y);
    assert!((got / want - 1.0).abs() < 0.02, "{got} vs {want}");
}

#[test]
fn linear_gaussian_total_variance() {
    // Var y = E‖w‖² + σ² = d/α + σ², pooled over 10⁵ samples from 1000 draws of w.
    let (d, alpha, sigma) = (10, 2.0, 0.5);
    let mut pooled = 0.0;
    let draws = 1000;
    for seed in 0..draws {
        let (ds, _) = gen_linear_gaussian(100, d, alpha, sigma, seed).unwrap();
        pooled += ds.y.iter().map(|v| v * v).sum::<f64>();
    }
    let got = pooled / (100 * draws) as f64;
    let want = d as f64 / alpha + sigma * sigma;
    assert!((got / want - 1.0).abs() < 0.05, "{got} vs {want}");
}

#[test]
fn two_moons_mean_interclass_distance() {
    // Mean over one noiseless moon of the distance to the nearest point of
    // the other, from a dense numerical integration of the two curves.
    const GEOMETRY: f64 = 0.7122150989662303;
    let ds = gen_two_moons(2000, 0.0, 1).unwrap();
    let (a, b): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| ds.y[i] == 0.0);
    let nearest = |from: &[usize], to: &[usize]| {
        from.iter()
            .map(|&i| {
                to.iter()
                    .map(|&j| {
                        let dx = ds.x[(i, 0)] - ds.x[(j, 0)];
                        let dy = ds.x[(i, 1)] - ds.x[(j, 1)];
                        (dx * dx + dy * dy).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    assert_eq!((a.len(), b.len()), (1000, 1000));
    for got in [nearest(&a, &b), nearest(&b, &a)] {
        assert!((got - GEOMETRY).abs() < 5e-4, "{got} vs {GEOMETRY}");
    }
}
