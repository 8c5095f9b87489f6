//! In-memory datasets: seeded splits, the standardisation protocol and
//! synthetic generators. Reading files is the caller's job.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::math;
use crate::{Error, Matrix, Result};

/// Features with a training-fold standard deviation below this are dropped.
pub const MIN_FEATURE_STD: f64 = 1e-10;

/// Kind of target column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Targets {
    Real,
    /// Class indices `0..names.len()` stored as floats in `y`.
    Classes {
        names: Vec<String>,
    },
}

impl Targets {
    pub fn classes(&self) -> usize {
        match self {
            Targets::Real => 0,
            Targets::Classes { names } => names.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub targets: Targets,
    /// Added back to predictions to return to original target units.
    pub target_mean: f64,
}

impl Dataset {
    pub fn new(
        x: Matrix,
        y: Vec<f64>,
        feature_names: Vec<String>,
        targets: Targets,
    ) -> Result<Self> {
        if x.rows() != y.len() || feature_names.len() != x.cols() {
            return Err(Error::Dimension {
                op: "Dataset::new",
                lhs: x.shape(),
                rhs: (y.len(), feature_names.len()),
            });
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Dataset {
            x,
            y,
            feature_names,
            targets,
            target_mean: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
            targets: self.targets.clone(),
            target_mean: self.target_mean,
        }
    }

    /// Targets in original units (centring undone).
    pub fn original_targets(&self) -> Vec<f64> {
        self.y.iter().map(|v| v + self.target_mean).collect()
    }
}

/// Disjoint train/validation/test indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// RNG for everything derived from a run seed; `stream` separates the
/// data partition from model initialisation.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const SPLIT_STREAM: u64 = 0;
pub const INIT_STREAM: u64 = 1;
pub const GENERATOR_STREAM: u64 = 2;

/// Seeded Fisher–Yates permutation cut at `⌊0.6N⌋` and `⌊0.8N⌋`.
pub fn split(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 5 {
        return Err(Error::invalid(format!(
            "need at least 5 rows to split, got {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeded_rng(seed, SPLIT_STREAM));
    let a = 6 * n / 10;
    let b = 8 * n / 10;
    Ok(SplitIndices {
        test: perm[b..].to_vec(),
        val: perm[a..b].to_vec(),
        train: {
            perm.truncate(a);
            perm
        },
    })
}

/// Train/validation/test folds after preprocessing.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Columns of the raw matrix that survived the variance filter.
    pub kept_columns: Vec<usize>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

impl Prepared {
    pub fn task_classes(&self) -> usize {
        self.train.targets.classes()
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

/// Standardises features with train-fold statistics, drops near-constant
/// columns and centres real targets on the training mean.
pub fn preprocess(raw: &Dataset, idx: &SplitIndices) -> Result<Prepared> {
    if idx.train.is_empty() || idx.val.is_empty() || idx.test.is_empty() {
        return Err(Error::invalid("every fold must be non-empty"));
    }
    let mut kept = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for j in 0..raw.dim() {
        let (m, s) = mean_std(idx.train.iter().map(|&i| raw.x[(i, j)]));
        if s >= MIN_FEATURE_STD {
            kept.push(j);
            means.push(m);
            stds.push(s);
        }
    }
    if kept.is_empty() {
        return Err(Error::invalid(
            "every feature column has near-zero variance",
        ));
    }
    let target_mean = match raw.targets {
        Targets::Real => idx.train.iter().map(|&i| raw.y[i]).sum::<f64>() / idx.train.len() as f64,
        Targets::Classes { .. } => 0.0,
    };
    let names: Vec<String> = kept.iter().map(|&j| raw.feature_names[j].clone()).collect();
    let fold = |rows: &[usize]| Dataset {
        x: Matrix::from_fn(rows.len(), kept.len(), |r, c| {
            (raw.x[(rows[r], kept[c])] - means[c]) / stds[c]
        }),
        y: rows.iter().map(|&i| raw.y[i] - target_mean).collect(),
        feature_names: names.clone(),
        targets: raw.targets.clone(),
        target_mean: raw.target_mean + target_mean,
    };
    Ok(Prepared {
        train: fold(&idx.train),
        val: fold(&idx.val),
        test: fold(&idx.test),
        kept_columns: kept.clone(),
        feature_mean: means,
        feature_std: stds,
    })
}

fn column_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `w ~ N(0, α⁻¹I)`, `x ~ N(0, I)`, `y = wᵀx + N(0, σ²)`. Returns the data
/// and the true weights.
pub fn gen_linear_gaussian(
    n: usize,
    d: usize,
    alpha_true: f64,
    sigma_true: f64,
    seed: u64,
) -> Result<(Dataset, Vec<f64>)> {
    if !(alpha_true > 0.0) || !(sigma_true >= 0.0) || n == 0 || d == 0 {
        return Err(Error::invalid(
            "generator needs n, d, alpha > 0 and sigma >= 0",
        ));
    }
    let mut rng = seeded_rng(seed, GENERATOR_STREAM);
    let scale = 1.0 / math::sqrt(alpha_true);
    let w: Vec<f64> = (0..d).map(|_| scale * normal(&mut rng)).collect();
    let x = Matrix::from_fn(n, d, |_, _| normal(&mut rng));
    let y = (0..n)
        .map(|i| {
            let f: f64 = x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum();
            f + sigma_true * normal(&mut rng)
        })
        .collect();
    Ok((Dataset::new(x, y, column_names(d), Targets::Real)?, w))
}

/// Binary labels from a probit link on a random linear function:
/// `w ~ N(0, α⁻¹I)`, `x ~ N(0, I)`, `y = 1[wᵀx + ε > 0]`, `ε ~ N(0, 1)`.
pub fn gen_linear_probit(
    n: usize,
    d: usize,
    alpha_true: f64,
    seed: u64,
) -> Result<(Dataset, Vec<f64>)> {
    let (lin, w) = gen_linear_gaussian(n, d, alpha_true, 1.0, seed)?;
    let y = lin
        .y
        .iter()
        .map(|&f| if f > 0.0 { 1.0 } else { 0.0 })
        .collect();
    let ds = Dataset::new(lin.x, y, lin.feature_names, binary_targets())?;
    Ok((ds, w))
}

fn binary_targets() -> Targets {
    Targets::Classes {
        names: alloc::vec![String::from("0"), String::from("1")],
    }
}

/// Two interleaved unit half-circles, the second shifted by `(1, −0.5)`,
/// with isotropic Gaussian noise. Labels 0 (upper moon) and 1 (lower moon).
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) || !(noise >= 0.0) {
        return Err(Error::invalid(
            "two moons needs an even n > 0 and noise >= 0",
        ));
    }
    let half = n / 2;
    let mut rng = seeded_rng(seed, GENERATOR_STREAM);
    let step = if half > 1 {
        core::f64::consts::PI / (half - 1) as f64
    } else {
        0.0
    };
    let mut rows = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..half {
        let t = i as f64 * step;
        rows.push(math::cos(t));
        rows.push(math::sin(t));
        y.push(0.0);
    }
    for i in 0..half {
        let t = i as f64 * step;
        rows.push(1.0 - math::cos(t));
        rows.push(0.5 - math::sin(t));
        y.push(1.0);
    }
    for v in rows.iter_mut() {
        *v += noise * normal(&mut rng);
    }
    let x = Matrix::from_vec(n, 2, rows)?;
    Dataset::new(x, y, column_names(2), binary_targets())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn split_sizes_and_determinism() {
        let s = split(10, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        assert_eq!(s, split(10, 3).unwrap());
        assert_ne!(split(50, 3).unwrap(), split(50, 4).unwrap());
        assert!(split(4, 0).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let mut r = seeded_rng(99, 0);
        for _ in 0..100 {
            let n = r.random_range(5..300);
            let seed = r.random_range(0..1_000_000u64);
            let s = split(n, seed).unwrap();
            let mut all: Vec<usize> = s
                .train
                .iter()
                .chain(&s.val)
                .chain(&s.test)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            let nf = n as f64;
            assert!((s.train.len() as f64 - 0.6 * nf).abs() < 1.0);
            assert!((s.val.len() as f64 - 0.2 * nf).abs() < 1.0 + 1e-9);
        }
    }

    fn fixture() -> Dataset {
        // column 1 is constant
        let x = Matrix::from_rows(&[
            &[1.0, 5.0, 2.0],
            &[2.0, 5.0, 4.0],
            &[3.0, 5.0, 6.0],
            &[4.0, 5.0, 8.0],
            &[10.0, 5.0, -1.0],
        ]);
        Dataset::new(
            x,
            vec![1.0, 2.0, 6.0, 3.0, 0.0],
            vec!["a".into(), "b".into(), "c".into()],
            Targets::Real,
        )
        .unwrap()
    }

    #[test]
    fn preprocess_hand_computed() {
        let raw = fixture();
        let idx = SplitIndices {
            train: vec![0, 1, 2],
            val: vec![3],
            test: vec![4],
        };
        let p = preprocess(&raw, &idx).unwrap();
        assert_eq!(p.kept_columns, vec![0, 2]);
        // column a: mean 2, population std sqrt(2/3)
        let s = math::sqrt(2.0 / 3.0);
        assert!((p.train.x[(0, 0)] + 1.0 / s).abs() < 1e-12);
        assert!((p.val.x[(0, 0)] - 2.0 / s).abs() < 1e-12);
        // column c: mean 4, std 2·sqrt(2/3)
        assert!((p.test.x[(0, 1)] - (-5.0) / (2.0 * s)).abs() < 1e-12);
        // targets centred on the train mean 3
        assert_eq!(p.train.y, vec![-2.0, -1.0, 3.0]);
        assert_eq!(p.test.y, vec![-3.0]);
        assert_eq!(p.test.original_targets(), vec![0.0]);
        for j in 0..2 {
            let col: Vec<f64> = (0..3).map(|i| p.train.x[(i, j)]).collect();
            let (m, sd) = mean_std(col.iter().copied());
            assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn preprocess_leaves_standardised_data_alone() {
        let x = Matrix::from_rows(&[
            &[-1.0, 1.0],
            &[1.0, -1.0],
            &[3.0, 0.0],
            &[0.0, 0.0],
            &[0.5, 0.5],
        ]);
        let raw = Dataset::new(
            x.clone(),
            vec![0.0; 5],
            vec!["a".into(), "b".into()],
            Targets::Real,
        )
        .unwrap();
        let idx = SplitIndices {
            train: vec![0, 1],
            val: vec![2],
            test: vec![3, 4],
        };
        let p = preprocess(&raw, &idx).unwrap();
        assert!(p.train.x.max_abs_diff(&x.select_rows(&[0, 1])) < 1e-12);
        assert!(p.test.x.max_abs_diff(&x.select_rows(&[3, 4])) < 1e-12);
    }

    #[test]
    fn preprocess_errors_when_everything_is_constant() {
        let raw = Dataset::new(
            Matrix::filled(5, 2, 1.0),
            vec![0.0; 5],
            vec!["a".into(), "b".into()],
            Targets::Real,
        )
        .unwrap();
        assert!(preprocess(&raw, &split(5, 0).unwrap()).is_err());
    }

    #[test]
    fn preprocessing_ignores_heldout_rows() {
        let (raw, _) = gen_linear_gaussian(40, 3, 1.0, 0.3, 7).unwrap();
        let idx = split(40, 1).unwrap();
        let mut shuffled = idx.clone();
        shuffled.val.reverse();
        shuffled.test.rotate_left(3);
        let a = preprocess(&raw, &idx).unwrap();
        let b = preprocess(&raw, &shuffled).unwrap();
        assert_eq!(a.feature_mean, b.feature_mean);
        assert_eq!(a.feature_std, b.feature_std);
        assert_eq!(a.train.target_mean, b.train.target_mean);
    }

    #[test]
    fn noiseless_linear_data_is_exact() {
        let (ds, w) = gen_linear_gaussian(50, 4, 2.0, 0.0, 11).unwrap();
        for i in 0..50 {
            let f: f64 = ds.x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum();
            assert_eq!(ds.y[i], f);
        }
        assert_eq!(ds, gen_linear_gaussian(50, 4, 2.0, 0.0, 11).unwrap().0);
    }

    #[test]
    fn two_moons_geometry() {
        let ds = gen_two_moons(100, 0.0, 5).unwrap();
        assert_eq!(ds.y.iter().filter(|&&v| v == 0.0).count(), 50);
        for i in 0..100 {
            let (a, b) = (ds.x[(i, 0)], ds.x[(i, 1)]);
            let r = if ds.y[i] == 0.0 {
                a * a + b * b
            } else {
                (a - 1.0) * (a - 1.0) + (b - 0.5) * (b - 0.5)
            };
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert!(gen_two_moons(7, 0.1, 0).is_err());
    }
}
