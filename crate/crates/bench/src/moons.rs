//! Two-moons demo grid: MAP vs Bethe class probabilities on a lattice.

use std::fmt::Write as _;

use anyhow::{anyhow, bail, Result};
use bethe_core::data::{gen_two_moons, preprocess, split, Prepared};
use bethe_core::metrics::{predictive_class, Readout};
use bethe_core::model::{Task, Variant};
use bethe_core::tensor::Matrix;
use bethe_core::trainer::{train, TrainConfig, TrainOutcome};

pub const MOONS_N: usize = 200;
pub const MOONS_NOISE: f64 = 0.15;
pub const DEFAULT_RESOLUTION: usize = 100;
pub const LATTICE_MIN: f64 = -2.5;
pub const LATTICE_MAX: f64 = 3.5;
pub const MOONS_DEPTH: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub x1: f64,
    pub x2: f64,
    /// P(class 1).
    pub p_map: f64,
    pub p_bethe: f64,
    pub v_bethe: f64,
}

#[derive(Clone, Debug)]
pub struct MoonsGrid {
    pub points: Vec<GridPoint>,
    /// Training inputs in original coordinates.
    pub train_x: Vec<[f64; 2]>,
    /// Bethe `v` at the training inputs.
    pub train_v: Vec<f64>,
    pub map: TrainOutcome,
    pub bethe: TrainOutcome,
}

fn standardise(data: &Prepared, raw: &[[f64; 2]]) -> Matrix {
    let cols = &data.kept_columns;
    Matrix::from_fn(raw.len(), cols.len(), |i, j| {
        (raw[i][cols[j]] - data.feature_mean[j]) / data.feature_std[j]
    })
}

/// Trains MAP and Bethe V3 (binary, EB) on one two-moons draw and evaluates
/// both on a `resolution × resolution` lattice over `[−2.5, 3.5]²`.
pub fn two_moons(resolution: usize, seed: u64) -> Result<MoonsGrid> {
    two_moons_with(
        resolution,
        seed,
        MOONS_DEPTH,
        bethe_core::model::DEFAULT_WIDTH,
    )
}

pub fn two_moons_with(
    resolution: usize,
    seed: u64,
    depth: usize,
    width: usize,
) -> Result<MoonsGrid> {
    if resolution < 2 {
        bail!("grid resolution must be at least 2");
    }
    let core = |e: bethe_core::Error| anyhow!("{e}");
    let raw = gen_two_moons(MOONS_N, MOONS_NOISE, seed).map_err(core)?;
    let data = preprocess(&raw, &split(raw.len(), seed).map_err(core)?).map_err(core)?;
    let mut bethe_cfg = TrainConfig::new(Task::Binary, Variant::V3, seed);
    bethe_cfg.depth = depth;
    bethe_cfg.width = width;
    let mut map_cfg = TrainConfig::map(Task::Binary, seed);
    map_cfg.depth = depth;
    map_cfg.width = width;
    let bethe = train(&bethe_cfg, &data).map_err(core)?;
    let map = train(&map_cfg, &data).map_err(core)?;

    let step = (LATTICE_MAX - LATTICE_MIN) / (resolution - 1) as f64;
    let lattice: Vec<[f64; 2]> = (0..resolution * resolution)
        .map(|k| {
            let (i, j) = (k / resolution, k % resolution);
            [LATTICE_MIN + j as f64 * step, LATTICE_MIN + i as f64 * step]
        })
        .collect();
    let x = standardise(&data, &lattice);
    let c = bethe_cfg.probit_scale;
    let p_map = predictive_class(&map.model, &x, c, Readout::Point).map_err(core)?;
    let p_bethe = predictive_class(&bethe.model, &x, c, Readout::Bayes).map_err(core)?;
    let v = bethe.model.messages(&x).map_err(core)?.remove(0).v;
    let points = lattice
        .iter()
        .enumerate()
        .map(|(k, p)| GridPoint {
            x1: p[0],
            x2: p[1],
            p_map: p_map.probs[(k, 1)],
            p_bethe: p_bethe.probs[(k, 1)],
            v_bethe: v[k],
        })
        .collect();

    let train_x: Vec<[f64; 2]> = (0..data.train.len())
        .map(|i| {
            let row = data.train.x.row(i);
            let mut p = [0.0; 2];
            for (j, &col) in data.kept_columns.iter().enumerate() {
                p[col] = row[j] * data.feature_std[j] + data.feature_mean[j];
            }
            p
        })
        .collect();
    let train_v = bethe
        .model
        .messages(&data.train.x)
        .map_err(core)?
        .remove(0)
        .v;
    Ok(MoonsGrid {
        points,
        train_x,
        train_v,
        map,
        bethe,
    })
}

impl MoonsGrid {
    pub fn csv(&self) -> String {
        let mut s = String::from("x1,x2,p_map,p_bethe,v_bethe\n");
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                p.x1, p.x2, p.p_map, p.p_bethe, p.v_bethe
            );
        }
        s
    }

    /// Distance from `(x1, x2)` to the nearest training input.
    pub fn distance_to_data(&self, x1: f64, x2: f64) -> f64 {
        self.train_x
            .iter()
            .map(|t| ((t[0] - x1).powi(2) + (t[1] - x2).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    /// Lattice points farther than `radius` from every training input.
    pub fn far_points(&self, radius: f64) -> Vec<GridPoint> {
        self.points
            .iter()
            .filter(|p| self.distance_to_data(p.x1, p.x2) > radius)
            .copied()
            .collect()
    }
}
