//! The `run` command: every (dataset, method, seed) cell of a plan.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use bethe_core::data::{preprocess, split, Dataset, Prepared};
use bethe_core::losses::labels_from_targets;
use bethe_core::metrics::{self, Readout, ReliabilityBin, ECE_BINS};
use bethe_core::trainer::{
    cv_select, deep_ensemble, predict_class, predict_regression, train, Trajectory,
};
use rayon::prelude::*;

use crate::checkpoint;
use crate::dataset::DatasetSpec;
use crate::method::{Family, MethodSpec};
use crate::plan::Plan;
use crate::records::{num, write_records, RunRecord, Status};

pub const TRAJECTORY_COLUMNS: &str =
    "step,train_total,train_prior,train_data,val_nll,test_nll,alpha,sigma_obs_sq,mean_v";

/// Settings shared by every cell of a plan.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSettings {
    pub cv_grid: Vec<f64>,
    pub ensemble_size: usize,
    pub max_steps: usize,
}

impl CellSettings {
    pub fn from_plan(plan: &Plan) -> Self {
        CellSettings {
            cv_grid: plan.cv_grid.clone(),
            ensemble_size: plan.ensemble_size,
            max_steps: plan.max_steps,
        }
    }
}

/// Everything a cell produces. Failed cells carry only the record.
#[derive(Clone, Debug)]
pub struct CellOutput {
    pub record: RunRecord,
    /// Keyed by a file-name suffix (empty, or `m<i>` for ensemble members).
    pub trajectories: Vec<(String, Trajectory)>,
    pub checkpoints: Vec<(String, String)>,
    /// Best validation NLL per CV grid point; `None` for a diverged point.
    pub grid: Vec<(f64, Option<f64>)>,
    pub reliability: Vec<ReliabilityBin>,
    pub seconds: f64,
}

enum Fitted {
    Single(Box<bethe_core::trainer::TrainOutcome>, Readout),
    Ensemble(bethe_core::trainer::Ensemble),
}

/// Splits, preprocesses, trains and evaluates one cell.
pub fn run_cell(
    raw: &Dataset,
    dataset: &str,
    method: &MethodSpec,
    seed: u64,
    s: &CellSettings,
) -> Result<CellOutput> {
    let start = Instant::now();
    let core = |e: bethe_core::Error| anyhow!("{e}");
    let data: Prepared = preprocess(raw, &split(raw.len(), seed).map_err(core)?).map_err(core)?;
    let classes = data.task_classes();
    let mut cfg = method.config(classes, seed, &s.cv_grid)?;
    cfg.max_steps = s.max_steps;
    let mut out = CellOutput {
        record: RunRecord::failed(dataset, &method.name, seed, String::new()),
        trajectories: Vec::new(),
        checkpoints: Vec::new(),
        grid: Vec::new(),
        reliability: Vec::new(),
        seconds: 0.0,
    };
    let fitted = match method.family {
        Family::Ensemble => {
            let ens = deep_ensemble(&cfg, s.ensemble_size, &data).map_err(core)?;
            for (i, m) in ens.members.iter().enumerate() {
                out.trajectories
                    .push((format!("m{i}"), m.trajectory.clone()));
                out.checkpoints
                    .push((format!("m{i}"), checkpoint::to_string(&m.model)?));
            }
            Fitted::Ensemble(ens)
        }
        Family::Map => Fitted::Single(Box::new(train(&cfg, &data).map_err(core)?), Readout::Point),
        Family::Bethe { .. } => {
            let outcome = if method.is_cv() {
                let cv = cv_select(&cfg, &s.cv_grid, &data).map_err(core)?;
                out.grid = cv.scores;
                cv.outcome
            } else {
                train(&cfg, &data).map_err(core)?
            };
            Fitted::Single(Box::new(outcome), Readout::Bayes)
        }
    };
    let r = &mut out.record;
    r.status = Status::Ok;
    if let Fitted::Single(o, _) = &fitted {
        out.trajectories.push((String::new(), o.trajectory.clone()));
        out.checkpoints
            .push((String::new(), checkpoint::to_string(&o.model)?));
        let alphas = o.model.alphas();
        if cfg.method == bethe_core::trainer::Method::Bethe {
            r.alpha = alphas.iter().sum::<f64>() / alphas.len() as f64;
        }
        if classes == 0 {
            r.sigma_obs_sq = o.model.sigma_obs_sq();
        }
        r.oracle_test_nll = o.trajectory.oracle_test_nll().unwrap_or(f64::NAN);
        r.selected_alpha = o.selected_alpha.unwrap_or(f64::NAN);
        r.best_step = Some(o.best_step);
        r.steps = o.trajectory.records.last().map(|t| t.step);
        r.stop = match o.stop {
            bethe_core::trainer::StopReason::EarlyStopped => "early".into(),
            bethe_core::trainer::StopReason::MaxSteps => "max_steps".into(),
        };
        r.alpha_runaway = o.diagnostics.alpha_runaway;
        r.variance_starvation = o.diagnostics.variance_starvation;
    }
    let test = &data.test;
    if classes == 0 {
        let pred = match &fitted {
            Fitted::Single(o, readout) => predict_regression(&o.model, test, *readout),
            Fitted::Ensemble(e) => e.predict_regression(test),
        }
        .map_err(core)?;
        let y = test.original_targets();
        r.nll = metrics::gaussian_nll(&pred, &y).map_err(core)?;
        r.rmse = metrics::rmse(&pred, &y).map_err(core)?;
        r.calib_err = metrics::calib_err(&pred, &y).map_err(core)?;
    } else {
        let pred = match &fitted {
            Fitted::Single(o, readout) => predict_class(&o.model, test, cfg.probit_scale, *readout),
            Fitted::Ensemble(e) => e.predict_class(test),
        }
        .map_err(core)?;
        let labels = labels_from_targets(&test.y, classes).map_err(core)?;
        r.nll = metrics::class_nll(&pred, &labels).map_err(core)?;
        r.acc = metrics::accuracy(&pred, &labels).map_err(core)?;
        r.ece = metrics::ece(&pred, &labels).map_err(core)?;
        out.reliability = metrics::reliability_bins(&pred, &labels, ECE_BINS).map_err(core)?;
    }
    out.seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

/// File-name stem of a cell.
pub fn stem(dataset: &str, method: &str, seed: u64, suffix: &str) -> String {
    let clean: String = method
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '='
            }
        })
        .collect();
    let mut s = format!("{dataset}__{clean}__s{seed}");
    if !suffix.is_empty() {
        s.push_str("__");
        s.push_str(suffix);
    }
    s
}

pub fn trajectory_csv(t: &Trajectory) -> String {
    let mut s = String::from(TRAJECTORY_COLUMNS);
    s.push('\n');
    for r in &t.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.step,
            num(r.train.total),
            num(r.train.prior_term),
            num(r.train.data_term),
            num(r.val_nll),
            num(r.test_nll),
            num(r.alpha),
            num(r.sigma_obs_sq),
            num(r.mean_v)
        );
    }
    s
}

fn reliability_csv(bins: &[ReliabilityBin]) -> String {
    let mut s = String::from("lower,upper,count,accuracy,confidence\n");
    for b in bins {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            b.lower,
            b.upper,
            b.count,
            num(b.accuracy),
            num(b.confidence)
        );
    }
    s
}

/// Paths of the files written by [`cmd_run`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunFiles {
    pub records: PathBuf,
    pub grids: PathBuf,
    pub timings: PathBuf,
    pub trajectories: PathBuf,
    pub checkpoints: PathBuf,
    pub reliability: PathBuf,
}

impl RunFiles {
    pub fn new(out: &Path) -> Self {
        RunFiles {
            records: out.join("records.csv"),
            grids: out.join("grids.csv"),
            timings: out.join("timings.csv"),
            trajectories: out.join("trajectories"),
            checkpoints: out.join("checkpoints"),
            reliability: out.join("reliability"),
        }
    }
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs every cell of `plan` on `jobs` threads and writes the results
/// under `plan.out`. A failing cell becomes a `failed` row. Output bytes do
/// not depend on `jobs`, except for `timings.csv`.
pub fn cmd_run(plan: &Plan, jobs: usize) -> Result<Vec<RunRecord>> {
    plan.validate()?;
    let mut fixed: BTreeMap<usize, Arc<Dataset>> = BTreeMap::new();
    for (i, d) in plan.datasets.iter().enumerate() {
        if d.is_fixed() {
            let raw = d
                .materialize(0)
                .with_context(|| format!("loading dataset {}", d.name))?;
            fixed.insert(i, Arc::new(raw));
        }
    }
    let cells: Vec<(usize, &MethodSpec, u64)> = (0..plan.datasets.len())
        .flat_map(|d| {
            plan.methods
                .iter()
                .flat_map(move |m| plan.seeds.iter().map(move |&s| (d, m, s)))
        })
        .collect();
    let settings = CellSettings::from_plan(plan);
    let total = cells.len();
    let work = |(i, &(d, m, seed)): (usize, &(usize, &MethodSpec, u64))| -> CellOutput {
        let spec: &DatasetSpec = &plan.datasets[d];
        let result = match fixed.get(&d) {
            Some(raw) => run_cell(raw, &spec.name, m, seed, &settings),
            None => spec
                .materialize(seed)
                .and_then(|raw| run_cell(&raw, &spec.name, m, seed, &settings)),
        };
        let out = result.unwrap_or_else(|e| CellOutput {
            record: RunRecord::failed(&spec.name, &m.name, seed, format!("{e:#}")),
            trajectories: Vec::new(),
            checkpoints: Vec::new(),
            grid: Vec::new(),
            reliability: Vec::new(),
            seconds: 0.0,
        });
        let r = &out.record;
        match &r.status {
            Status::Ok => eprintln!(
                "[{}/{total}] {} {} seed {}: nll {:.4}",
                i + 1,
                spec.name,
                m,
                seed,
                r.nll
            ),
            Status::Failed(e) => eprintln!(
                "[{}/{total}] {} {} seed {}: FAILED {e}",
                i + 1,
                spec.name,
                m,
                seed
            ),
        }
        out
    };
    let outputs: Vec<CellOutput> = if jobs <= 1 {
        cells.iter().enumerate().map(work).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()?
            .install(|| cells.par_iter().enumerate().map(work).collect())
    };
    write_outputs(&plan.out, &outputs)?;
    Ok(outputs.into_iter().map(|o| o.record).collect())
}

/// Single collector for every file of a run.
pub fn write_outputs(out: &Path, outputs: &[CellOutput]) -> Result<()> {
    let files = RunFiles::new(out);
    for dir in [&files.trajectories, &files.checkpoints, &files.reliability] {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let records: Vec<RunRecord> = outputs.iter().map(|o| o.record.clone()).collect();
    let mut buf = Vec::new();
    write_records(&mut buf, &records)?;
    write(&files.records, buf)?;
    let mut grids = String::from("dataset,method,seed,alpha,val_nll\n");
    let mut timings = String::from("dataset,method,seed,seconds\n");
    for o in outputs {
        let r = &o.record;
        for (alpha, score) in &o.grid {
            let _ = writeln!(
                grids,
                "{},{},{},{},{}",
                r.dataset,
                r.method,
                r.seed,
                alpha,
                score.map_or(String::new(), num)
            );
        }
        let _ = writeln!(
            timings,
            "{},{},{},{:.3}",
            r.dataset, r.method, r.seed, o.seconds
        );
        for (suffix, t) in &o.trajectories {
            let name = format!("{}.csv", stem(&r.dataset, &r.method, r.seed, suffix));
            write(&files.trajectories.join(name), trajectory_csv(t))?;
        }
        for (suffix, text) in &o.checkpoints {
            let name = format!("{}.ckpt", stem(&r.dataset, &r.method, r.seed, suffix));
            write(&files.checkpoints.join(name), text)?;
        }
        if !o.reliability.is_empty() {
            let name = format!("{}.csv", stem(&r.dataset, &r.method, r.seed, ""));
            write(
                &files.reliability.join(name),
                reliability_csv(&o.reliability),
            )?;
        }
    }
    write(&files.grids, grids)?;
    write(&files.timings, timings)?;
    Ok(())
}
