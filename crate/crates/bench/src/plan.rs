//! Experiment plan files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bethe_core::trainer::{default_cv_grid, DEFAULT_ENSEMBLE_SIZE, DEFAULT_MAX_STEPS};

use crate::dataset::DatasetSpec;
use crate::kv::{parse_seeds, split_list, KeyValues};
use crate::method::MethodSpec;

pub const DEFAULT_SEEDS: std::ops::RangeInclusive<u64> = 5..=24;

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub datasets: Vec<DatasetSpec>,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub cv_grid: Vec<f64>,
    pub ensemble_size: usize,
    pub max_steps: usize,
}

impl Plan {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Keys: `datasets` and `methods` (comma lists, required), `seeds`
    /// (`a..b` or a list), `out`, `cv_grid`, `ensemble_size`, `max_steps`.
    /// Paths are relative to `base`.
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self> {
        let mut kv = KeyValues::parse(text, origin)?;
        let datasets = split_list(&kv.require("datasets")?)
            .iter()
            .map(|p| DatasetSpec::load(&base.join(p)))
            .collect::<Result<Vec<_>>>()
            .with_context(|| format!("{origin}: dataset spec"))?;
        let methods = split_list(&kv.require("methods")?)
            .iter()
            .map(|m| m.parse())
            .collect::<Result<Vec<MethodSpec>>>()
            .with_context(|| format!("{origin}: methods"))?;
        let seeds = match kv.take("seeds") {
            Some(s) => parse_seeds(&s)?,
            None => DEFAULT_SEEDS.collect(),
        };
        let out = base.join(kv.take("out").unwrap_or_else(|| "results".into()));
        let cv_grid = match kv.take("cv_grid") {
            Some(g) => split_list(&g)
                .iter()
                .map(|a| {
                    a.parse::<f64>()
                        .with_context(|| format!("{origin}: cv_grid value '{a}'"))
                })
                .collect::<Result<Vec<_>>>()?,
            None => default_cv_grid(),
        };
        let plan = Plan {
            datasets,
            methods,
            seeds,
            out,
            cv_grid,
            ensemble_size: kv
                .take_parsed("ensemble_size")?
                .unwrap_or(DEFAULT_ENSEMBLE_SIZE),
            max_steps: kv.take_parsed("max_steps")?.unwrap_or(DEFAULT_MAX_STEPS),
        };
        kv.finish()?;
        plan.validate()
            .with_context(|| format!("{origin}: invalid plan"))?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.methods.is_empty() {
            bail!("need at least one dataset and one method");
        }
        if self.seeds.is_empty() {
            bail!("seed list is empty");
        }
        if self.cv_grid.is_empty() || self.cv_grid.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            bail!("cv_grid must be a non-empty list of positive values");
        }
        if self.ensemble_size < 2 {
            bail!("ensemble_size must be at least 2");
        }
        if self.max_steps == 0 {
            bail!("max_steps must be positive");
        }
        for (i, d) in self.datasets.iter().enumerate() {
            if self.datasets[..i].iter().any(|e| e.name == d.name) {
                bail!("dataset name '{}' appears twice", d.name);
            }
            for m in &self.methods {
                m.validate_for(d.classification)
                    .with_context(|| format!("method {m} on dataset {}", d.name))?;
            }
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].iter().any(|n| n.name == m.name) {
                bail!("method '{m}' appears twice");
            }
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            bail!("seed list has duplicates");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("syn.ds"),
            "name = syn\ngenerator = linear\nn = 40\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("cls.ds"),
            "name = cls\ngenerator = probit\nn = 40\n",
        )
        .unwrap();
        dir
    }

    #[test]
    fn parses_and_defaults() {
        let dir = fixture();
        let p = Plan::parse(
            "datasets = syn.ds\nmethods = bethe-v1-eb, map",
            "t",
            dir.path(),
        )
        .unwrap();
        assert_eq!(p.seeds, (5..=24).collect::<Vec<_>>());
        assert_eq!(p.cv_grid, vec![0.01, 0.1, 1.0, 10.0]);
        assert_eq!(p.out, dir.path().join("results"));
        assert_eq!(p.methods.len(), 2);
        let p = Plan::parse(
            "datasets = syn.ds\nmethods = map\nseeds = 1,2\nmax_steps = 10\ncv_grid = 1",
            "t",
            dir.path(),
        )
        .unwrap();
        assert_eq!(
            (p.seeds, p.max_steps, p.cv_grid),
            (vec![1, 2], 10, vec![1.0])
        );
    }

    #[test]
    fn rejects_invalid_plans() {
        let dir = fixture();
        for bad in [
            "datasets = syn.ds\nmethods = bethe-v1-eb-ord",
            "datasets = cls.ds\nmethods = bethe-v1-eb-fs",
            "datasets = syn.ds\nmethods = map, map",
            "datasets = syn.ds, syn.ds\nmethods = map",
            "datasets = syn.ds\nmethods = map\nseeds = 3,3",
            "datasets = syn.ds\nmethods = map\ncv_grid = 0",
            "datasets = missing.ds\nmethods = map",
            "datasets = syn.ds\nmethods = map\nwat = 1",
            "methods = map",
        ] {
            assert!(Plan::parse(bad, "t", dir.path()).is_err(), "{bad}");
        }
    }
}
