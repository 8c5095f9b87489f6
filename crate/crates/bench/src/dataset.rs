//! Dataset spec files: where the data comes from and how to read it.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bethe_core::data::{gen_linear_gaussian, gen_linear_probit, gen_two_moons, Dataset};

use crate::csvio::{load_csv, CsvSpec, TargetKind};
use crate::kv::KeyValues;

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Csv {
        path: PathBuf,
        csv: CsvSpec,
    },
    Linear {
        n: usize,
        d: usize,
        alpha: f64,
        sigma: f64,
    },
    Probit {
        n: usize,
        d: usize,
        alpha: f64,
    },
    Moons {
        n: usize,
        noise: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub name: String,
    pub source: Source,
    pub classification: bool,
    /// Generated data uses this seed when set, else the run seed.
    pub data_seed: Option<u64>,
}

impl DatasetSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Keys: `name`, `generator` (`csv`, `linear`, `probit`, `moons`), and
    /// per generator `path target task categorical label_order drop` or
    /// `n d alpha sigma noise data_seed`.
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self> {
        let mut kv = KeyValues::parse(text, origin)?;
        let name = kv.require("name")?;
        if name.contains(['/', '\\', ',']) || name.contains("__") {
            bail!("{origin}: dataset name '{name}' may not contain '/', ',' or '__'");
        }
        let generator = kv.take("generator").unwrap_or_else(|| "csv".into());
        let data_seed = kv.take_parsed("data_seed")?;
        let (source, classification) = match generator.as_str() {
            "csv" => {
                let task = kv.require("task")?;
                let classification = match task.as_str() {
                    "regression" => false,
                    "classification" => true,
                    other => {
                        bail!("{origin}: task must be regression or classification, got '{other}'")
                    }
                };
                let order = kv.take_list("label_order");
                if !classification && !order.is_empty() {
                    bail!("{origin}: label_order only applies to classification");
                }
                let csv = CsvSpec {
                    target: kv.require("target")?,
                    kind: if classification {
                        TargetKind::Labels {
                            order: (!order.is_empty()).then_some(order),
                        }
                    } else {
                        TargetKind::Real
                    },
                    categorical: kv.take_list("categorical"),
                    drop: kv.take_list("drop"),
                };
                let path = base.join(kv.require("path")?);
                (Source::Csv { path, csv }, classification)
            }
            "linear" => (
                Source::Linear {
                    n: kv.take_parsed("n")?.unwrap_or(2000),
                    d: kv.take_parsed("d")?.unwrap_or(10),
                    alpha: kv.take_parsed("alpha")?.unwrap_or(1.0),
                    sigma: kv.take_parsed("sigma")?.unwrap_or(0.5),
                },
                false,
            ),
            "probit" => (
                Source::Probit {
                    n: kv.take_parsed("n")?.unwrap_or(2000),
                    d: kv.take_parsed("d")?.unwrap_or(10),
                    alpha: kv.take_parsed("alpha")?.unwrap_or(1.0),
                },
                true,
            ),
            "moons" => (
                Source::Moons {
                    n: kv.take_parsed("n")?.unwrap_or(200),
                    noise: kv.take_parsed("noise")?.unwrap_or(0.15),
                },
                true,
            ),
            other => bail!("{origin}: unknown generator '{other}'"),
        };
        kv.finish()?;
        Ok(DatasetSpec {
            name,
            source,
            classification,
            data_seed,
        })
    }

    /// Raw (unsplit, unstandardised) data for one run.
    pub fn materialize(&self, run_seed: u64) -> Result<Dataset> {
        let seed = self.data_seed.unwrap_or(run_seed);
        Ok(match &self.source {
            Source::Csv { path, csv } => load_csv(path, csv)?,
            Source::Linear { n, d, alpha, sigma } => {
                gen_linear_gaussian(*n, *d, *alpha, *sigma, seed)?.0
            }
            Source::Probit { n, d, alpha } => gen_linear_probit(*n, *d, *alpha, seed)?.0,
            Source::Moons { n, noise } => gen_two_moons(*n, *noise, seed)?,
        })
    }

    /// Whether the data are the same for every run seed.
    pub fn is_fixed(&self) -> bool {
        matches!(self.source, Source::Csv { .. }) || self.data_seed.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_spec() {
        let text = "name = iris\npath = iris.csv\ntarget = species\ntask = classification\nlabel_order = a, b, c\n";
        let s = DatasetSpec::parse(text, "t", Path::new("/data")).unwrap();
        assert!(s.classification);
        match s.source {
            Source::Csv { path, csv } => {
                assert_eq!(path, PathBuf::from("/data/iris.csv"));
                assert_eq!(
                    csv.kind,
                    TargetKind::Labels {
                        order: Some(vec!["a".into(), "b".into(), "c".into()])
                    }
                );
            }
            _ => panic!(),
        }
    }

    #[test]
    fn generator_defaults_and_errors() {
        let s = DatasetSpec::parse(
            "name = syn\ngenerator = linear\nn = 50",
            "t",
            Path::new("."),
        )
        .unwrap();
        assert_eq!(
            s.source,
            Source::Linear {
                n: 50,
                d: 10,
                alpha: 1.0,
                sigma: 0.5
            }
        );
        assert_eq!(s.materialize(3).unwrap(), s.materialize(3).unwrap());
        assert_ne!(s.materialize(3).unwrap(), s.materialize(4).unwrap());
        assert!(DatasetSpec::parse(
            "name = a\ngenerator = linear\nbogus = 1",
            "t",
            Path::new(".")
        )
        .is_err());
        assert!(DatasetSpec::parse("name = a/b\ngenerator = moons", "t", Path::new(".")).is_err());
        assert!(DatasetSpec::parse(
            "name = a\npath = x\ntarget = y\ntask = regression\nlabel_order = q",
            "t",
            Path::new(".")
        )
        .is_err());
    }
}
