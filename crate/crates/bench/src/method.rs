//! Method names such as `bethe-v3-eb`, `bethe-v2-alpha:0.1`, `bethe-v1-cv-fs`,
//! `map-2l` or `ens-ord`.
//!
//! Grammar: a family (`bethe`, `map`, `ens`), then for `bethe` a variant
//! (`v1`, `v2`, `v3`) and a regime (`eb`, `cv`, `alpha:<value>`), then any
//! of the flags `fs` (fixed σ², regression only), `lin`/`1l`/`2l` (backbone
//! depth 0/1/2, default 1) and `ova`/`ord` (multiclass head; binary data
//! use a single probit head unless one is given).

use std::fmt;
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};
use bethe_core::model::{Task, Variant};
use bethe_core::trainer::{Method, Regime, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegimeSpec {
    Eb,
    Cv,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    Bethe {
        variant: Variant,
        regime: RegimeSpec,
    },
    Map,
    Ensemble,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Auto,
    Ova,
    Ordinal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub family: Family,
    pub fixed_sigma: bool,
    pub depth: usize,
    pub head: Head,
}

impl FromStr for MethodSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let name = s.trim().to_string();
        let mut parts = name.split('-');
        let bad = |why: &str| anyhow!("method '{name}': {why}");
        let family = match parts.next() {
            Some("bethe") => {
                let variant: Variant = parts
                    .next()
                    .ok_or_else(|| bad("missing variant"))?
                    .parse()
                    .map_err(|_| bad("variant must be v1, v2 or v3"))?;
                let regime = match parts.next().ok_or_else(|| bad("missing regime"))? {
                    "eb" => RegimeSpec::Eb,
                    "cv" => RegimeSpec::Cv,
                    r => match r.strip_prefix("alpha:").map(str::parse::<f64>) {
                        Some(Ok(a)) if a > 0.0 && a.is_finite() => RegimeSpec::Fixed(a),
                        _ => return Err(bad("regime must be eb, cv or alpha:<positive>")),
                    },
                };
                Family::Bethe { variant, regime }
            }
            Some("map") => Family::Map,
            Some("ens") => Family::Ensemble,
            _ => return Err(bad("family must be bethe, map or ens")),
        };
        let mut spec = MethodSpec {
            name: name.clone(),
            family,
            fixed_sigma: false,
            depth: 1,
            head: Head::Auto,
        };
        let mut depth_set = false;
        let mut head_set = false;
        for flag in parts {
            match flag {
                "fs" if matches!(family, Family::Bethe { .. }) && !spec.fixed_sigma => {
                    spec.fixed_sigma = true
                }
                "lin" | "1l" | "2l" if !depth_set => {
                    spec.depth = match flag {
                        "lin" => 0,
                        "1l" => 1,
                        _ => 2,
                    };
                    depth_set = true;
                }
                "ova" | "ord" if !head_set => {
                    spec.head = if flag == "ova" {
                        Head::Ova
                    } else {
                        Head::Ordinal
                    };
                    head_set = true;
                }
                _ => bail!("method '{name}': unexpected or repeated flag '{flag}'"),
            }
        }
        Ok(spec)
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl MethodSpec {
    /// Task for a dataset with `classes` classes (0 for regression).
    pub fn task(&self, classes: usize) -> Result<Task> {
        if classes == 0 {
            if self.head != Head::Auto {
                bail!(
                    "method '{}': ova/ord heads need a classification dataset",
                    self.name
                );
            }
            return Ok(Task::Regression);
        }
        if self.fixed_sigma {
            bail!("method '{}': fs applies to regression only", self.name);
        }
        if classes < 2 {
            bail!("classification data need at least two classes");
        }
        Ok(match self.head {
            Head::Auto if classes == 2 => Task::Binary,
            Head::Auto | Head::Ova => Task::Ova { classes },
            Head::Ordinal => Task::Ordinal { classes },
        })
    }

    /// Checks the method against a dataset kind without knowing `K`.
    pub fn validate_for(&self, classification: bool) -> Result<()> {
        self.task(if classification { 3 } else { 0 }).map(|_| ())
    }

    pub fn is_cv(&self) -> bool {
        matches!(
            self.family,
            Family::Bethe {
                regime: RegimeSpec::Cv,
                ..
            }
        )
    }

    pub fn config(&self, classes: usize, seed: u64, cv_grid: &[f64]) -> Result<TrainConfig> {
        let task = self.task(classes)?;
        let mut cfg = match self.family {
            Family::Bethe { variant, regime } => TrainConfig {
                regime: match regime {
                    RegimeSpec::Eb => Regime::Eb,
                    RegimeSpec::Cv => Regime::Cv(cv_grid.to_vec()),
                    RegimeSpec::Fixed(a) => Regime::Fixed(a),
                },
                fixed_sigma: self.fixed_sigma,
                ..TrainConfig::new(task, variant, seed)
            },
            Family::Map | Family::Ensemble => TrainConfig {
                method: Method::Map,
                ..TrainConfig::map(task, seed)
            },
        };
        cfg.depth = self.depth;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_forms() {
        let m: MethodSpec = "bethe-v3-eb".parse().unwrap();
        assert_eq!(
            m.family,
            Family::Bethe {
                variant: Variant::V3,
                regime: RegimeSpec::Eb
            }
        );
        assert_eq!((m.depth, m.fixed_sigma, m.head), (1, false, Head::Auto));
        let m: MethodSpec = "bethe-v2-alpha:0.1-2l-fs".parse().unwrap();
        assert_eq!(
            m.family,
            Family::Bethe {
                variant: Variant::V2,
                regime: RegimeSpec::Fixed(0.1)
            }
        );
        assert_eq!((m.depth, m.fixed_sigma), (2, true));
        let m: MethodSpec = "ens-ord-lin".parse().unwrap();
        assert_eq!(
            (m.family, m.depth, m.head),
            (Family::Ensemble, 0, Head::Ordinal)
        );
        for bad in [
            "bethe",
            "bethe-v4-eb",
            "bethe-v1-alpha:-1",
            "map-fs",
            "map-2l-1l",
            "foo",
            "bethe-v1-eb-zz",
        ] {
            assert!(bad.parse::<MethodSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn tasks_follow_the_data() {
        let m: MethodSpec = "bethe-v1-eb".parse().unwrap();
        assert_eq!(m.task(0).unwrap(), Task::Regression);
        assert_eq!(m.task(2).unwrap(), Task::Binary);
        assert_eq!(m.task(3).unwrap(), Task::Ova { classes: 3 });
        let o: MethodSpec = "bethe-v3-cv-ord".parse().unwrap();
        assert_eq!(o.task(3).unwrap(), Task::Ordinal { classes: 3 });
        assert!(o.task(0).is_err());
        let fs: MethodSpec = "bethe-v3-eb-fs".parse().unwrap();
        assert!(fs.task(2).is_err());
        let cfg = o.config(3, 7, &[0.5, 2.0]).unwrap();
        assert_eq!(cfg.regime, Regime::Cv(vec![0.5, 2.0]));
        assert_eq!(cfg.seed, 7);
    }
}
