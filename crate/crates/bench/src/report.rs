//! Aggregation of run records: per-dataset tables with significance marks
//! and the EB-vs-CV difference table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::Result;

use crate::method::{Family, MethodSpec, RegimeSpec};
use crate::records::{num, RunRecord};
use crate::stats::paired_t_test;

pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mark {
    /// Lowest mean NLL (exact ties share it).
    Best,
    /// Not significantly worse than the best (paired p ≥ 0.05).
    Tied,
    Plain,
    /// Fewer than two paired seeds against the best.
    Untested,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub dataset: String,
    pub method: String,
    pub n: usize,
    pub mean_nll: f64,
    pub se_nll: f64,
    pub p_vs_best: f64,
    pub mark: Mark,
    pub mean_rmse: f64,
    pub mean_acc: f64,
    pub mean_calib_err: f64,
    pub mean_ece: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    /// Present cells only, dataset-major.
    pub cells: Vec<Cell>,
    pub warnings: Vec<String>,
}

fn first_seen<'a>(it: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in it {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// Successful rows of one (dataset, method) keyed by seed.
fn by_seed<'a>(
    records: &'a [RunRecord],
    dataset: &str,
    method: &str,
) -> BTreeMap<u64, &'a RunRecord> {
    records
        .iter()
        .filter(|r| r.dataset == dataset && r.method == method && r.is_ok() && r.nll.is_finite())
        .map(|r| (r.seed, r))
        .collect()
}

fn paired(a: &BTreeMap<u64, &RunRecord>, b: &BTreeMap<u64, &RunRecord>) -> (Vec<f64>, Vec<f64>) {
    a.iter()
        .filter_map(|(s, ra)| b.get(s).map(|rb| (ra.nll, rb.nll)))
        .unzip()
}

pub fn build_report(records: &[RunRecord]) -> Result<Report> {
    let mut rep = Report {
        datasets: first_seen(records.iter().map(|r| r.dataset.as_str())),
        methods: first_seen(records.iter().map(|r| r.method.as_str())),
        ..Report::default()
    };
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        rep.warnings
            .push(format!("{failed} failed run(s) excluded"));
    }
    for d in &rep.datasets {
        let rows: Vec<(String, BTreeMap<u64, &RunRecord>)> = rep
            .methods
            .iter()
            .map(|m| (m.clone(), by_seed(records, d, m)))
            .filter(|(m, rows)| {
                if rows.is_empty() {
                    rep.warnings
                        .push(format!("no successful runs for {d} / {m}; cell left blank"));
                }
                !rows.is_empty()
            })
            .collect();
        let means: Vec<f64> = rows
            .iter()
            .map(|(_, r)| r.values().map(|x| x.nll).sum::<f64>() / r.len() as f64)
            .collect();
        let Some(best) = (0..rows.len()).min_by(|&a, &b| means[a].total_cmp(&means[b])) else {
            continue;
        };
        for (i, (m, r)) in rows.iter().enumerate() {
            let nll: Vec<f64> = r.values().map(|x| x.nll).collect();
            let n = nll.len();
            let se = if n > 1 {
                let var = nll.iter().map(|v| (v - means[i]).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                f64::NAN
            };
            let (mark, p) = if means[i] == means[best] {
                (Mark::Best, f64::NAN)
            } else {
                let (a, b) = paired(r, &rows[best].1);
                if a.len() < 2 {
                    rep.warnings.push(format!(
                        "{d} / {m}: fewer than two seeds paired with the best; no test"
                    ));
                    (Mark::Untested, f64::NAN)
                } else {
                    let p = paired_t_test(&a, &b)?.p_two_sided;
                    (
                        if p >= SIGNIFICANCE {
                            Mark::Tied
                        } else {
                            Mark::Plain
                        },
                        p,
                    )
                }
            };
            let col =
                |f: fn(&RunRecord) -> f64| mean(&r.values().map(|x| f(x)).collect::<Vec<_>>());
            rep.cells.push(Cell {
                dataset: d.clone(),
                method: m.clone(),
                n,
                mean_nll: means[i],
                se_nll: se,
                p_vs_best: p,
                mark,
                mean_rmse: col(|x| x.rmse),
                mean_acc: col(|x| x.acc),
                mean_calib_err: col(|x| x.calib_err),
                mean_ece: col(|x| x.ece),
            });
        }
    }
    Ok(rep)
}

impl Report {
    pub fn cell(&self, dataset: &str, method: &str) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.dataset == dataset && c.method == method)
    }

    pub fn markdown(&self) -> String {
        let mut s = String::from("Mean test NLL ± standard error over seeds. **bold**: best; *italic*: not significantly worse than the best (paired t-test, p ≥ 0.05).\n\n");
        let _ = writeln!(s, "| dataset | {} |", self.methods.join(" | "));
        let _ = writeln!(s, "|---|{}", "---|".repeat(self.methods.len()));
        for d in &self.datasets {
            let cells: Vec<String> = self
                .methods
                .iter()
                .map(|m| match self.cell(d, m) {
                    None => String::new(),
                    Some(c) => {
                        let v = if c.se_nll.is_finite() {
                            format!("{:.3} ± {:.3}", c.mean_nll, c.se_nll)
                        } else {
                            format!("{:.3}", c.mean_nll)
                        };
                        match c.mark {
                            Mark::Best => format!("**{v}**"),
                            Mark::Tied => format!("*{v}*"),
                            Mark::Plain | Mark::Untested => v,
                        }
                    }
                })
                .collect();
            let _ = writeln!(s, "| {d} | {} |", cells.join(" | "));
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from(
            "dataset,method,n,mean_nll,se_nll,p_vs_best,mark,mean_rmse,mean_acc,mean_calib_err,mean_ece\n",
        );
        for c in &self.cells {
            let mark = match c.mark {
                Mark::Best => "best",
                Mark::Tied => "tied",
                Mark::Plain => "",
                Mark::Untested => "untested",
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{mark},{},{},{},{}",
                c.dataset,
                c.method,
                c.n,
                num(c.mean_nll),
                num(c.se_nll),
                num(c.p_vs_best),
                num(c.mean_rmse),
                num(c.mean_acc),
                num(c.mean_calib_err),
                num(c.mean_ece)
            );
        }
        s
    }
}

/// One EB/CV method pair on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct EbCvRow {
    pub dataset: String,
    pub eb_method: String,
    pub cv_method: String,
    pub n: usize,
    /// Mean of `NLL_CV − NLL_EB` over paired seeds.
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided, in the direction of the observed sign.
    pub p_one_sided: f64,
}

impl EbCvRow {
    pub fn significant(&self) -> bool {
        self.p_one_sided < SIGNIFICANCE
    }
}

fn cv_partner(eb: &MethodSpec, methods: &[MethodSpec]) -> Option<String> {
    let Family::Bethe {
        variant,
        regime: RegimeSpec::Eb,
    } = eb.family
    else {
        return None;
    };
    methods
        .iter()
        .find(|m| {
            m.family
                == Family::Bethe {
                    variant,
                    regime: RegimeSpec::Cv,
                }
                && m.fixed_sigma == eb.fixed_sigma
                && m.depth == eb.depth
                && m.head == eb.head
        })
        .map(|m| m.name.clone())
}

/// Pairs every `bethe-*-eb*` method with the `cv` method that matches it in
/// every other respect.
pub fn eb_vs_cv(records: &[RunRecord]) -> Result<(Vec<EbCvRow>, Vec<String>)> {
    let methods: Vec<MethodSpec> = first_seen(records.iter().map(|r| r.method.as_str()))
        .iter()
        .filter_map(|m| m.parse().ok())
        .collect();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for d in first_seen(records.iter().map(|r| r.dataset.as_str())) {
        for eb in &methods {
            let Some(cv) = cv_partner(eb, &methods) else {
                continue;
            };
            let (c, e) = paired(&by_seed(records, &d, &cv), &by_seed(records, &d, &eb.name));
            if c.len() < 2 {
                warnings.push(format!(
                    "{d}: {} vs {cv} has fewer than two paired seeds",
                    eb.name
                ));
                continue;
            }
            let t = paired_t_test(&c, &e)?;
            rows.push(EbCvRow {
                dataset: d.clone(),
                eb_method: eb.name.clone(),
                cv_method: cv,
                n: t.n,
                mean_diff: t.mean_diff,
                t: t.t,
                p_one_sided: t.p_one_sided,
            });
        }
    }
    if rows.is_empty() {
        warnings.push("no EB/CV method pairs with paired results".into());
    }
    Ok((rows, warnings))
}

pub fn eb_vs_cv_markdown(rows: &[EbCvRow]) -> String {
    let mut s = String::from(
        "Mean test-NLL difference CV − EB over paired seeds (negative favours CV). \
         p is a one-sided paired t-test in the direction of the observed sign \
         (H0: no difference); † marks p < 0.05.\n\n\
         | dataset | EB method | CV method | n | mean diff | t | p |\n|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:+.4}{} | {:.3} | {:.3} |",
            r.dataset,
            r.eb_method,
            r.cv_method,
            r.n,
            r.mean_diff,
            if r.significant() { " †" } else { "" },
            r.t,
            r.p_one_sided
        );
    }
    s
}

pub fn eb_vs_cv_csv(rows: &[EbCvRow]) -> String {
    let mut s = String::from("dataset,eb_method,cv_method,n,mean_diff,t,p_one_sided,significant\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.dataset,
            r.eb_method,
            r.cv_method,
            r.n,
            num(r.mean_diff),
            num(r.t),
            num(r.p_one_sided),
            u8::from(r.significant())
        );
    }
    s
}
