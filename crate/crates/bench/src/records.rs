//! Result rows written by `run` and read back by `report` / `eb-vs-cv`.
//!
//! The file starts with a schema comment line followed by a CSV header.
//! Readers skip `#` lines and ignore columns they do not know; missing
//! numeric values are empty cells and read back as NaN.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

pub const SCHEMA: &str = "# bethe-bench records v1";

pub const COLUMNS: [&str; 19] = [
    "dataset",
    "method",
    "seed",
    "status",
    "nll",
    "rmse",
    "acc",
    "calib_err",
    "ece",
    "alpha",
    "sigma_obs_sq",
    "oracle_test_nll",
    "selected_alpha",
    "best_step",
    "steps",
    "stop",
    "alpha_runaway",
    "variance_starvation",
    "error",
];

#[derive(Clone, Debug, PartialEq)]
pub enum Status {
    Ok,
    Failed(String),
}

/// One (dataset, method, seed) cell. Metrics that do not apply are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub status: Status,
    pub nll: f64,
    pub rmse: f64,
    pub acc: f64,
    pub calib_err: f64,
    pub ece: f64,
    pub alpha: f64,
    pub sigma_obs_sq: f64,
    pub oracle_test_nll: f64,
    pub selected_alpha: f64,
    pub best_step: Option<usize>,
    pub steps: Option<usize>,
    pub stop: String,
    pub alpha_runaway: bool,
    pub variance_starvation: bool,
}

impl RunRecord {
    pub fn failed(dataset: &str, method: &str, seed: u64, error: String) -> Self {
        RunRecord {
            dataset: dataset.into(),
            method: method.into(),
            seed,
            status: Status::Failed(error),
            nll: f64::NAN,
            rmse: f64::NAN,
            acc: f64::NAN,
            calib_err: f64::NAN,
            ece: f64::NAN,
            alpha: f64::NAN,
            sigma_obs_sq: f64::NAN,
            oracle_test_nll: f64::NAN,
            selected_alpha: f64::NAN,
            best_step: None,
            steps: None,
            stop: String::new(),
            alpha_runaway: false,
            variance_starvation: false,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    fn cells(&self) -> Vec<String> {
        let (status, error) = match &self.status {
            Status::Ok => ("ok".to_string(), String::new()),
            Status::Failed(e) => ("failed".to_string(), e.replace(['\n', '\r'], " ")),
        };
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        vec![
            self.dataset.clone(),
            self.method.clone(),
            self.seed.to_string(),
            status,
            num(self.nll),
            num(self.rmse),
            num(self.acc),
            num(self.calib_err),
            num(self.ece),
            num(self.alpha),
            num(self.sigma_obs_sq),
            num(self.oracle_test_nll),
            num(self.selected_alpha),
            opt(self.best_step),
            opt(self.steps),
            self.stop.clone(),
            u8::from(self.alpha_runaway).to_string(),
            u8::from(self.variance_starvation).to_string(),
            error,
        ]
    }
}

/// Shortest round-trip text; NaN becomes an empty cell.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn write_records<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut out = out;
    writeln!(out, "{SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in records {
        w.write_record(r.cells())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    for required in ["dataset", "method", "seed", "nll"] {
        if col(required).is_none() {
            bail!("records lack the '{required}' column");
        }
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let get = |name: &str| col(name).and_then(|c| row.get(c)).unwrap_or("");
        let f = |name: &str| -> Result<f64> {
            let s = get(name);
            if s.is_empty() {
                Ok(f64::NAN)
            } else {
                s.parse()
                    .map_err(|_| anyhow!("row {line}: bad {name} '{s}'"))
            }
        };
        let u = |name: &str| -> Result<Option<usize>> {
            let s = get(name);
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| anyhow!("row {line}: bad {name} '{s}'"))
            }
        };
        let status = match get("status") {
            "" | "ok" => Status::Ok,
            "failed" => Status::Failed(get("error").to_string()),
            s => bail!("row {line}: unknown status '{s}'"),
        };
        out.push(RunRecord {
            dataset: get("dataset").to_string(),
            method: get("method").to_string(),
            seed: get("seed")
                .parse()
                .with_context(|| format!("row {line}: bad seed"))?,
            status,
            nll: f("nll")?,
            rmse: f("rmse")?,
            acc: f("acc")?,
            calib_err: f("calib_err")?,
            ece: f("ece")?,
            alpha: f("alpha")?,
            sigma_obs_sq: f("sigma_obs_sq")?,
            oracle_test_nll: f("oracle_test_nll")?,
            selected_alpha: f("selected_alpha")?,
            best_step: u("best_step")?,
            steps: u("steps")?,
            stop: get("stop").to_string(),
            alpha_runaway: get("alpha_runaway") == "1",
            variance_starvation: get("variance_starvation") == "1",
        });
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<RunRecord>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_records(f).with_context(|| format!("reading {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<RunRecord> {
        let mut a = RunRecord::failed(
            "boston",
            "bethe-v2-alpha:0.1",
            5,
            "diverged at step 3,\nalpha=[1e9]".into(),
        );
        a.steps = Some(3);
        let mut b = RunRecord::failed("iris", "map", 6, String::new());
        b.status = Status::Ok;
        b.nll = 0.1 + 0.2;
        b.acc = 1.0 / 3.0;
        b.ece = 1e-300;
        b.best_step = Some(17);
        b.stop = "early".into();
        b.alpha_runaway = true;
        vec![a, b]
    }

    #[test]
    fn round_trip() {
        let mut buf = Vec::new();
        write_records(&mut buf, &sample()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(SCHEMA));
        let back = read_records(&buf[..]).unwrap();
        let mut want = sample();
        want[0].status = Status::Failed("diverged at step 3, alpha=[1e9]".into());
        assert_eq!(format!("{back:?}"), format!("{want:?}"));
    }

    #[test]
    fn tolerates_extra_and_missing_columns() {
        let text = "# bethe-bench records v9\nseed,method,dataset,nll,future\n5,map,d,1.5,zzz\n";
        let r = read_records(text.as_bytes()).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].is_ok() && r[0].nll == 1.5 && r[0].rmse.is_nan());
        assert!(read_records("seed,method\n1,map\n".as_bytes()).is_err());
    }
}
