//! Text checkpoints of a [`Model`].
//!
//! ```text
//! # bethe-checkpoint v1
//! task = ova:3            (regression | binary | ova:K | ordinal:K)
//! variant = v3
//! input_dim = 4
//! depth = 1
//! width = 50
//! epsilon = 1e-4
//! [backbone.0] 4 50
//! <one line per row, values in exponent notation>
//! [head.0.mu] 50 1
//! ...
//! ```
//!
//! Every parameter key of the model appears exactly once. Values round-trip
//! bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use bethe_core::data::seeded_rng;
use bethe_core::model::{Model, ParamKey, Task, DEFAULT_WIDTH};
use bethe_core::tensor::Matrix;

pub const HEADER: &str = "# bethe-checkpoint v1";

fn task_text(task: Task) -> String {
    match task {
        Task::Regression | Task::Binary => task.name().to_string(),
        Task::Ova { classes } | Task::Ordinal { classes } => format!("{}:{classes}", task.name()),
    }
}

fn parse_task(s: &str) -> Result<Task> {
    let (name, k) = match s.split_once(':') {
        Some((n, k)) => (
            n,
            Some(
                k.parse::<usize>()
                    .map_err(|_| anyhow!("bad class count in task '{s}'"))?,
            ),
        ),
        None => (s, None),
    };
    Ok(match (name, k) {
        ("regression", None) => Task::Regression,
        ("binary", None) => Task::Binary,
        ("ova", Some(classes)) => Task::Ova { classes },
        ("ordinal", Some(classes)) => Task::Ordinal { classes },
        _ => bail!("unknown task '{s}'"),
    })
}

pub fn to_string(model: &Model) -> Result<String> {
    let width = model
        .backbone
        .layers
        .first()
        .map_or(DEFAULT_WIDTH, Matrix::cols);
    let mut out = String::new();
    writeln!(out, "{HEADER}")?;
    writeln!(out, "task = {}", task_text(model.task))?;
    writeln!(out, "variant = {}", model.variant())?;
    writeln!(out, "input_dim = {}", model.input_dim)?;
    writeln!(out, "depth = {}", model.backbone.depth())?;
    writeln!(out, "width = {width}")?;
    writeln!(out, "epsilon = {:e}", model.heads[0].epsilon)?;
    for key in model.keys() {
        let m = model.get(key)?;
        writeln!(out, "[{key}] {} {}", m.rows(), m.cols())?;
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
    }
    Ok(out)
}

pub fn from_str(text: &str) -> Result<Model> {
    let mut lines = text.lines().enumerate().peekable();
    match lines.next() {
        Some((_, l)) if l.trim() == HEADER => {}
        _ => bail!("missing checkpoint header '{HEADER}'"),
    }
    let mut header = std::collections::BTreeMap::new();
    while let Some((_, l)) = lines.peek() {
        if l.starts_with('[') {
            break;
        }
        let (no, l) = lines.next().expect("peeked");
        if l.trim().is_empty() {
            continue;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value", no + 1))?;
        header.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut field = |k: &str| {
        header
            .remove(k)
            .ok_or_else(|| anyhow!("checkpoint lacks '{k}'"))
    };
    let task = parse_task(&field("task")?)?;
    let variant = field("variant")?.parse().map_err(|e| anyhow!("{e}"))?;
    let input_dim: usize = field("input_dim")?.parse()?;
    let depth: usize = field("depth")?.parse()?;
    let width: usize = field("width")?.parse()?;
    let epsilon: f64 = field("epsilon")?.parse()?;
    if let Some(k) = header.keys().next() {
        bail!("unknown checkpoint field '{k}'");
    }
    let mut model = Model::init(
        task,
        variant,
        input_dim,
        depth,
        width,
        1.0,
        &mut seeded_rng(0, 0),
    )
    .map_err(|e| anyhow!("{e}"))?;
    for h in &mut model.heads {
        h.epsilon = epsilon;
    }
    let mut missing = model.keys();
    while let Some((no, l)) = lines.next() {
        if l.trim().is_empty() {
            continue;
        }
        let bad = || anyhow!("line {}: expected '[key] rows cols'", no + 1);
        let (key, dims) = l
            .strip_prefix('[')
            .and_then(|r| r.split_once(']'))
            .ok_or_else(bad)?;
        let key: ParamKey = key.parse().map_err(|e| anyhow!("line {}: {e}", no + 1))?;
        let dims: Vec<usize> = dims
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let [rows, cols] = dims[..] else {
            return Err(bad());
        };
        let pos = missing
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| anyhow!("line {}: unexpected or repeated block {key}", no + 1))?;
        missing.remove(pos);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (no, row) = lines
                .next()
                .ok_or_else(|| anyhow!("block {key} is truncated"))?;
            let before = data.len();
            for v in row.split_whitespace() {
                data.push(
                    v.parse::<f64>()
                        .with_context(|| format!("line {}: bad value '{v}'", no + 1))?,
                );
            }
            if data.len() - before != cols {
                bail!("line {}: expected {cols} values", no + 1);
            }
        }
        let m = Matrix::from_vec(rows, cols, data).map_err(|e| anyhow!("{e}"))?;
        model.set(key, m).map_err(|e| anyhow!("block {key}: {e}"))?;
    }
    if let Some(k) = missing.first() {
        bail!("checkpoint lacks block {k}");
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(model)?).with_context(|| format!("writing {}", path.display()))
}

pub fn load(path: &Path) -> Result<Model> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use bethe_core::model::Variant;

    fn perturbed(task: Task, variant: Variant, depth: usize) -> Model {
        let mut rng = seeded_rng(9, 1);
        let s2 = if task == Task::Regression { 0.7 } else { 1.0 };
        let mut m = Model::init(task, variant, 3, depth, 4, s2, &mut rng).unwrap();
        for key in m.keys() {
            let v = m.get(key).unwrap().map(|x| x + 0.1 / 3.0);
            m.set(key, v).unwrap();
        }
        m.heads.iter_mut().for_each(|h| h.epsilon = 1.0 / 7.0);
        m
    }

    #[test]
    fn round_trips_every_task() {
        for (task, variant, depth) in [
            (Task::Regression, Variant::V1, 0),
            (Task::Regression, Variant::V3, 2),
            (Task::Binary, Variant::V2, 1),
            (Task::Ova { classes: 3 }, Variant::V3, 1),
            (Task::Ordinal { classes: 4 }, Variant::V2, 1),
            (Task::Ordinal { classes: 2 }, Variant::V1, 1),
        ] {
            let m = perturbed(task, variant, depth);
            let text = to_string(&m).unwrap();
            assert_eq!(from_str(&text).unwrap(), m, "{text}");
        }
    }

    #[test]
    fn rejects_damaged_files() {
        let text = to_string(&perturbed(Task::Binary, Variant::V3, 1)).unwrap();
        let cases = [
            text.replacen(HEADER, "# other", 1),
            text.replacen("[head.0.mu]", "[head.0.nu]", 1),
            text.replacen("task = binary", "task = ova", 1),
            text.replacen("width = 4\n", "width = 4\ncolour = red\n", 1),
            text.lines()
                .take(text.lines().count() - 1)
                .collect::<Vec<_>>()
                .join("\n"),
            format!("{text}[head.0.mu] 4 1\n0\n0\n0\n0\n"),
        ];
        for bad in cases {
            assert!(from_str(&bad).is_err(), "{bad}");
        }
    }
}
