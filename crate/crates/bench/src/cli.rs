//! Command-line interface.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::kv::parse_seeds;
use crate::moons::{two_moons, DEFAULT_RESOLUTION};
use crate::plan::Plan;
use crate::records::{self, RunRecord};
use crate::report::{build_report, eb_vs_cv, eb_vs_cv_csv, eb_vs_cv_markdown};
use crate::runner::{cmd_run, RunFiles};

#[derive(Debug, Parser)]
#[command(
    name = "bethe-bench",
    version,
    about = "Bethe last-layer benchmark runner"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and evaluate every (dataset, method, seed) cell of a plan.
    Run(PlanArgs),
    /// Aggregate a records file into markdown and CSV tables.
    Report {
        /// records.csv written by `run`.
        #[arg(long)]
        records: PathBuf,
        /// Output directory (default: next to the records file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a plan (or read existing records) and compare EB against CV.
    EbVsCv {
        #[command(flatten)]
        plan: OptionalPlanArgs,
        /// Existing records.csv; skips training.
        #[arg(long, conflicts_with = "plan")]
        records: Option<PathBuf>,
    },
    /// Emit the two-moons MAP vs Bethe grid.
    TwoMoons {
        #[arg(long, default_value = "two_moons")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the numerical verification suites.
    Verify {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// Overrides the plan's seeds: `a..b` (inclusive) or a comma list.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Worker threads; 1 keeps the log in plan order.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Overrides the plan's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptionalPlanArgs {
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, requires = "plan")]
    pub seeds: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn load_plan(path: &Path, seeds: Option<&str>, out: Option<&Path>) -> Result<Plan> {
    let mut plan = Plan::load(path)?;
    if let Some(s) = seeds {
        plan.seeds = parse_seeds(s)?;
    }
    if let Some(o) = out {
        plan.out = o.to_path_buf();
    }
    plan.validate()?;
    Ok(plan)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(plan: &Plan, jobs: usize) -> Result<Vec<RunRecord>> {
    let recs = cmd_run(plan, jobs)?;
    let failed = recs.iter().filter(|r| !r.is_ok()).count();
    eprintln!(
        "{} runs, {failed} failed; records in {}",
        recs.len(),
        RunFiles::new(&plan.out).records.display()
    );
    Ok(recs)
}

fn report(recs: &[RunRecord], out: &Path) -> Result<()> {
    let rep = build_report(recs)?;
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    let md = rep.markdown();
    write(&out.join("report.md"), &md)?;
    write(&out.join("report.csv"), &rep.csv())?;
    print!("{md}");
    Ok(())
}

fn compare(recs: &[RunRecord], out: &Path) -> Result<()> {
    let (rows, warnings) = eb_vs_cv(recs)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let md = eb_vs_cv_markdown(&rows);
    write(&out.join("eb_vs_cv.md"), &md)?;
    write(&out.join("eb_vs_cv.csv"), &eb_vs_cv_csv(&rows))?;
    print!("{md}");
    Ok(())
}

/// Runs one parsed command; `Ok(false)` means a verification failure.
pub fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(a) => {
            let plan = load_plan(&a.plan, a.seeds.as_deref(), a.out.as_deref())?;
            run(&plan, a.jobs)?;
        }
        Command::Report { records: path, out } => {
            let recs = records::load(&path)?;
            let out = out.unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf());
            report(&recs, &out)?;
        }
        Command::EbVsCv {
            plan: args,
            records: path,
        } => match (args.plan, path) {
            (_, Some(path)) => {
                let recs = records::load(&path)?;
                let out = args
                    .out
                    .unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf());
                compare(&recs, &out)?;
            }
            (Some(p), None) => {
                let plan = load_plan(&p, args.seeds.as_deref(), args.out.as_deref())?;
                let recs = run(&plan, args.jobs)?;
                compare(&recs, &plan.out)?;
            }
            (None, None) => anyhow::bail!("eb-vs-cv needs --plan or --records"),
        },
        Command::TwoMoons {
            out,
            resolution,
            seed,
        } => {
            let g = two_moons(resolution, seed)?;
            let path = out.join("grid.csv");
            write(&path, &g.csv())?;
            eprintln!(
                "{} lattice points written to {}",
                g.points.len(),
                path.display()
            );
        }
        Command::Verify { seed } => {
            let reports = bethe_core::checks::run_all(seed);
            for r in &reports {
                println!("{r}");
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            println!("{} checks, {failed} failed", reports.len());
            return Ok(failed == 0);
        }
    }
    Ok(true)
}
