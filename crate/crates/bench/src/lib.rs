//! Benchmark harness around `bethe-core`: dataset and plan files, CSV
//! loading, checkpoints, result records, statistics and the CLI commands.

pub mod checkpoint;
pub mod cli;
pub mod csvio;
pub mod dataset;
pub mod kv;
pub mod method;
pub mod moons;
pub mod plan;
pub mod records;
pub mod report;
pub mod runner;
pub mod stats;
