//! Scenario files, capacity sweeps, CSV results and the command-line tool
//! built on `carrier-agg-core`.

pub mod cli;
pub mod file;
pub mod output;
pub mod sweep;

pub use file::{load_document, load_scenario, paper_document, parse_document, save_document, save_scenario, to_toml, Document};
pub use output::{write_results, OutputError};
pub use sweep::{run_point, run_sweep, RunRecord};
