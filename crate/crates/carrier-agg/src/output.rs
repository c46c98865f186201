//! CSV result files.
//!
//! Floats are written as the shortest decimal that parses back to the same
//! value, so reading a file returns exactly the rows that were written.
//! Missing values (a single run has no sweep value, an unverified point no
//! oracle columns) are empty fields.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::sweep::RunRecord;

pub const RATES_FILE: &str = "rates.csv";
pub const PRICES_FILE: &str = "prices.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// One row per carrier and UE in its range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub sweep_value: Option<f64>,
    pub carrier_id: u32,
    pub ue_id: u32,
    pub rate: f64,
    pub bid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceRow {
    pub sweep_value: Option<f64>,
    pub carrier_id: u32,
    pub price: f64,
    pub rounds: u32,
    pub converged: bool,
}

/// One row per record. Protocol columns are empty when the run failed
/// outright; oracle columns when it was not verified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_value: Option<f64>,
    pub rounds: Option<u32>,
    pub converged: Option<bool>,
    pub objective: Option<f64>,
    pub stationarity: Option<f64>,
    pub complementary_slackness: Option<f64>,
    pub primal_infeasibility: Option<f64>,
    pub kkt_pass: Option<bool>,
    pub oracle_objective: Option<f64>,
    pub objective_delta: Option<f64>,
    pub max_total_rel_delta: Option<f64>,
    pub comparison_pass: Option<bool>,
    pub error: String,
}

pub fn rate_rows(records: &[RunRecord]) -> Vec<RateRow> {
    let mut rows = Vec::new();
    for rec in records {
        let Ok(run) = &rec.outcome else { continue };
        let a = &run.allocation;
        for (l, c) in rec.scenario.carriers().iter().enumerate() {
            for (i, ue) in rec.scenario.ues().iter().enumerate() {
                if ue.reachable.contains(&c.id) {
                    rows.push(RateRow {
                        sweep_value: rec.sweep_value,
                        carrier_id: c.id.0,
                        ue_id: ue.id.0,
                        rate: a.rates.get(l, i),
                        bid: a.bids.get(l, i),
                    });
                }
            }
        }
    }
    rows
}

pub fn price_rows(records: &[RunRecord]) -> Vec<PriceRow> {
    let mut rows = Vec::new();
    for rec in records {
        let Ok(run) = &rec.outcome else { continue };
        let a = &run.allocation;
        for (c, &price) in rec.scenario.carriers().iter().zip(&a.prices) {
            rows.push(PriceRow {
                sweep_value: rec.sweep_value,
                carrier_id: c.id.0,
                price,
                rounds: a.rounds,
                converged: a.converged,
            });
        }
    }
    rows
}

pub fn summary_rows(records: &[RunRecord]) -> Vec<SummaryRow> {
    records
        .iter()
        .map(|rec| {
            let mut row = SummaryRow {
                sweep_value: rec.sweep_value,
                rounds: None,
                converged: None,
                objective: None,
                stationarity: None,
                complementary_slackness: None,
                primal_infeasibility: None,
                kkt_pass: None,
                oracle_objective: None,
                objective_delta: None,
                max_total_rel_delta: None,
                comparison_pass: None,
                error: String::new(),
            };
            match &rec.outcome {
                Ok(run) => {
                    row.rounds = Some(run.allocation.rounds);
                    row.converged = Some(run.allocation.converged);
                    row.objective = Some(run.allocation.objective);
                    row.stationarity = Some(run.kkt.stationarity);
                    row.complementary_slackness = Some(run.kkt.complementary_slackness);
                    row.primal_infeasibility = Some(run.kkt.primal_infeasibility);
                    row.kkt_pass = Some(run.kkt.pass);
                }
                Err(e) => row.error = e.to_string(),
            }
            match &rec.verification {
                Some(Ok(v)) => {
                    row.oracle_objective = Some(v.oracle.objective);
                    row.objective_delta = Some(v.comparison.objective_delta);
                    row.max_total_rel_delta = Some(v.comparison.max_total_rel_delta);
                    row.comparison_pass = Some(v.comparison.pass);
                }
                Some(Err(e)) if row.error.is_empty() => row.error = e.to_string(),
                _ => {}
            }
            row
        })
        .collect()
}

#[derive(Debug)]
pub enum OutputError {
    Io { path: PathBuf, source: io::Error },
    Csv { path: PathBuf, source: csv::Error },
}

impl fmt::Display for OutputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutputError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            OutputError::Csv { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for OutputError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            OutputError::Io { source, .. } => Some(source),
            OutputError::Csv { source, .. } => Some(source),
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, headers: &[&str], rows: &[T]) -> Result<(), OutputError> {
    let csv_err = |source| OutputError::Csv { path: path.to_owned(), source };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    // Written by hand so an empty file still gets its header.
    w.write_record(headers).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| OutputError::Io { path: path.to_owned(), source })
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, OutputError> {
    let csv_err = |source| OutputError::Csv { path: path.to_owned(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err)
}

pub const RATES_HEADER: &[&str] = &["sweep_value", "carrier_id", "ue_id", "rate", "bid"];
pub const PRICES_HEADER: &[&str] = &["sweep_value", "carrier_id", "price", "rounds", "converged"];
pub const SUMMARY_HEADER: &[&str] = &[
    "sweep_value",
    "rounds",
    "converged",
    "objective",
    "stationarity",
    "complementary_slackness",
    "primal_infeasibility",
    "kkt_pass",
    "oracle_objective",
    "objective_delta",
    "max_total_rel_delta",
    "comparison_pass",
    "error",
];

/// Writes `rates.csv`, `prices.csv` and `summary.csv` into `out_dir`,
/// creating it if needed.
pub fn write_results(records: &[RunRecord], out_dir: &Path) -> Result<(), OutputError> {
    fs::create_dir_all(out_dir).map_err(|source| OutputError::Io { path: out_dir.to_owned(), source })?;
    write_csv(&out_dir.join(RATES_FILE), RATES_HEADER, &rate_rows(records))?;
    write_csv(&out_dir.join(PRICES_FILE), PRICES_HEADER, &price_rows(records))?;
    write_csv(&out_dir.join(SUMMARY_FILE), SUMMARY_HEADER, &summary_rows(records))
}
