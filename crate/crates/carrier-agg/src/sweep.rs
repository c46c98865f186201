//! Capacity sweeps and protocol-versus-oracle comparison.

use std::fmt;

use carrier_agg_core::oracle::OracleError;
use carrier_agg_core::scenario::ScenarioError;
use carrier_agg_core::utility::UtilityError;
use carrier_agg_core::{
    kkt_check, run, solve_central, AllocationResult, EngineConfig, KktReport, OracleSolution, ProtocolError, Scenario,
    SweepSpec,
};
use rayon::prelude::*;

/// Environment variable capping the number of sweep worker threads.
pub const THREADS_VAR: &str = "CARRIER_ALLOC_THREADS";

/// Oracle stopping tolerance used for verification.
pub const ORACLE_TOL: f64 = 1e-9;
/// Largest accepted `|protocol objective - oracle objective|`.
pub const OBJECTIVE_TOL: f64 = 1e-3;
/// Largest accepted relative difference of any UE's total rate.
pub const TOTAL_RTOL: f64 = 1e-2;
/// Protocol results are KKT-checked at this multiple of delta.
pub const KKT_DELTA_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub enum PointError {
    Scenario(ScenarioError),
    Protocol(ProtocolError),
    Oracle(OracleError),
    Kkt(UtilityError),
}

impl fmt::Display for PointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointError::Scenario(e) => write!(f, "{e}"),
            PointError::Protocol(e) => write!(f, "protocol: {e}"),
            PointError::Oracle(e) => write!(f, "oracle: {e}"),
            PointError::Kkt(e) => write!(f, "KKT check: {e}"),
        }
    }
}

impl std::error::Error for PointError {}

/// A protocol run, converged or not, with its KKT report.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub allocation: AllocationResult,
    pub kkt: KktReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    /// Protocol objective minus oracle objective.
    pub objective_delta: f64,
    /// Largest `|protocol total - oracle total| / oracle total` over UEs.
    pub max_total_rel_delta: f64,
    pub pass: bool,
}

impl Comparison {
    pub fn new(protocol: &AllocationResult, oracle: &OracleSolution) -> Self {
        let objective_delta = protocol.objective - oracle.objective;
        let max_total_rel_delta = protocol
            .totals
            .iter()
            .zip(&oracle.totals)
            .map(|(&a, &b)| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        let pass = objective_delta.abs() <= OBJECTIVE_TOL && max_total_rel_delta <= TOTAL_RTOL;
        Self { objective_delta, max_total_rel_delta, pass }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub oracle: OracleSolution,
    pub comparison: Comparison,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// Capacity of the swept carrier; `None` for a single run.
    pub sweep_value: Option<f64>,
    pub scenario: Scenario,
    pub outcome: Result<ProtocolRun, PointError>,
    /// Present iff the oracle was run.
    pub verification: Option<Result<Verification, PointError>>,
}

impl RunRecord {
    pub fn converged(&self) -> bool {
        matches!(&self.outcome, Ok(r) if r.allocation.converged)
    }

    /// Converged and, when verified, matching the oracle.
    pub fn passed(&self) -> bool {
        self.converged()
            && match &self.verification {
                None => true,
                Some(Ok(v)) => v.comparison.pass,
                Some(Err(_)) => false,
            }
    }
}

#[derive(Debug)]
pub enum SweepRunError {
    /// `CARRIER_ALLOC_THREADS` is set but is not an integer of at least 1.
    BadThreads(String),
    Pool(rayon::ThreadPoolBuildError),
}

impl fmt::Display for SweepRunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepRunError::BadThreads(v) => write!(f, "{THREADS_VAR}={v:?} is not an integer >= 1"),
            SweepRunError::Pool(e) => write!(f, "cannot start worker threads: {e}"),
        }
    }
}

impl std::error::Error for SweepRunError {}

/// Reads `CARRIER_ALLOC_THREADS`; `None` when unset.
pub fn thread_limit() -> Result<Option<usize>, SweepRunError> {
    match std::env::var(THREADS_VAR) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(v)) => Err(SweepRunError::BadThreads(v.to_string_lossy().into_owned())),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(SweepRunError::BadThreads(v)),
        },
    }
}

/// Runs the protocol on one scenario, and the oracle too when `verify` is set.
pub fn run_point(scenario: &Scenario, config: &EngineConfig, verify: bool, sweep_value: Option<f64>) -> RunRecord {
    point(scenario, config, verify.then_some(ORACLE_TOL), sweep_value)
}

/// Runs the protocol and the oracle, the latter with tolerance `oracle_tol`.
pub fn verify_point(scenario: &Scenario, config: &EngineConfig, oracle_tol: f64) -> RunRecord {
    point(scenario, config, Some(oracle_tol), None)
}

fn point(scenario: &Scenario, config: &EngineConfig, oracle_tol: Option<f64>, sweep_value: Option<f64>) -> RunRecord {
    let outcome = match run(scenario, config) {
        Ok(a) => Ok(a),
        Err(ProtocolError::NonConvergence(a)) => Ok(*a),
        Err(e) => Err(PointError::Protocol(e)),
    }
    .and_then(|allocation| {
        let kkt = kkt_check(&allocation, scenario, KKT_DELTA_FACTOR * config.delta).map_err(PointError::Kkt)?;
        Ok(ProtocolRun { allocation, kkt })
    });
    let verification = oracle_tol.map(|tol| {
        let oracle = solve_central(scenario, tol).map_err(PointError::Oracle)?;
        match &outcome {
            Ok(p) => Ok(Verification { comparison: Comparison::new(&p.allocation, &oracle), oracle }),
            Err(e) => Err(e.clone()),
        }
    });
    RunRecord { sweep_value, scenario: scenario.clone(), outcome, verification }
}

/// Runs every point of `sweep`, in parallel when more than one thread is
/// available. Records come back in sweep order; per-point failures are
/// recorded, not raised.
pub fn run_sweep(
    scenario: &Scenario,
    sweep: &SweepSpec,
    config: &EngineConfig,
    verify: bool,
) -> Result<Vec<RunRecord>, SweepRunError> {
    let threads = thread_limit()?;
    run_sweep_with_threads(scenario, sweep, config, verify, threads)
}

/// [`run_sweep`] with an explicit thread cap instead of the environment.
pub fn run_sweep_with_threads(
    scenario: &Scenario,
    sweep: &SweepSpec,
    config: &EngineConfig,
    verify: bool,
    threads: Option<usize>,
) -> Result<Vec<RunRecord>, SweepRunError> {
    let values = sweep.values();
    let job = |&value: &f64| match scenario.with_capacity(sweep.carrier, value) {
        Ok(s) => run_point(&s, config, verify, Some(value)),
        Err(e) => RunRecord {
            sweep_value: Some(value),
            scenario: scenario.clone(),
            outcome: Err(PointError::Scenario(e.clone())),
            verification: verify.then(|| Err(PointError::Scenario(e))),
        },
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(SweepRunError::Pool)?;
    Ok(pool.install(|| values.par_iter().map(job).collect()))
}
