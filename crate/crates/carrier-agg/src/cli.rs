//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on a usage or input error, 2 when a run fails
//! numerically (no convergence, or a failed oracle comparison).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use carrier_agg_core::{CarrierId, EngineConfig, ProtocolError, SweepSpec, UtilityFunction};

use crate::file::{load_document, paper_document, to_toml, Document};
use crate::output::write_results;
use crate::sweep::{run_point, run_sweep, verify_point, PointError, RunRecord, ORACLE_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "carrier-agg", version, about = "Rate allocation over aggregated carriers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the bidding protocol once.
    Run(RunArgs),
    /// Run the protocol over a range of capacities of one carrier.
    Sweep(SweepArgs),
    /// Run the protocol and the central solver and compare them.
    Verify(VerifyArgs),
    /// Print samples of a utility function as CSV.
    UtilityCurve(CurveArgs),
    /// Write the 18-UE two-carrier reference scenario.
    PaperScenario(PaperArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Bid-stability tolerance [default: the file's, else 1e-3]
    #[arg(long)]
    pub delta: Option<f64>,
    /// [default: the file's, else 10000]
    #[arg(long)]
    pub max_rounds: Option<u32>,
    /// [default: the file's, else 0.7]
    #[arg(long)]
    pub damping: Option<f64>,
    /// Directory for rates.csv, prices.csv and summary.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Carrier whose capacity is swept [default: from the file's [sweep]]
    #[arg(long)]
    pub carrier: Option<u32>,
    #[arg(long)]
    pub from: Option<f64>,
    #[arg(long)]
    pub to: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Also solve every point centrally and compare.
    #[arg(long)]
    pub verify: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Central solver tolerance.
    #[arg(long, default_value_t = ORACLE_TOL)]
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurveType {
    Sig,
    Log,
}

#[derive(Debug, clap::Args)]
pub struct CurveArgs {
    #[arg(long = "type", value_enum)]
    pub kind: CurveType,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub rmax: Option<f64>,
    /// Upper end of the sampled range [default: 2b, or rmax]
    #[arg(long)]
    pub max: Option<f64>,
    /// Number of intervals; N+1 points are printed.
    #[arg(long, default_value_t = 100)]
    pub samples: u32,
}

#[derive(Debug, clap::Args)]
pub struct PaperArgs {
    /// Capacity of carrier 1.
    #[arg(long, default_value_t = 300.0)]
    pub r1: f64,
    /// Output file [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().ansi().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::UtilityCurve(a) => cmd_utility_curve(a, out),
        Command::PaperScenario(a) => cmd_paper_scenario(a, out),
    };
    match result {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

struct Failure(i32, String);

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure(EXIT_USAGE, msg.to_string())
}

fn io_failure(e: std::io::Error) -> Failure {
    usage(format!("cannot write output: {e}"))
}

fn load(path: &std::path::Path) -> Result<Document, Failure> {
    load_document(path).map_err(usage)
}

fn engine_config(doc: &Document) -> EngineConfig {
    doc.engine.unwrap_or_default()
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Exit code for a record whose protocol run did not even produce an
/// allocation: bad configuration is a usage error, anything else numeric.
fn outcome_failure(e: &PointError) -> Failure {
    match e {
        PointError::Protocol(ProtocolError::Config(_)) => usage(e),
        _ => Failure(EXIT_NUMERIC, e.to_string()),
    }
}

fn cmd_run(a: RunArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let doc = load(&a.scenario)?;
    let mut config = engine_config(&doc);
    config.delta = a.delta.unwrap_or(config.delta);
    config.max_rounds = a.max_rounds.unwrap_or(config.max_rounds);
    config.damping = a.damping.unwrap_or(config.damping);
    config.validate().map_err(usage)?;

    let record = run_point(&doc.scenario, &config, false, None);
    if let Some(dir) = &a.out {
        write_results(std::slice::from_ref(&record), dir).map_err(usage)?;
    }
    let run = record.outcome.as_ref().map_err(outcome_failure)?;
    let r = &run.allocation;
    writeln!(
        out,
        "rounds={} objective={} converged={} prices={}",
        r.rounds,
        r.objective,
        r.converged,
        join(&r.prices)
    )
    .map_err(io_failure)?;
    if r.converged {
        Ok(EXIT_OK)
    } else {
        Err(Failure(EXIT_NUMERIC, format!("no convergence within {} rounds", r.rounds)))
    }
}

fn sweep_spec(a: &SweepArgs, doc: &Document) -> Result<SweepSpec, Failure> {
    let file = doc.sweep;
    let pick = |flag: Option<f64>, from_file: Option<f64>, name: &str| {
        flag.or(from_file)
            .ok_or_else(|| usage(format!("--{name} is required when the scenario has no [sweep] section")))
    };
    let carrier = match a.carrier.map(CarrierId).or(file.map(|s| s.carrier)) {
        Some(c) => c,
        None => return Err(usage("--carrier is required when the scenario has no [sweep] section")),
    };
    let from = pick(a.from, file.map(|s| s.from), "from")?;
    let to = pick(a.to, file.map(|s| s.to), "to")?;
    let step = pick(a.step, file.map(|s| s.step), "step")?;
    let spec = SweepSpec::new(carrier, from, to, step).map_err(usage)?;
    if doc.scenario.carrier_index(carrier).is_none() {
        return Err(usage(format!("unknown carrier {carrier}")));
    }
    Ok(spec)
}

fn describe(rec: &RunRecord) -> String {
    let value = rec.sweep_value.map(|v| v.to_string()).unwrap_or_default();
    let mut line = match &rec.outcome {
        Ok(run) => format!(
            "value={value} rounds={} objective={} converged={} prices={}",
            run.allocation.rounds,
            run.allocation.objective,
            run.allocation.converged,
            join(&run.allocation.prices)
        ),
        Err(e) => format!("value={value} error={e}"),
    };
    match &rec.verification {
        Some(Ok(v)) => line.push_str(&format!(
            " objective_delta={} max_total_rel_delta={} match={}",
            v.comparison.objective_delta, v.comparison.max_total_rel_delta, v.comparison.pass
        )),
        Some(Err(e)) if rec.outcome.is_ok() => line.push_str(&format!(" oracle_error={e}")),
        _ => {}
    }
    line
}

fn cmd_sweep(a: SweepArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let doc = load(&a.scenario)?;
    let spec = sweep_spec(&a, &doc)?;
    let config = engine_config(&doc);
    let records = run_sweep(&doc.scenario, &spec, &config, a.verify).map_err(usage)?;
    for rec in &records {
        writeln!(out, "{}", describe(rec)).map_err(io_failure)?;
    }
    if let Some(dir) = &a.out {
        write_results(&records, dir).map_err(usage)?;
    }
    let failing: Vec<String> = records
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.sweep_value.unwrap_or(f64::NAN).to_string())
        .collect();
    if failing.is_empty() {
        Ok(EXIT_OK)
    } else {
        Err(Failure(
            EXIT_NUMERIC,
            format!("{} of {} sweep points failed: {}", failing.len(), records.len(), failing.join(", ")),
        ))
    }
}

fn cmd_verify(a: VerifyArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    if !(a.tol.is_finite() && a.tol > 0.0) {
        return Err(usage(format!("--tol {} must be positive", a.tol)));
    }
    let doc = load(&a.scenario)?;
    let config = engine_config(&doc);
    let record = verify_point(&doc.scenario, &config, a.tol);
    let run = record.outcome.as_ref().map_err(outcome_failure)?;
    let v = match &record.verification {
        Some(Ok(v)) => v,
        Some(Err(e)) => return Err(Failure(EXIT_NUMERIC, e.to_string())),
        None => unreachable!("verify_point always runs the oracle"),
    };
    let p = &run.allocation;
    let lines = [
        format!(
            "protocol rounds={} objective={} converged={} prices={} kkt_stationarity={} kkt_pass={}",
            p.rounds,
            p.objective,
            p.converged,
            join(&p.prices),
            run.kkt.stationarity,
            run.kkt.pass
        ),
        format!(
            "oracle iterations={} objective={} prices={} kkt_stationarity={} kkt_pass={}",
            v.oracle.iterations,
            v.oracle.objective,
            join(&v.oracle.prices),
            v.oracle.kkt.stationarity,
            v.oracle.kkt.pass
        ),
        format!(
            "comparison objective_delta={} max_total_rel_delta={} match={}",
            v.comparison.objective_delta, v.comparison.max_total_rel_delta, v.comparison.pass
        ),
    ];
    for line in lines {
        writeln!(out, "{line}").map_err(io_failure)?;
    }
    if p.converged && run.kkt.pass && v.oracle.kkt.pass && v.comparison.pass {
        Ok(EXIT_OK)
    } else {
        Err(Failure(EXIT_NUMERIC, "verification failed".into()))
    }
}

fn cmd_utility_curve(a: CurveArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| usage(format!("--{name} is required for this --type")));
    let (u, default_max) = match a.kind {
        CurveType::Sig => {
            let (x, y) = (need(a.a, "a")?, need(a.b, "b")?);
            (UtilityFunction::sigmoidal(x, y).map_err(usage)?, 2.0 * y)
        }
        CurveType::Log => {
            let (k, rmax) = (need(a.k, "k")?, need(a.rmax, "rmax")?);
            (UtilityFunction::logarithmic(k, rmax).map_err(usage)?, rmax)
        }
    };
    let max = a.max.unwrap_or(default_max);
    if !(max.is_finite() && max > 0.0) {
        return Err(usage(format!("--max {max} must be positive")));
    }
    if a.samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }
    let n = f64::from(a.samples);
    let mut text = String::from("r,utility\n");
    for j in 0..=a.samples {
        let r = max * f64::from(j) / n;
        let value = u.evaluate(r).map_err(usage)?;
        text.push_str(&format!("{r},{value}\n"));
    }
    out.write_all(text.as_bytes()).map_err(io_failure)?;
    Ok(EXIT_OK)
}

fn cmd_paper_scenario(a: PaperArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let text = to_toml(&paper_document(a.r1).map_err(usage)?);
    match &a.out {
        Some(path) => std::fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        None => out.write_all(text.as_bytes()).map_err(io_failure)?,
    }
    Ok(EXIT_OK)
}
