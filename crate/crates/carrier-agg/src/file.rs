//! Scenario files.
//!
//! A scenario is stored as TOML:
//!
//! ```toml
//! name = "two-cells"
//!
//! [engine]            # optional
//! delta = 0.001
//! max_rounds = 10000
//! damping = 0.7
//!
//! [sweep]             # optional
//! carrier = 1
//! from = 20.0
//! to = 300.0
//! step = 10.0
//!
//! [[carriers]]
//! id = 1
//! capacity = 300.0
//!
//! [[ues]]
//! id = 1
//! reachable = [1]
//! utility = { type = "sigmoidal", a = 5.0, b = 10.0 }
//! ```
//!
//! Logarithmic utilities are written `{ type = "logarithmic", k = 3.0, r_max = 100.0 }`.
//! Missing engine fields take their defaults.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::{fs, io};

use carrier_agg_core::scenario::{ScenarioError, SweepError};
use carrier_agg_core::utility::UtilityError;
use carrier_agg_core::{build_paper_scenario, Carrier, CarrierId, EngineConfig, ProtocolError, Scenario, SweepSpec, UeId, UeSpec, UtilityFunction};
use serde::Deserialize;

/// Everything a scenario file holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub scenario: Scenario,
    /// `None` when the file has no `[engine]` section.
    pub engine: Option<EngineConfig>,
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug)]
pub enum DocumentError {
    /// Malformed TOML or a missing, misspelled or mistyped field. The message
    /// carries the line and field.
    Parse(String),
    Utility { ue: UeId, source: UtilityError },
    Engine(ProtocolError),
    Sweep(SweepError),
    UnknownSweepCarrier(CarrierId),
    Scenario(ScenarioError),
}

impl fmt::Display for DocumentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DocumentError::Parse(msg) => write!(f, "{msg}"),
            DocumentError::Utility { ue, source } => write!(f, "UE {ue}: {source}"),
            DocumentError::Engine(e) => write!(f, "[engine]: {e}"),
            DocumentError::Sweep(e) => write!(f, "[sweep]: {e}"),
            DocumentError::UnknownSweepCarrier(c) => write!(f, "[sweep]: unknown carrier {c}"),
            DocumentError::Scenario(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DocumentError {}

#[derive(Debug)]
pub enum LoadError {
    Io { path: PathBuf, source: io::Error },
    Document { path: PathBuf, source: DocumentError },
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            LoadError::Document { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for LoadError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            LoadError::Io { source, .. } => Some(source),
            LoadError::Document { source, .. } => Some(source),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    name: String,
    carriers: Vec<RawCarrier>,
    ues: Vec<RawUe>,
    engine: Option<RawEngine>,
    sweep: Option<RawSweep>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCarrier {
    id: u32,
    capacity: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUe {
    id: u32,
    reachable: Vec<u32>,
    utility: RawUtility,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum RawUtility {
    Sigmoidal { a: f64, b: f64 },
    Logarithmic { k: f64, r_max: f64 },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEngine {
    delta: Option<f64>,
    max_rounds: Option<u32>,
    damping: Option<f64>,
    price_floor: Option<f64>,
    adaptive_damping: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    carrier: u32,
    from: f64,
    to: f64,
    step: f64,
}

/// Parses and validates a scenario document.
pub fn parse_document(text: &str) -> Result<Document, DocumentError> {
    let raw: RawDocument = toml::from_str(text).map_err(|e| DocumentError::Parse(e.to_string().trim_end().to_owned()))?;

    let carriers = raw.carriers.iter().map(|c| Carrier { id: CarrierId(c.id), capacity: c.capacity }).collect();
    let mut ues = Vec::with_capacity(raw.ues.len());
    for u in raw.ues {
        let id = UeId(u.id);
        let utility = match u.utility {
            RawUtility::Sigmoidal { a, b } => UtilityFunction::sigmoidal(a, b),
            RawUtility::Logarithmic { k, r_max } => UtilityFunction::logarithmic(k, r_max),
        }
        .map_err(|source| DocumentError::Utility { ue: id, source })?;
        ues.push(UeSpec { id, utility, reachable: u.reachable.into_iter().map(CarrierId).collect() });
    }
    let scenario = Scenario::new(raw.name, carriers, ues).map_err(DocumentError::Scenario)?;

    let engine = match raw.engine {
        None => None,
        Some(e) => {
            let d = EngineConfig::default();
            let config = EngineConfig {
                delta: e.delta.unwrap_or(d.delta),
                max_rounds: e.max_rounds.unwrap_or(d.max_rounds),
                damping: e.damping.unwrap_or(d.damping),
                price_floor: e.price_floor.unwrap_or(d.price_floor),
                adaptive_damping: e.adaptive_damping.unwrap_or(d.adaptive_damping),
            };
            config.validate().map_err(DocumentError::Engine)?;
            Some(config)
        }
    };

    let sweep = match raw.sweep {
        None => None,
        Some(s) => {
            let spec = SweepSpec::new(CarrierId(s.carrier), s.from, s.to, s.step).map_err(DocumentError::Sweep)?;
            if scenario.carrier_index(spec.carrier).is_none() {
                return Err(DocumentError::UnknownSweepCarrier(spec.carrier));
            }
            Some(spec)
        }
    };

    Ok(Document { scenario, engine, sweep })
}

pub fn load_document(path: &Path) -> Result<Document, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.to_owned(), source })?;
    parse_document(&text).map_err(|source| LoadError::Document { path: path.to_owned(), source })
}

/// Loads the scenario part of a file, ignoring any engine or sweep section.
pub fn load_scenario(path: &Path) -> Result<Scenario, LoadError> {
    load_document(path).map(|d| d.scenario)
}

// `{:?}` prints the shortest string that parses back to the same f64 and
// always includes a `.` or exponent, which keeps TOML reading it as a float.
fn float(x: f64) -> String {
    format!("{x:?}")
}

/// Renders a document as TOML. [`parse_document`] reads it back unchanged.
pub fn to_toml(doc: &Document) -> String {
    let mut out = String::new();
    let s = &doc.scenario;
    writeln!(out, "name = {}", toml::Value::String(s.name().to_owned())).unwrap();
    if let Some(e) = &doc.engine {
        out.push_str("\n[engine]\n");
        writeln!(out, "delta = {}", float(e.delta)).unwrap();
        writeln!(out, "max_rounds = {}", e.max_rounds).unwrap();
        writeln!(out, "damping = {}", float(e.damping)).unwrap();
        writeln!(out, "price_floor = {}", float(e.price_floor)).unwrap();
        writeln!(out, "adaptive_damping = {}", e.adaptive_damping).unwrap();
    }
    if let Some(w) = &doc.sweep {
        out.push_str("\n[sweep]\n");
        writeln!(out, "carrier = {}", w.carrier).unwrap();
        writeln!(out, "from = {}", float(w.from)).unwrap();
        writeln!(out, "to = {}", float(w.to)).unwrap();
        writeln!(out, "step = {}", float(w.step)).unwrap();
    }
    for c in s.carriers() {
        writeln!(out, "\n[[carriers]]\nid = {}\ncapacity = {}", c.id, float(c.capacity)).unwrap();
    }
    for u in s.ues() {
        let reach: Vec<String> = u.reachable.iter().map(|c| c.to_string()).collect();
        let utility = match u.utility {
            UtilityFunction::Sigmoidal(g) => {
                format!("{{ type = \"sigmoidal\", a = {}, b = {} }}", float(g.a()), float(g.b()))
            }
            UtilityFunction::Logarithmic(g) => {
                format!("{{ type = \"logarithmic\", k = {}, r_max = {} }}", float(g.k()), float(g.r_max()))
            }
        };
        writeln!(out, "\n[[ues]]\nid = {}\nreachable = [{}]\nutility = {utility}", u.id, reach.join(", ")).unwrap();
    }
    out
}

/// The 18-UE reference scenario as a document, with default engine settings
/// and the carrier-1 sweep from 20 to 300 in steps of 10.
pub fn paper_document(r1: f64) -> Result<Document, ScenarioError> {
    let scenario = build_paper_scenario(r1)?;
    let sweep = SweepSpec::new(CarrierId(1), 20.0, 300.0, 10.0).expect("reference sweep is valid");
    Ok(Document { scenario, engine: Some(EngineConfig::default()), sweep: Some(sweep) })
}

pub fn save_document(doc: &Document, path: &Path) -> io::Result<()> {
    fs::write(path, to_toml(doc))
}

/// Writes a bare scenario with no engine or sweep section.
pub fn save_scenario(scenario: &Scenario, path: &Path) -> io::Result<()> {
    save_document(&Document { scenario: scenario.clone(), engine: None, sweep: None }, path)
}
