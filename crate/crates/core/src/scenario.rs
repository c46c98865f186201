//! Carriers, users and their reachability: the static input of an allocation.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::utility::UtilityFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CarrierId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UeId(pub u32);

impl fmt::Display for CarrierId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for UeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Carrier {
    pub id: CarrierId,
    /// Total rate the carrier can hand out.
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeSpec {
    pub id: UeId,
    pub utility: UtilityFunction,
    /// Carriers in range, sorted ascending without duplicates once validated.
    pub reachable: Vec<CarrierId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioError {
    NoCarriers,
    NoUes,
    DuplicateCarrier(CarrierId),
    DuplicateUe(UeId),
    BadCapacity { carrier: CarrierId, capacity: f64 },
    EmptyReachability(UeId),
    UnknownCarrier { ue: UeId, carrier: CarrierId },
    DuplicateReachable { ue: UeId, carrier: CarrierId },
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::NoCarriers => write!(f, "scenario has no carriers"),
            ScenarioError::NoUes => write!(f, "scenario has no UEs"),
            ScenarioError::DuplicateCarrier(c) => write!(f, "carrier id {c} appears more than once"),
            ScenarioError::DuplicateUe(u) => write!(f, "UE id {u} appears more than once"),
            ScenarioError::BadCapacity { carrier, capacity } => {
                write!(f, "carrier {carrier} capacity {capacity} must be positive and finite")
            }
            ScenarioError::EmptyReachability(u) => write!(f, "UE {u} reaches no carrier"),
            ScenarioError::UnknownCarrier { ue, carrier } => {
                write!(f, "UE {ue} references unknown carrier {carrier}")
            }
            ScenarioError::DuplicateReachable { ue, carrier } => {
                write!(f, "UE {ue} lists carrier {carrier} more than once")
            }
        }
    }
}

impl core::error::Error for ScenarioError {}

/// A validated allocation problem. Carriers and UEs are kept sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    name: String,
    carriers: Vec<Carrier>,
    ues: Vec<UeSpec>,
}

impl Scenario {
    pub fn new(
        name: impl Into<String>,
        mut carriers: Vec<Carrier>,
        mut ues: Vec<UeSpec>,
    ) -> Result<Self, ScenarioError> {
        if carriers.is_empty() {
            return Err(ScenarioError::NoCarriers);
        }
        if ues.is_empty() {
            return Err(ScenarioError::NoUes);
        }
        carriers.sort_by_key(|c| c.id);
        for pair in carriers.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(ScenarioError::DuplicateCarrier(pair[0].id));
            }
        }
        for c in &carriers {
            if !(c.capacity.is_finite() && c.capacity > 0.0) {
                return Err(ScenarioError::BadCapacity { carrier: c.id, capacity: c.capacity });
            }
        }
        ues.sort_by_key(|u| u.id);
        for pair in ues.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(ScenarioError::DuplicateUe(pair[0].id));
            }
        }
        for ue in &mut ues {
            if ue.reachable.is_empty() {
                return Err(ScenarioError::EmptyReachability(ue.id));
            }
            ue.reachable.sort();
            for pair in ue.reachable.windows(2) {
                if pair[0] == pair[1] {
                    return Err(ScenarioError::DuplicateReachable { ue: ue.id, carrier: pair[0] });
                }
            }
            for &l in &ue.reachable {
                if carriers.binary_search_by_key(&l, |c| c.id).is_err() {
                    return Err(ScenarioError::UnknownCarrier { ue: ue.id, carrier: l });
                }
            }
        }
        Ok(Self { name: name.into(), carriers, ues })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn carriers(&self) -> &[Carrier] {
        &self.carriers
    }

    pub fn ues(&self) -> &[UeSpec] {
        &self.ues
    }

    pub fn carrier_index(&self, id: CarrierId) -> Option<usize> {
        self.carriers.binary_search_by_key(&id, |c| c.id).ok()
    }

    pub fn ue_index(&self, id: UeId) -> Option<usize> {
        self.ues.binary_search_by_key(&id, |u| u.id).ok()
    }

    /// Number of UEs in range of each carrier, in carrier order.
    pub fn users_in_range(&self) -> Vec<usize> {
        self.carriers
            .iter()
            .map(|c| self.ues.iter().filter(|u| u.reachable.contains(&c.id)).count())
            .collect()
    }

    /// Sum of the capacities of the carriers UE `ue_idx` can reach.
    pub fn reachable_capacity(&self, ue_idx: usize) -> f64 {
        self.ues[ue_idx]
            .reachable
            .iter()
            .filter_map(|&l| self.carrier_index(l))
            .map(|ci| self.carriers[ci].capacity)
            .sum()
    }

    /// Copy of the scenario with one carrier's capacity replaced.
    pub fn with_capacity(&self, carrier: CarrierId, capacity: f64) -> Result<Self, ScenarioError> {
        let mut carriers = self.carriers.clone();
        match carriers.iter_mut().find(|c| c.id == carrier) {
            Some(c) => c.capacity = capacity,
            None => {
                return Err(ScenarioError::UnknownCarrier { ue: UeId(0), carrier });
            }
        }
        Scenario::new(self.name.clone(), carriers, self.ues.clone())
    }
}

/// Inclusive range of capacities to sweep one carrier over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub carrier: CarrierId,
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl SweepSpec {
    pub fn new(carrier: CarrierId, from: f64, to: f64, step: f64) -> Result<Self, SweepError> {
        if !(step.is_finite() && step > 0.0) {
            return Err(SweepError::BadStep(step));
        }
        if !(from.is_finite() && to.is_finite()) || from > to {
            return Err(SweepError::BadRange { from, to });
        }
        Ok(Self { carrier, from, to, step })
    }

    /// Sweep values, endpoints included. Values are computed as
    /// `from + i * step` so they do not accumulate rounding drift.
    pub fn values(&self) -> Vec<f64> {
        let span = (self.to - self.from) / self.step;
        // Tolerate representation error so that e.g. 20..300 step 10 hits 300.
        let n = libm::floor(span + 1e-9) as usize;
        (0..=n).map(|i| self.from + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepError {
    BadStep(f64),
    BadRange { from: f64, to: f64 },
}

impl fmt::Display for SweepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepError::BadStep(s) => write!(f, "sweep step {s} must be positive"),
            SweepError::BadRange { from, to } => write!(f, "sweep range {from}..{to} is empty"),
        }
    }
}

impl core::error::Error for SweepError {}

/// Capacity of the second carrier in the reference two-carrier layout.
pub const PAPER_R2: f64 = 100.0;

/// The 18-user, two-carrier reference layout.
///
/// Users 1-6 reach carrier 1 only, 7-12 carrier 2 only and 13-18 both.
/// Within each group the six users carry, in order: sigmoidal (5, 10),
/// sigmoidal (3, 20), sigmoidal (1, 30), and logarithmic with `r_max = 100`
/// and `k` = 15, 3, 0.5.
pub fn build_paper_scenario(r1: f64) -> Result<Scenario, ScenarioError> {
    let profiles = [
        UtilityFunction::sigmoidal(5.0, 10.0),
        UtilityFunction::sigmoidal(3.0, 20.0),
        UtilityFunction::sigmoidal(1.0, 30.0),
        UtilityFunction::logarithmic(15.0, 100.0),
        UtilityFunction::logarithmic(3.0, 100.0),
        UtilityFunction::logarithmic(0.5, 100.0),
    ];
    let groups: [&[u32]; 3] = [&[1], &[2], &[1, 2]];
    let mut ues = Vec::with_capacity(18);
    for (g, reach) in groups.iter().enumerate() {
        for (j, profile) in profiles.iter().enumerate() {
            ues.push(UeSpec {
                id: UeId((g * 6 + j + 1) as u32),
                utility: profile.expect("reference utility parameters are valid"),
                reachable: reach.iter().map(|&l| CarrierId(l)).collect(),
            });
        }
    }
    let carriers = alloc::vec![
        Carrier { id: CarrierId(1), capacity: r1 },
        Carrier { id: CarrierId(2), capacity: PAPER_R2 },
    ];
    Scenario::new("paper18", carriers, ues)
}
