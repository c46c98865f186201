//! Round-based bidding engine between UE agents and carrier agents.
//!
//! A round consists of every UE reacting to the latest prices with a new bid
//! vector, followed by every carrier summing its bids into a new price
//! `p = sum(w) / R`. The run ends once every carrier reports that no bid it
//! received moved by `delta` or more since the previous round; rates are
//! then `r = w / p`, which uses each priced carrier's capacity exactly.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::fmt;

use crate::scenario::{CarrierId, Scenario, UeId};
use crate::subproblem::{
    Bid, BidPolicy, BidVector, PriceEntry, PriceView, SubproblemError, UeAgent, DEFAULT_PRICE_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Bid-stability tolerance.
    pub delta: f64,
    pub max_rounds: u32,
    /// Largest bid step; see [`BidPolicy`].
    pub damping: f64,
    pub price_floor: f64,
    /// Let each bid stream shrink its step when it oscillates.
    pub adaptive_damping: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            max_rounds: 10_000,
            damping: 0.7,
            price_floor: DEFAULT_PRICE_FLOOR,
            adaptive_damping: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(ProtocolError::Config("delta must be positive"));
        }
        if self.max_rounds == 0 {
            return Err(ProtocolError::Config("max_rounds must be at least 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(ProtocolError::Config("damping must lie in (0, 1]"));
        }
        if !(self.price_floor.is_finite() && self.price_floor > 0.0) {
            return Err(ProtocolError::Config("price_floor must be positive"));
        }
        Ok(())
    }

    fn bid_policy(&self) -> BidPolicy {
        BidPolicy {
            damping: self.damping,
            adaptive: self.adaptive_damping,
            price_floor: self.price_floor,
        }
    }
}

/// Dense `carrier x UE` table in scenario order. Entries for unreachable
/// pairs stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    carriers: usize,
    ues: usize,
    data: Vec<f64>,
}

impl RateMatrix {
    pub fn zeros(carriers: usize, ues: usize) -> Self {
        Self { carriers, ues, data: alloc::vec![0.0; carriers * ues] }
    }

    pub fn get(&self, carrier: usize, ue: usize) -> f64 {
        self.data[carrier * self.ues + ue]
    }

    pub fn set(&mut self, carrier: usize, ue: usize, value: f64) {
        self.data[carrier * self.ues + ue] = value;
    }

    pub fn carriers(&self) -> usize {
        self.carriers
    }

    pub fn ues(&self) -> usize {
        self.ues
    }

    pub fn carrier_sum(&self, carrier: usize) -> f64 {
        self.data[carrier * self.ues..(carrier + 1) * self.ues].iter().sum()
    }

    pub fn ue_sum(&self, ue: usize) -> f64 {
        (0..self.carriers).map(|l| self.get(l, ue)).sum()
    }

    pub fn ue_totals(&self) -> Vec<f64> {
        (0..self.ues).map(|i| self.ue_sum(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    /// `r_li`, indexed like the scenario's carriers and UEs.
    pub rates: RateMatrix,
    /// Standing bids `w_li` at termination.
    pub bids: RateMatrix,
    pub prices: Vec<f64>,
    pub totals: Vec<f64>,
    pub rounds: u32,
    /// `sum_i ln U_i(total_i)`.
    pub objective: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceQuote {
    pub carrier: CarrierId,
    pub price: f64,
    pub stop: bool,
}

/// A carrier's view of the protocol: its capacity, its current price and the
/// bids it received in the previous round.
#[derive(Debug, Clone, PartialEq)]
pub struct CarrierAgent {
    id: CarrierId,
    capacity: f64,
    price: f64,
    in_range: Vec<UeId>,
    prev_bids: Vec<f64>,
    rounds_seen: u32,
    stop: bool,
    delta: f64,
    price_floor: f64,
}

impl CarrierAgent {
    pub fn new(id: CarrierId, capacity: f64, mut in_range: Vec<UeId>, delta: f64, price_floor: f64) -> Self {
        in_range.sort();
        let n = in_range.len();
        Self {
            id,
            capacity,
            price: price_floor,
            in_range,
            prev_bids: alloc::vec![0.0; n],
            rounds_seen: 0,
            stop: false,
            delta,
            price_floor,
        }
    }

    pub fn id(&self) -> CarrierId {
        self.id
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn price(&self) -> f64 {
        self.price
    }

    pub fn stop(&self) -> bool {
        self.stop
    }

    /// Price the bids of one round. UEs in range that did not bid count as
    /// bidding zero. The stop flag needs a previous round to compare with.
    pub fn carrier_step(&mut self, bids: &[(UeId, f64)]) -> Result<PriceQuote, ProtocolError> {
        let mut current = alloc::vec![0.0; self.in_range.len()];
        for &(ue, w) in bids {
            if !(w.is_finite() && w >= 0.0) {
                return Err(ProtocolError::InvalidBid { carrier: self.id, ue, amount: w });
            }
            let slot = self
                .in_range
                .binary_search(&ue)
                .map_err(|_| ProtocolError::UnknownBidder { carrier: self.id, ue })?;
            current[slot] = w;
        }
        let max_change = current
            .iter()
            .zip(&self.prev_bids)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.stop = self.rounds_seen > 0 && max_change < self.delta;
        self.price = (current.iter().sum::<f64>() / self.capacity).max(self.price_floor);
        self.prev_bids = current;
        self.rounds_seen += 1;
        Ok(PriceQuote { carrier: self.id, price: self.price, stop: self.stop })
    }
}

/// Snapshot of one round for tracing.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub round: u32,
    pub prices: Vec<f64>,
    /// Bids priced in this round, `carrier x UE`.
    pub bids: RateMatrix,
    pub max_bid_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolError {
    Config(&'static str),
    InvalidBid { carrier: CarrierId, ue: UeId, amount: f64 },
    UnknownBidder { carrier: CarrierId, ue: UeId },
    Agent(SubproblemError),
    /// The round budget ran out; carries the state after the last round.
    NonConvergence(Box<AllocationResult>),
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolError::Config(msg) => write!(f, "invalid engine configuration: {msg}"),
            ProtocolError::InvalidBid { carrier, ue, amount } => {
                write!(f, "carrier {carrier} received invalid bid {amount} from UE {ue}")
            }
            ProtocolError::UnknownBidder { carrier, ue } => {
                write!(f, "carrier {carrier} received a bid from out-of-range UE {ue}")
            }
            ProtocolError::Agent(e) => write!(f, "{e}"),
            ProtocolError::NonConvergence(r) => {
                write!(f, "no convergence within {} rounds", r.rounds)
            }
        }
    }
}

impl core::error::Error for ProtocolError {}

impl From<SubproblemError> for ProtocolError {
    fn from(e: SubproblemError) -> Self {
        ProtocolError::Agent(e)
    }
}

/// Opening bids: every carrier's capacity split evenly over the UEs in its
/// range, so every opening price is 1.
pub fn initial_bids(scenario: &Scenario) -> Vec<BidVector> {
    let counts = scenario.users_in_range();
    scenario
        .ues()
        .iter()
        .map(|ue| BidVector {
            entries: ue
                .reachable
                .iter()
                .map(|&carrier| {
                    let l = scenario.carrier_index(carrier).expect("validated scenario");
                    Bid { carrier, amount: scenario.carriers()[l].capacity / counts[l] as f64 }
                })
                .collect(),
        })
        .collect()
}

/// `sum_i ln U_i(total_i)`; negative infinity when any UE gets nothing.
pub fn objective(scenario: &Scenario, totals: &[f64]) -> Result<f64, ProtocolError> {
    let mut sum = 0.0;
    for (ue, &t) in scenario.ues().iter().zip(totals) {
        let v = ue
            .utility
            .log_utility(t)
            .map_err(|source| SubproblemError::Utility { ue: ue.id, source })?;
        sum += v;
    }
    Ok(sum)
}

// Demand ceiling as a multiple of a UE's reachable capacity. It must exceed
// one: a sole user's demand has to be able to overshoot the capacity it holds,
// or the price stops rising before it reaches the user's marginal.
const DEMAND_CEILING: f64 = 2.0;

pub fn run(scenario: &Scenario, config: &EngineConfig) -> Result<AllocationResult, ProtocolError> {
    run_traced(scenario, config, |_| {})
}

/// Like [`run`], calling `trace` once per round after the carriers price it.
pub fn run_traced<F>(scenario: &Scenario, config: &EngineConfig, mut trace: F) -> Result<AllocationResult, ProtocolError>
where
    F: FnMut(&RoundTrace),
{
    config.validate()?;
    let policy = config.bid_policy();
    let n_carriers = scenario.carriers().len();
    let n_ues = scenario.ues().len();

    let mut carriers: Vec<CarrierAgent> = scenario
        .carriers()
        .iter()
        .map(|c| {
            let in_range = scenario
                .ues()
                .iter()
                .filter(|u| u.reachable.contains(&c.id))
                .map(|u| u.id)
                .collect();
            CarrierAgent::new(c.id, c.capacity, in_range, config.delta, config.price_floor)
        })
        .collect();

    let opening = initial_bids(scenario);
    let mut agents = Vec::with_capacity(n_ues);
    for (idx, (ue, bids)) in scenario.ues().iter().zip(opening.iter()).enumerate() {
        agents.push(UeAgent::new(
            ue.id,
            ue.utility,
            ue.reachable.clone(),
            DEMAND_CEILING * scenario.reachable_capacity(idx),
            bids.clone(),
            config.damping,
        )?);
    }
    let mut bids = opening;
    let mut prev_table = RateMatrix::zeros(n_carriers, n_ues);
    let mut inbox: Vec<Vec<(UeId, f64)>> = alloc::vec![Vec::new(); n_carriers];

    let mut round = 0;
    let converged = loop {
        round += 1;

        // Carriers price this round's bids.
        for list in inbox.iter_mut() {
            list.clear();
        }
        let mut table = RateMatrix::zeros(n_carriers, n_ues);
        for (i, bv) in bids.iter().enumerate() {
            for b in &bv.entries {
                let l = scenario.carrier_index(b.carrier).expect("validated scenario");
                inbox[l].push((scenario.ues()[i].id, b.amount));
                table.set(l, i, b.amount);
            }
        }
        let mut all_stop = true;
        for (agent, list) in carriers.iter_mut().zip(&inbox) {
            all_stop &= agent.carrier_step(list)?.stop;
        }
        let prices: Vec<f64> = carriers.iter().map(|c| c.price()).collect();
        let max_bid_delta = table
            .data
            .iter()
            .zip(&prev_table.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        trace(&RoundTrace { round, prices, bids: table.clone(), max_bid_delta });
        prev_table = table;

        if all_stop {
            break true;
        }
        if round >= config.max_rounds {
            break false;
        }

        // UEs react to the new prices.
        for (agent, slot) in agents.iter_mut().zip(bids.iter_mut()) {
            let view = PriceView {
                round,
                entries: agent
                    .reachable()
                    .iter()
                    .map(|&c| {
                        let q = &carriers[scenario.carrier_index(c).expect("validated scenario")];
                        PriceEntry { carrier: c, price: q.price(), stop: q.stop() }
                    })
                    .collect(),
            };
            *slot = agent.ue_step(&view, &policy)?;
        }
    };

    let prices: Vec<f64> = carriers.iter().map(|c| c.price()).collect();
    let mut rates = RateMatrix::zeros(n_carriers, n_ues);
    for l in 0..n_carriers {
        for i in 0..n_ues {
            let w = prev_table.get(l, i);
            if w > 0.0 {
                rates.set(l, i, w / prices[l]);
            }
        }
    }
    let totals = rates.ue_totals();
    let result = AllocationResult {
        objective: objective(scenario, &totals)?,
        rates,
        bids: prev_table,
        prices,
        totals,
        rounds: round,
        converged,
    };
    if converged {
        Ok(result)
    } else {
        Err(ProtocolError::NonConvergence(Box::new(result)))
    }
}
