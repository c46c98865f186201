//! The per-UE bidding decision.
//!
//! Each round a UE sees the shadow price of every carrier in range, works
//! out how much total rate it wants at the cheapest price, and spreads that
//! demand over its carriers cheapest first. The result is sent as bids
//! `w = p * r`, one per reachable carrier.

use alloc::vec::Vec;
use core::fmt;

use crate::scenario::{CarrierId, UeId};
use crate::utility::{UtilityError, UtilityFunction};

/// Smallest price a carrier ever announces.
pub const DEFAULT_PRICE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceEntry {
    pub carrier: CarrierId,
    pub price: f64,
    pub stop: bool,
}

/// Prices announced to one UE for round `round`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceView {
    pub round: u32,
    pub entries: Vec<PriceEntry>,
}

impl PriceView {
    pub fn price_of(&self, carrier: CarrierId) -> Option<f64> {
        self.entries.iter().find(|e| e.carrier == carrier).map(|e| e.price)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bid {
    pub carrier: CarrierId,
    pub amount: f64,
}

/// One bid per reachable carrier, in carrier-id order. Zero bids are kept.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BidVector {
    pub entries: Vec<Bid>,
}

impl BidVector {
    pub fn zeros(carriers: &[CarrierId]) -> Self {
        Self {
            entries: carriers.iter().map(|&carrier| Bid { carrier, amount: 0.0 }).collect(),
        }
    }

    pub fn amount_for(&self, carrier: CarrierId) -> Option<f64> {
        self.entries.iter().find(|b| b.carrier == carrier).map(|b| b.amount)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|b| b.amount).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubproblemError {
    MissingPrice { ue: UeId, carrier: CarrierId },
    PriceBelowFloor { carrier: CarrierId, price: f64 },
    Utility { ue: UeId, source: UtilityError },
    EmptyReachability(UeId),
    BadDamping(f64),
}

impl fmt::Display for SubproblemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubproblemError::MissingPrice { ue, carrier } => {
                write!(f, "UE {ue} received no price for carrier {carrier}")
            }
            SubproblemError::PriceBelowFloor { carrier, price } => {
                write!(f, "carrier {carrier} price {price} is below the price floor")
            }
            SubproblemError::Utility { ue, source } => write!(f, "UE {ue}: {source}"),
            SubproblemError::EmptyReachability(ue) => write!(f, "UE {ue} has no carriers in range"),
            SubproblemError::BadDamping(t) => write!(f, "damping {t} must lie in (0, 1]"),
        }
    }
}

impl core::error::Error for SubproblemError {}

/// Sign-driven step-size control for one stream of bid adjustments.
///
/// The step starts at the configured damping. When the requested move
/// changes direction compared to the previous round the step is halved (down
/// to a floor of 0.001); while the direction holds it grows by 20% per round,
/// never beyond the configured damping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    step: f64,
    last_sign: i8,
}

const STEP_SHRINK: f64 = 0.5;
const STEP_GROW: f64 = 1.2;
const FOLLOW: f64 = 1e-3;
const STEP_FLOOR: f64 = 1e-3;

impl StepControl {
    pub fn new(damping: f64) -> Self {
        Self { step: damping, last_sign: 0 }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    fn update(&mut self, delta: f64, max_step: f64, adaptive: bool) -> f64 {
        if !adaptive {
            self.step = max_step;
            return max_step;
        }
        let sign = if delta > 0.0 {
            1
        } else if delta < 0.0 {
            -1
        } else {
            0
        };
        if sign != 0 {
            if self.last_sign != 0 && sign != self.last_sign {
                self.step = (self.step * STEP_SHRINK).max(STEP_FLOOR);
            } else if sign == self.last_sign {
                self.step = (self.step * STEP_GROW).min(max_step);
            }
            self.last_sign = sign;
        }
        self.step
    }
}

/// Parameters shared by every UE agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BidPolicy {
    /// Upper bound on the fraction of the way a bid moves toward the
    /// undamped response each round.
    pub damping: f64,
    /// Adapt the step to the observed dynamics (see [`UeAgent::ue_step`]);
    /// when false every round moves exactly `damping` of the way.
    pub adaptive: bool,
    pub price_floor: f64,
}

impl Default for BidPolicy {
    fn default() -> Self {
        Self { damping: 0.7, adaptive: true, price_floor: DEFAULT_PRICE_FLOOR }
    }
}

/// State of one UE across rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct UeAgent {
    id: UeId,
    utility: UtilityFunction,
    reachable: Vec<CarrierId>,
    last_bids: BidVector,
    steps: Vec<StepControl>,
    r_cap: f64,
    // Held, wanted and target total of the previous round, and the step
    // they implied.
    last_totals: Option<(f64, f64, f64)>,
    gain_step: f64,
    total_step: StepControl,
}

impl UeAgent {
    /// `reachable` is sorted here; `r_cap` bounds every demand computation.
    pub fn new(
        id: UeId,
        utility: UtilityFunction,
        mut reachable: Vec<CarrierId>,
        r_cap: f64,
        initial_bids: BidVector,
        damping: f64,
    ) -> Result<Self, SubproblemError> {
        if reachable.is_empty() {
            return Err(SubproblemError::EmptyReachability(id));
        }
        if !(damping > 0.0 && damping <= 1.0) {
            return Err(SubproblemError::BadDamping(damping));
        }
        reachable.sort();
        reachable.dedup();
        let last_bids = BidVector {
            entries: reachable
                .iter()
                .map(|&carrier| Bid { carrier, amount: initial_bids.amount_for(carrier).unwrap_or(0.0) })
                .collect(),
        };
        let steps = alloc::vec![StepControl::new(damping); reachable.len()];
        Ok(Self { id, utility, reachable, last_bids, steps, r_cap, last_totals: None, gain_step: 1.0, total_step: StepControl::new(damping) })
    }

    pub fn id(&self) -> UeId {
        self.id
    }

    pub fn utility(&self) -> &UtilityFunction {
        &self.utility
    }

    pub fn reachable(&self) -> &[CarrierId] {
        &self.reachable
    }

    pub fn last_bids(&self) -> &BidVector {
        &self.last_bids
    }

    pub fn r_cap(&self) -> f64 {
        self.r_cap
    }

    pub fn steps(&self) -> &[StepControl] {
        &self.steps
    }

    /// Undamped response to `prices`, as rates per reachable carrier (in
    /// `reachable` order).
    ///
    /// The carriers are visited by ascending price, ties broken by carrier
    /// id. `T_m` is the total rate demanded at the m-th cheapest price. Rate
    /// `h` already held on a dearer carrier (the last bid divided by its
    /// current price) is kept as `h * p_1 / p_m - (T_1 - T_m)`, floored at
    /// zero, and the cheapest carrier receives whatever is left of `T_1`. So
    /// holdings drain from a dearer carrier until its price matches the
    /// cheapest one. With no holdings this is plain cheapest-first filling:
    /// `T_1` on the cheapest carrier and nothing elsewhere.
    pub fn raw_rates(&self, prices: &PriceView, price_floor: f64) -> Result<Vec<f64>, SubproblemError> {
        let k = self.reachable.len();
        let mut price = Vec::with_capacity(k);
        for &carrier in &self.reachable {
            let p = prices
                .price_of(carrier)
                .ok_or(SubproblemError::MissingPrice { ue: self.id, carrier })?;
            if !(p >= price_floor) || !p.is_finite() {
                return Err(SubproblemError::PriceBelowFloor { carrier, price: p });
            }
            price.push(p);
        }

        // `reachable` is sorted by id, so a stable sort on price keeps the
        // lower id first among equal prices.
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&x, &y| price[x].partial_cmp(&price[y]).expect("finite prices"));

        let demand = |p: f64| {
            self.utility
                .solve_rate_for_price(p, self.r_cap)
                .map_err(|source| SubproblemError::Utility { ue: self.id, source })
        };

        let top = demand(price[order[0]])?;
        let mut rates = alloc::vec![0.0; k];
        let mut kept_total = 0.0;
        for &idx in &order[1..] {
            let held = self.last_bids.entries[idx].amount / price[idx];
            if held <= 0.0 {
                continue;
            }
            let gap = top - demand(price[idx])?;
            let keep = (held * price[order[0]] / price[idx] - gap).max(0.0);
            rates[idx] = keep;
            kept_total += keep;
        }
        // Holdings elsewhere beyond the total demand: release the dearest first.
        if kept_total > top {
            let mut excess = kept_total - top;
            for &idx in order[1..].iter().rev() {
                let cut = rates[idx].min(excess);
                rates[idx] -= cut;
                excess -= cut;
                if excess <= 0.0 {
                    break;
                }
            }
            kept_total = top;
        }
        rates[order[0]] = (top - kept_total).max(0.0);
        Ok(rates)
    }

    // Step that would land the total on its fixed point if the wanted total
    // responds linearly to the held total, estimated from the last round.
    // Only rounds where the held total actually followed the UE's own move
    // count: a sole user of its carriers changes the price, not its rate.
    fn secant_step(&mut self, held: f64, wanted: f64) -> f64 {
        if let Some((h0, w0, t0)) = self.last_totals {
            let dh = held - h0;
            if dh.abs() > 1e-12 * held.max(1.0) && dh.abs() >= FOLLOW * (t0 - h0).abs() {
                let slope = (wanted - w0) / dh;
                self.gain_step = if slope < 0.0 { 1.0 / (1.0 - slope) } else { 1.0 };
            }
        }
        self.gain_step
    }

    /// One bidding round: compute the undamped response and move the standing
    /// bids toward it.
    ///
    /// With `policy.adaptive` off, every bid moves `damping` of the way to
    /// `p * r_raw`. With it on, the move is split in two parts. The change of
    /// the total rate takes the smaller of a [`StepControl`] step and a
    /// secant estimate of the step that lands on the fixed point, measured
    /// from how the wanted total reacted to the held total last round. This
    /// keeps users with a nearly flat marginal from driving the price into
    /// oscillation. The zero-sum transfer between carriers has one
    /// [`StepControl`] per carrier.
    pub fn ue_step(&mut self, prices: &PriceView, policy: &BidPolicy) -> Result<BidVector, SubproblemError> {
        if !(policy.damping > 0.0 && policy.damping <= 1.0) {
            return Err(SubproblemError::BadDamping(policy.damping));
        }
        let raw = self.raw_rates(prices, policy.price_floor)?;
        let k = self.reachable.len();
        let price: Vec<f64> = self
            .reachable
            .iter()
            .map(|&c| prices.price_of(c).expect("checked in raw_rates"))
            .collect();
        let held: Vec<f64> = (0..k).map(|i| self.last_bids.entries[i].amount / price[i]).collect();
        let held_total: f64 = held.iter().sum();
        let wanted: f64 = raw.iter().sum();

        let gain = if policy.adaptive { self.secant_step(held_total, wanted) } else { 1.0 };
        let total_step = gain.min(self.total_step.update(wanted - held_total, policy.damping, policy.adaptive));
        let target = held_total + total_step * (wanted - held_total);
        self.last_totals = Some((held_total, wanted, target));

        // Split the move into a change of the total, spread like the raw
        // response, and a zero-sum transfer between carriers.
        let mut rates = alloc::vec![0.0; k];
        for i in 0..k {
            let grow = if wanted > 0.0 { raw[i] / wanted * (wanted - held_total) } else { -held[i] };
            let transfer = raw[i] - held[i] - grow;
            let step = self.steps[i].update(transfer, policy.damping, policy.adaptive);
            rates[i] = (held[i] + total_step * grow + step * transfer).max(0.0);
        }
        let sum: f64 = rates.iter().sum();
        if sum > 0.0 {
            for r in rates.iter_mut() {
                *r *= target / sum;
            }
        }
        for (i, bid) in self.last_bids.entries.iter_mut().enumerate() {
            bid.amount = price[i] * rates[i];
        }
        Ok(self.last_bids.clone())
    }
}

/// Rate granted for a standing bid at the announced price.
pub fn final_rate(bid: f64, price: f64, price_floor: f64) -> Result<f64, SubproblemError> {
    if !(price >= price_floor) || !price.is_finite() {
        return Err(SubproblemError::PriceBelowFloor { carrier: CarrierId(0), price });
    }
    Ok(bid / price)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn view(prices: &[(u32, f64)]) -> PriceView {
        PriceView {
            round: 1,
            entries: prices
                .iter()
                .map(|&(c, p)| PriceEntry { carrier: CarrierId(c), price: p, stop: false })
                .collect(),
        }
    }

    fn agent(reach: &[u32], damping: f64) -> UeAgent {
        let reach: Vec<CarrierId> = reach.iter().map(|&c| CarrierId(c)).collect();
        UeAgent::new(
            UeId(1),
            UtilityFunction::logarithmic(0.5, 100.0).unwrap(),
            reach.clone(),
            200.0,
            BidVector::zeros(&reach),
            damping,
        )
        .unwrap()
    }

    fn fixed(damping: f64) -> BidPolicy {
        BidPolicy { damping, adaptive: false, ..BidPolicy::default() }
    }

    // Bisection oracle: (1 + 0.5 r) ln(1 + 0.5 r) = 0.5 / p.
    fn log_demand_oracle(p: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 200.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (1.0 + 0.5 * mid) * libm::log(1.0 + 0.5 * mid) < 0.5 / p {
                lo = mid
            } else {
                hi = mid
            }
        }
        lo
    }

    #[test]
    fn single_carrier_bid() {
        let mut a = agent(&[1], 1.0);
        let bids = a.ue_step(&view(&[(1, 0.05)]), &fixed(1.0)).unwrap();
        let expect = 0.05 * log_demand_oracle(0.05);
        assert!((bids.entries[0].amount - expect).abs() < 1e-10);
        assert!((bids.entries[0].amount - 0.473).abs() < 1e-3);
    }

    #[test]
    fn cheaper_carrier_takes_all() {
        let mut a = agent(&[1, 2], 1.0);
        let bids = a.ue_step(&view(&[(1, 0.05), (2, 0.10)]), &fixed(1.0)).unwrap();
        assert!((bids.amount_for(CarrierId(1)).unwrap() - 0.05 * log_demand_oracle(0.05)).abs() < 1e-10);
        assert_eq!(bids.amount_for(CarrierId(2)).unwrap(), 0.0);
        assert!(log_demand_oracle(0.10) < log_demand_oracle(0.05));

        // Same thing with the order of the price list reversed.
        let mut a = agent(&[1, 2], 1.0);
        let bids = a.ue_step(&view(&[(2, 0.05), (1, 0.10)]), &fixed(1.0)).unwrap();
        assert_eq!(bids.amount_for(CarrierId(1)).unwrap(), 0.0);
        assert!(bids.amount_for(CarrierId(2)).unwrap() > 0.47);
    }

    #[test]
    fn tie_goes_to_lower_id() {
        let mut a = agent(&[2, 1], 1.0);
        let bids = a.ue_step(&view(&[(1, 0.05), (2, 0.05)]), &fixed(1.0)).unwrap();
        assert!(bids.amount_for(CarrierId(1)).unwrap() > 0.0);
        assert_eq!(bids.amount_for(CarrierId(2)).unwrap(), 0.0);
    }

    #[test]
    fn holdings_on_dearer_carrier_drain() {
        let held = |h: f64| {
            let reach = vec![CarrierId(1), CarrierId(2)];
            let initial = BidVector {
                entries: vec![
                    Bid { carrier: CarrierId(1), amount: 0.0 },
                    Bid { carrier: CarrierId(2), amount: 0.10 * h },
                ],
            };
            let u = UtilityFunction::logarithmic(0.5, 100.0).unwrap();
            UeAgent::new(UeId(1), u, reach, 200.0, initial, 1.0).unwrap()
        };
        let (d1, d2) = (log_demand_oracle(0.05), log_demand_oracle(0.10));

        // Half the price ratio of the holding survives, minus the demand gap.
        let rates = held(8.0).raw_rates(&view(&[(1, 0.05), (2, 0.10)]), 1e-9).unwrap();
        let keep = 8.0 * 0.5 - (d1 - d2);
        assert!(keep > 0.0);
        assert!((rates[1] - keep).abs() < 1e-9);
        assert!((rates[0] + rates[1] - d1).abs() < 1e-9);

        // Equal prices: the split is kept as long as it fits in the demand.
        let rates = held(5.0).raw_rates(&view(&[(1, 0.10), (2, 0.10)]), 1e-9).unwrap();
        assert!((rates[1] - 5.0).abs() < 1e-12);
        assert!((rates[0] - (d2 - 5.0)).abs() < 1e-9);

        // Holding more than the whole demand: the excess is released.
        let rates = held(20.0).raw_rates(&view(&[(1, 0.10), (2, 0.10)]), 1e-9).unwrap();
        assert!((rates[1] - d2).abs() < 1e-9);
        assert_eq!(rates[0], 0.0);
    }

    #[test]
    fn damping_mixes_with_last_bid() {
        let mut a = agent(&[1], 0.5);
        let raw = 0.05 * log_demand_oracle(0.05);
        let first = a.ue_step(&view(&[(1, 0.05)]), &fixed(0.5)).unwrap();
        assert!((first.entries[0].amount - 0.5 * raw).abs() < 1e-10);
        let second = a.ue_step(&view(&[(1, 0.05)]), &fixed(0.5)).unwrap();
        assert!((second.entries[0].amount - 0.75 * raw).abs() < 1e-10);
    }

    #[test]
    fn step_shrinks_on_oscillation() {
        let mut s = StepControl::new(0.7);
        assert_eq!(s.update(1.0, 0.7, true), 0.7);
        assert_eq!(s.update(-1.0, 0.7, true), 0.35);
        assert_eq!(s.update(1.0, 0.7, true), 0.175);
        assert!((s.update(1.0, 0.7, true) - 0.21).abs() < 1e-15);
        assert_eq!(s.update(0.0, 0.7, true), s.step());
        assert_eq!(s.update(-1.0, 0.7, false), 0.7);
    }

    #[test]
    fn missing_price_is_an_error() {
        let mut a = agent(&[1, 2], 1.0);
        let err = a.ue_step(&view(&[(1, 0.05)]), &fixed(1.0)).unwrap_err();
        assert_eq!(err, SubproblemError::MissingPrice { ue: UeId(1), carrier: CarrierId(2) });
    }

    #[test]
    fn final_rate_examples() {
        assert!((final_rate(0.473, 0.05, 1e-9).unwrap() - 9.46).abs() < 1e-12);
        assert_eq!(final_rate(0.0, 0.3, 1e-9).unwrap(), 0.0);
        assert_eq!(final_rate(2.5, 1.0, 1e-9).unwrap(), 2.5);
        assert!(final_rate(1.0, 0.0, 1e-9).is_err());
    }
}
