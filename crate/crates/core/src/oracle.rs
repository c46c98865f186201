//! Centralized reference solver and optimality certificate.
//!
//! [`solve_central`] maximizes `sum_i ln U_i(sum_l r_li)` subject to
//! `sum_i r_li <= R_l` and `r >= 0` by projected gradient ascent. The
//! feasible set is a product of one capped simplex per carrier, so the
//! projection splits into independent [`project_carrier_block`] calls.
//! The iteration uses Nesterov momentum with a restart whenever the objective
//! drops, which matters because the curvature along directions that trade
//! rate between two users on flat stretches of their sigmoids can be six
//! orders of magnitude below the curvature elsewhere.
//!
//! [`kkt_check`] certifies any candidate allocation, from this solver or
//! from the bidding protocol, against the first-order optimality conditions.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::fmt;

use crate::protocol::{AllocationResult, RateMatrix};
use crate::scenario::Scenario;
use crate::utility::UtilityError;

/// Euclidean projection of `x` onto `{y >= 0, sum(y) <= capacity}`.
pub fn project_carrier_block(x: &[f64], capacity: f64) -> Vec<f64> {
    let clipped_sum: f64 = x.iter().map(|v| v.max(0.0)).sum();
    if clipped_sum <= capacity {
        return x.iter().map(|v| v.max(0.0)).collect();
    }
    // Threshold tau with sum(max(x - tau, 0)) = capacity.
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite input"));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - capacity) / (j + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    x.iter().map(|v| (v - tau).max(0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Stop once the unit-step projected gradient has max-norm at most this.
    pub tol: f64,
    pub max_iters: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { tol: 1e-9, max_iters: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub rates: RateMatrix,
    pub totals: Vec<f64>,
    /// Recovered capacity prices, one per carrier.
    pub prices: Vec<f64>,
    pub objective: f64,
    pub kkt: KktReport,
    pub iterations: u64,
    /// Max-norm of the unit-step projected gradient at the returned point.
    pub pg_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    BadTolerance(f64),
    Utility(UtilityError),
    /// Iteration budget exhausted; carries the last iterate.
    NonConvergence(Box<OracleSolution>),
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::BadTolerance(t) => write!(f, "tolerance {t} must be positive"),
            OracleError::Utility(e) => write!(f, "{e}"),
            OracleError::NonConvergence(s) => write!(
                f,
                "projected gradient did not converge in {} iterations (residual {:e})",
                s.iterations, s.pg_norm
            ),
        }
    }
}

impl core::error::Error for OracleError {}

impl From<UtilityError> for OracleError {
    fn from(e: UtilityError) -> Self {
        OracleError::Utility(e)
    }
}

/// Anything [`kkt_check`] can certify.
pub trait Candidate {
    fn rates(&self) -> &RateMatrix;
    fn prices(&self) -> &[f64];
}

impl Candidate for AllocationResult {
    fn rates(&self) -> &RateMatrix {
        &self.rates
    }
    fn prices(&self) -> &[f64] {
        &self.prices
    }
}

impl Candidate for OracleSolution {
    fn rates(&self) -> &RateMatrix {
        &self.rates
    }
    fn prices(&self) -> &[f64] {
        &self.prices
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// Max over links of `|marginal_i - p_l|` for active links and
    /// `max(0, marginal_i - p_l)` for inactive ones.
    pub stationarity: f64,
    /// Max over carriers of `p_l * |R_l - sum_i r_li|`.
    pub complementary_slackness: f64,
    /// Worst capacity overrun relative to capacity, or most negative rate.
    pub primal_infeasibility: f64,
    /// `L(r, p) = sum_i ln U_i(total_i) + sum_l p_l (R_l - sum_i r_li)`.
    pub lagrangian: f64,
    /// `max_r L(r, p)`, attained by every UE taking its demand at its
    /// cheapest carrier.
    pub dual_value: f64,
    pub objective: f64,
    pub tol: f64,
    pub pass: bool,
}

impl KktReport {
    pub fn duality_gap(&self) -> f64 {
        self.dual_value - self.objective
    }
}

// Demand computations for the dual use a ceiling far above any capacity.
const DUAL_RATE_CAP: f64 = 1e12;

/// Check the optimality conditions of `candidate` with tolerance `tol`.
///
/// A link counts as active when its rate exceeds `sqrt(tol)`, the same
/// threshold the oracle uses to recover prices.
pub fn kkt_check<C: Candidate + ?Sized>(candidate: &C, scenario: &Scenario, tol: f64) -> Result<KktReport, UtilityError> {
    let rates = candidate.rates();
    let prices = candidate.prices();
    let active = libm::sqrt(tol);
    let totals = rates.ue_totals();

    let mut objective = 0.0;
    let mut stationarity: f64 = 0.0;
    let mut infeasible: f64 = 0.0;
    let mut dual_value = 0.0;
    for (i, ue) in scenario.ues().iter().enumerate() {
        objective += ue.utility.log_utility(totals[i])?;
        let marginal = if totals[i] > 0.0 { ue.utility.marginal(totals[i])? } else { f64::INFINITY };
        let mut cheapest = f64::INFINITY;
        for &c in &ue.reachable {
            let l = scenario.carrier_index(c).expect("validated scenario");
            let r = rates.get(l, i);
            infeasible = infeasible.max(-r);
            let residual = if r > active { (marginal - prices[l]).abs() } else { (marginal - prices[l]).max(0.0) };
            stationarity = stationarity.max(residual);
            cheapest = cheapest.min(prices[l]);
        }
        // At a zero price the supremum is ln U(infinity) = 0.
        if cheapest > 0.0 {
            let t = ue.utility.solve_rate_for_price(cheapest, DUAL_RATE_CAP)?;
            dual_value += ue.utility.log_utility(t)? - cheapest * t;
        }
    }

    let mut slackness: f64 = 0.0;
    let mut lagrangian = objective;
    for (l, carrier) in scenario.carriers().iter().enumerate() {
        let slack = carrier.capacity - rates.carrier_sum(l);
        infeasible = infeasible.max(-slack / carrier.capacity);
        slackness = slackness.max((prices[l] * slack).abs());
        lagrangian += prices[l] * slack;
        dual_value += prices[l] * carrier.capacity;
    }

    let pass = stationarity <= tol && slackness <= tol && infeasible <= tol;
    Ok(KktReport {
        stationarity,
        complementary_slackness: slackness,
        primal_infeasibility: infeasible,
        lagrangian,
        dual_value,
        objective,
        tol,
        pass,
    })
}

/// Problem data flattened to the reachable links.
struct Links<'a> {
    scenario: &'a Scenario,
    /// `(carrier index, UE index)` per variable, grouped by carrier.
    link: Vec<(usize, usize)>,
    /// Variable range of each carrier's block.
    block: Vec<core::ops::Range<usize>>,
}

impl<'a> Links<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        let mut link = Vec::new();
        let mut block = Vec::new();
        for (l, c) in scenario.carriers().iter().enumerate() {
            let start = link.len();
            for (i, ue) in scenario.ues().iter().enumerate() {
                if ue.reachable.contains(&c.id) {
                    link.push((l, i));
                }
            }
            block.push(start..link.len());
        }
        Self { scenario, link, block }
    }

    fn totals(&self, x: &[f64]) -> Vec<f64> {
        let mut t = alloc::vec![0.0; self.scenario.ues().len()];
        for (v, &(_, i)) in x.iter().zip(&self.link) {
            t[i] += v;
        }
        t
    }

    fn objective(&self, x: &[f64]) -> Result<f64, UtilityError> {
        let mut sum = 0.0;
        for (ue, t) in self.scenario.ues().iter().zip(self.totals(x)) {
            sum += ue.utility.log_utility(t.max(0.0))?;
        }
        Ok(sum)
    }

    /// Gradient, or `None` when some UE has no rate at all.
    fn gradient(&self, x: &[f64]) -> Result<Option<Vec<f64>>, UtilityError> {
        let totals = self.totals(x);
        let mut marginal = Vec::with_capacity(totals.len());
        for (ue, &t) in self.scenario.ues().iter().zip(&totals) {
            if !(t > 0.0) {
                return Ok(None);
            }
            marginal.push(ue.utility.marginal(t)?);
        }
        Ok(Some(self.link.iter().map(|&(_, i)| marginal[i]).collect()))
    }

    fn project(&self, x: &mut [f64]) {
        for (l, range) in self.block.iter().enumerate() {
            let p = project_carrier_block(&x[range.clone()], self.scenario.carriers()[l].capacity);
            x[range.clone()].copy_from_slice(&p);
        }
    }

    fn start(&self) -> Vec<f64> {
        let counts = self.scenario.users_in_range();
        self.link
            .iter()
            .map(|&(l, _)| self.scenario.carriers()[l].capacity / counts[l] as f64)
            .collect()
    }

    fn to_matrix(&self, x: &[f64]) -> RateMatrix {
        let mut m = RateMatrix::zeros(self.scenario.carriers().len(), self.scenario.ues().len());
        for (v, &(l, i)) in x.iter().zip(&self.link) {
            m.set(l, i, *v);
        }
        m
    }

    fn from_matrix(&self, m: &RateMatrix) -> Vec<f64> {
        self.link.iter().map(|&(l, i)| m.get(l, i)).collect()
    }

    // Max-norm of P(x + g) - x.
    fn pg_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        let mut z: Vec<f64> = x.iter().zip(g).map(|(a, b)| a + b).collect();
        self.project(&mut z);
        z.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Objective `sum_i ln U_i(total_i)` of an allocation given as a matrix.
pub fn objective_at(scenario: &Scenario, rates: &RateMatrix) -> Result<f64, UtilityError> {
    let links = Links::new(scenario);
    links.objective(&links.from_matrix(rates))
}

/// Gradient of [`objective_at`] with respect to every reachable link;
/// unreachable entries are zero. `None` when some UE has zero total.
pub fn objective_gradient(scenario: &Scenario, rates: &RateMatrix) -> Result<Option<RateMatrix>, UtilityError> {
    let links = Links::new(scenario);
    Ok(links.gradient(&links.from_matrix(rates))?.map(|g| links.to_matrix(&g)))
}

/// Solve from the default start `r_li = R_l / M_l`.
pub fn solve_central(scenario: &Scenario, tol: f64) -> Result<OracleSolution, OracleError> {
    solve_central_with(scenario, &OracleConfig { tol, ..OracleConfig::default() }, None)
}

const STEP_MAX: f64 = 1e6;
const STEP_MIN: f64 = 1e-14;

/// Solve with an explicit configuration and, optionally, a starting point
/// (projected onto the feasible set first).
pub fn solve_central_with(
    scenario: &Scenario,
    config: &OracleConfig,
    start: Option<&RateMatrix>,
) -> Result<OracleSolution, OracleError> {
    if !(config.tol.is_finite() && config.tol > 0.0) {
        return Err(OracleError::BadTolerance(config.tol));
    }
    let links = Links::new(scenario);
    let mut x = match start {
        Some(m) => {
            let mut v = links.from_matrix(m);
            links.project(&mut v);
            v
        }
        None => links.start(),
    };
    let mut fx = links.objective(&x)?;
    if !fx.is_finite() {
        // Some UE starts with nothing; fall back to the even split.
        x = links.start();
        fx = links.objective(&x)?;
    }

    let mut gx = links.gradient(&x)?.expect("start keeps every total positive");
    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut momentum = 1.0_f64;
    let mut step = 1.0_f64;
    let mut iterations = 0;
    let mut pg = links.pg_norm(&x, &gx);

    while pg > config.tol && iterations < config.max_iters {
        iterations += 1;

        // Backtrack until the step is below the inverse local curvature.
        // Function values alone cannot decide this near the optimum, where
        // the predicted gain falls under their rounding error.
        let (z, fz, gz) = loop {
            let mut z: Vec<f64> = y.iter().zip(&gy).map(|(a, b)| a + step * b).collect();
            links.project(&mut z);
            let fz = links.objective(&z)?;
            if fz.is_finite() {
                if let Some(gz) = links.gradient(&z)? {
                    let d: Vec<f64> = z.iter().zip(&y).map(|(a, b)| a - b).collect();
                    let dd = dot(&d, &d);
                    let curvature = -(dot(&gz, &d) - dot(&gy, &d));
                    if curvature * step <= dd || dd == 0.0 {
                        break (z, fz, gz);
                    }
                }
            }
            step *= 0.5;
            if step < STEP_MIN {
                return Err(OracleError::NonConvergence(Box::new(finish(&links, &x, config.tol, iterations, pg)?)));
            }
        };

        // Restart the momentum when the step turns against the last move.
        let along: f64 = z.iter().zip(&y).zip(&x).map(|((a, b), c)| (a - b) * (a - c)).sum();
        let next_momentum = if along < 0.0 || !(fz >= fx - 1e-12 * fx.abs()) {
            1.0
        } else {
            (1.0 + libm::sqrt(1.0 + 4.0 * momentum * momentum)) / 2.0
        };
        let beta = if next_momentum == 1.0 { 0.0 } else { (momentum - 1.0) / next_momentum };
        momentum = next_momentum;

        y = z.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
        x = z;
        fx = fz;
        gx = gz;
        pg = links.pg_norm(&x, &gx);
        gy = if beta == 0.0 {
            gx.clone()
        } else {
            links.project(&mut y);
            match links.gradient(&y)? {
                Some(g) => g,
                None => {
                    y.clone_from(&x);
                    momentum = 1.0;
                    gx.clone()
                }
            }
        };
        step = (step * 2.0).min(STEP_MAX);
    }

    let solution = finish(&links, &x, config.tol, iterations, pg)?;
    if pg <= config.tol {
        Ok(solution)
    } else {
        Err(OracleError::NonConvergence(Box::new(solution)))
    }
}

fn finish(links: &Links<'_>, x: &[f64], tol: f64, iterations: u64, pg_norm: f64) -> Result<OracleSolution, OracleError> {
    let scenario = links.scenario;
    let rates = links.to_matrix(x);
    let totals = rates.ue_totals();
    let threshold = libm::sqrt(tol);

    // Price of a carrier: mean marginal of its active users; with none
    // active, the largest marginal among its users keeps them content.
    let mut prices = Vec::with_capacity(scenario.carriers().len());
    for (l, range) in links.block.iter().enumerate() {
        let (mut sum, mut n, mut top) = (0.0, 0usize, 0.0_f64);
        for k in range.clone() {
            let i = links.link[k].1;
            let m = scenario.ues()[i].utility.marginal(totals[i])?;
            top = top.max(m);
            if rates.get(l, i) > threshold {
                sum += m;
                n += 1;
            }
        }
        prices.push(if n > 0 { sum / n as f64 } else { top });
    }

    let objective = links.objective(x)?;
    let mut solution = OracleSolution {
        rates,
        totals,
        prices,
        objective,
        kkt: KktReport {
            stationarity: 0.0,
            complementary_slackness: 0.0,
            primal_infeasibility: 0.0,
            lagrangian: objective,
            dual_value: objective,
            objective,
            tol,
            pass: false,
        },
        iterations,
        pg_norm,
    };
    solution.kkt = kkt_check(&solution, scenario, tol)?;
    Ok(solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Carrier, CarrierId, UeId, UeSpec};
    use crate::utility::UtilityFunction;
    use alloc::vec;

    fn one_carrier(utils: &[UtilityFunction], capacity: f64) -> Scenario {
        let ues = utils
            .iter()
            .enumerate()
            .map(|(i, &utility)| UeSpec { id: UeId(i as u32 + 1), utility, reachable: vec![CarrierId(1)] })
            .collect();
        Scenario::new("t", vec![Carrier { id: CarrierId(1), capacity }], ues).unwrap()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_carrier_block(&[-1.0, 2.0], 10.0), vec![0.0, 2.0]);
        assert_eq!(project_carrier_block(&[6.0, 6.0], 10.0), vec![5.0, 5.0]);
        assert_eq!(project_carrier_block(&[0.0, 0.0], 10.0), vec![0.0, 0.0]);
        let p = project_carrier_block(&[9.0, 4.0, -3.0], 10.0);
        assert!((p[0] - 7.5).abs() < 1e-12 && (p[1] - 2.5).abs() < 1e-12 && p[2] == 0.0);
    }

    #[test]
    fn identical_log_users_split_evenly() {
        let u = UtilityFunction::logarithmic(3.0, 100.0).unwrap();
        let s = one_carrier(&[u, u], 100.0);
        let sol = solve_central(&s, 1e-10).unwrap();
        assert!((sol.totals[0] - 50.0).abs() < 1e-8);
        let expect = 2.0 * u.log_utility(50.0).unwrap();
        assert!((sol.objective - expect).abs() < 1e-10);
        assert!(sol.kkt.pass);
    }

    #[test]
    fn mixed_pair_equalizes_marginals() {
        let sig = UtilityFunction::sigmoidal(5.0, 10.0).unwrap();
        let log = UtilityFunction::logarithmic(0.5, 100.0).unwrap();
        let s = one_carrier(&[sig, log], 100.0);
        let sol = solve_central(&s, 1e-10).unwrap();

        // Scalar bisection on marginal_sig(r) - marginal_log(100 - r).
        let (mut lo, mut hi) = (1e-9, 100.0 - 1e-9);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sig.marginal(mid).unwrap() > log.marginal(100.0 - mid).unwrap() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((sol.totals[0] - lo).abs() < 1e-6, "{} vs {lo}", sol.totals[0]);
        assert!((sol.prices[0] - sig.marginal(lo).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn perturbing_a_rate_grows_stationarity() {
        let sig = UtilityFunction::sigmoidal(5.0, 10.0).unwrap();
        let log = UtilityFunction::logarithmic(0.5, 100.0).unwrap();
        let s = one_carrier(&[sig, log], 100.0);
        let sol = solve_central(&s, 1e-10).unwrap();
        let mut bumped = sol.clone();
        let r = bumped.rates.get(0, 1);
        bumped.rates.set(0, 1, r * 1.01);
        let after = kkt_check(&bumped, &s, 1e-10).unwrap();
        assert!(after.stationarity > sol.kkt.stationarity);
    }

    #[test]
    fn rejects_bad_tolerance() {
        let s = one_carrier(&[UtilityFunction::logarithmic(3.0, 100.0).unwrap()], 100.0);
        assert!(matches!(solve_central(&s, 0.0), Err(OracleError::BadTolerance(_))));
    }
}
