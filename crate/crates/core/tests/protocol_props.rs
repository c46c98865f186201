mod common;

use carrier_agg_core::{kkt_check, run, solve_central, AllocationResult, EngineConfig, ProtocolError, Scenario};
use proptest::prelude::*;

// The stop rule compares absolute bid changes with delta, so on random
// scenarios, whose prices can be a few thousandths, delta has to be far below
// the 1e-3 used for the reference scenario to say anything about accuracy.
fn tight() -> EngineConfig {
    EngineConfig { delta: 1e-6, max_rounds: 20_000, ..EngineConfig::default() }
}

fn converged(s: &Scenario, config: &EngineConfig) -> Option<AllocationResult> {
    if !common::well_posed(s) {
        return None;
    }
    match run(s, config) {
        Ok(r) => Some(r),
        Err(ProtocolError::NonConvergence(_)) => None,
        Err(e) => panic!("{e}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn capacity_is_used_and_rates_are_non_negative(s in common::scenario()) {
        let config = EngineConfig::default();
        let r = match run(&s, &config) {
            Ok(r) => r,
            Err(ProtocolError::NonConvergence(r)) => *r,
            Err(e) => panic!("{e}"),
        };
        for (l, c) in s.carriers().iter().enumerate() {
            if r.prices[l] > config.price_floor {
                let used = r.rates.carrier_sum(l);
                prop_assert!((used - c.capacity).abs() <= 1e-9 * c.capacity, "{used} of {}", c.capacity);
            }
            for i in 0..s.ues().len() {
                prop_assert!(r.rates.get(l, i) >= 0.0);
            }
        }
        if r.converged {
            prop_assert!(r.totals.iter().all(|&t| t > 0.0));
        }
    }

    #[test]
    fn converged_allocation_is_stationary(s in common::scenario()) {
        let config = tight();
        let Some(r) = converged(&s, &config) else { return Ok(()) };
        // The stop rule bounds bid changes; a UE whose marginal falls by a
        // factor e per 1/a of rate turns that into a marginal error of up to
        // about a * delta, and a reaches 10 here.
        let tol = 100.0 * config.delta;
        let report = kkt_check(&r, &s, tol).unwrap();
        prop_assert!(report.pass, "{report:?}");

        // Equal-price coupling over the links the report treats as active.
        for (i, ue) in s.ues().iter().enumerate() {
            let active: Vec<f64> = ue
                .reachable
                .iter()
                .map(|&c| s.carrier_index(c).unwrap())
                .filter(|&l| r.rates.get(l, i) > tol.sqrt())
                .map(|l| r.prices[l])
                .collect();
            for w in active.windows(2) {
                prop_assert!((w[0] - w[1]).abs() <= 2.0 * tol, "UE{}: {active:?}", i + 1);
            }
        }
    }

    #[test]
    fn converged_totals_match_oracle(s in common::scenario()) {
        let Some(r) = converged(&s, &tight()) else { return Ok(()) };
        let o = solve_central(&s, 1e-9).unwrap();
        for (i, (&a, &b)) in r.totals.iter().zip(&o.totals).enumerate() {
            prop_assert!((a - b).abs() <= 1e-2 * b, "UE{}: {a} vs {b}", i + 1);
        }
        prop_assert!((r.objective - o.objective).abs() <= 1e-3);
    }

    #[test]
    fn runs_are_deterministic(s in common::scenario()) {
        let config = EngineConfig::default();
        let a = run(&s, &config);
        let b = run(&s, &config);
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
