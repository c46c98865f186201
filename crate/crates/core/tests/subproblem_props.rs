use carrier_agg_core::subproblem::{Bid, BidPolicy, BidVector, PriceEntry, PriceView, UeAgent, DEFAULT_PRICE_FLOOR};
use carrier_agg_core::{CarrierId, UeId, UtilityFunction};
use proptest::prelude::*;

const R_CAP: f64 = 400.0;

fn utility() -> impl Strategy<Value = UtilityFunction> {
    prop_oneof![
        (0.5f64..=10.0, 5.0f64..=50.0).prop_map(|(a, b)| UtilityFunction::sigmoidal(a, b).unwrap()),
        (0.1f64..=20.0, 50.0f64..=200.0).prop_map(|(k, m)| UtilityFunction::logarithmic(k, m).unwrap()),
    ]
}

fn prices(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-3.0f64..1.0).prop_map(|e| 10f64.powf(e)), n)
}

fn carriers(n: usize) -> Vec<CarrierId> {
    (1..=n as u32).map(CarrierId).collect()
}

fn view(p: &[f64]) -> PriceView {
    PriceView {
        round: 1,
        entries: p
            .iter()
            .enumerate()
            .map(|(i, &price)| PriceEntry { carrier: CarrierId(i as u32 + 1), price, stop: false })
            .collect(),
    }
}

fn agent(u: UtilityFunction, bids: &[f64], damping: f64) -> UeAgent {
    let ids = carriers(bids.len());
    let initial = BidVector {
        entries: ids.iter().zip(bids).map(|(&carrier, &amount)| Bid { carrier, amount }).collect(),
    };
    UeAgent::new(UeId(1), u, ids, R_CAP, initial, damping).unwrap()
}

fn cheapest(p: &[f64]) -> usize {
    // Ties go to the lower carrier id.
    (0..p.len()).fold(0, |best, i| if p[i] < p[best] { i } else { best })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn raising_prices_never_raises_demand(
        u in utility(),
        p in prices(3),
        bump in prop::collection::vec(1.0f64..3.0, 3),
        held in prop::collection::vec(0.0f64..5.0, 3),
    ) {
        let a = agent(u, &held, 0.7);
        let higher: Vec<f64> = p.iter().zip(&bump).map(|(x, b)| x * b).collect();
        let before: f64 = a.raw_rates(&view(&p), DEFAULT_PRICE_FLOOR).unwrap().iter().sum();
        let after: f64 = a.raw_rates(&view(&higher), DEFAULT_PRICE_FLOOR).unwrap().iter().sum();
        prop_assert!(after <= before * (1.0 + 1e-12), "{before} -> {after}");
    }

    #[test]
    fn fresh_agent_fills_cheapest_carrier_only(u in utility(), p in prices(3)) {
        let a = agent(u, &[0.0; 3], 0.7);
        let raw = a.raw_rates(&view(&p), DEFAULT_PRICE_FLOOR).unwrap();
        let c = cheapest(&p);
        for (i, r) in raw.iter().enumerate() {
            if i == c {
                prop_assert!(*r > 0.0);
            } else {
                prop_assert_eq!(*r, 0.0);
            }
        }
    }

    #[test]
    fn demand_is_positive(
        u in utility(),
        p in prices(2),
        held in prop::collection::vec(0.0f64..50.0, 2),
    ) {
        let a = agent(u, &held, 0.7);
        let total: f64 = a.raw_rates(&view(&p), DEFAULT_PRICE_FLOOR).unwrap().iter().sum();
        prop_assert!(total > 0.0);
    }

    #[test]
    fn fixed_point_is_preserved(
        u in utility(),
        p in prices(2),
        tie in any::<bool>(),
        split in 0.0f64..=1.0,
        damping in 0.1f64..=1.0,
        adaptive in any::<bool>(),
    ) {
        let p = if tie { vec![p[0], p[0]] } else { p };
        let c = cheapest(&p);
        let demand = u.solve_rate_for_price(p[c], R_CAP).unwrap();
        // At equal prices any split of the demand is a rest point; otherwise
        // everything sits on the cheapest carrier.
        let rates = if tie {
            vec![split * demand, (1.0 - split) * demand]
        } else {
            let mut r = vec![0.0; 2];
            r[c] = demand;
            r
        };
        let bids: Vec<f64> = rates.iter().zip(&p).map(|(r, q)| r * q).collect();
        let mut a = agent(u, &bids, damping);
        let policy = BidPolicy { damping, adaptive, price_floor: DEFAULT_PRICE_FLOOR };
        let out = a.ue_step(&view(&p), &policy).unwrap();
        for (b, want) in out.entries.iter().zip(&bids) {
            prop_assert!((b.amount - want).abs() <= 1e-9 * (1.0 + want.abs()), "{} vs {want}", b.amount);
        }
    }
}
