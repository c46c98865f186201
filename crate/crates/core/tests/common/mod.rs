#![allow(dead_code)]

use carrier_agg_core::{Carrier, CarrierId, Scenario, UeId, UeSpec, UtilityFunction};
use proptest::prelude::*;

pub fn utility() -> impl Strategy<Value = UtilityFunction> {
    prop_oneof![
        (0.5f64..=10.0, 5.0f64..=50.0).prop_map(|(a, b)| UtilityFunction::sigmoidal(a, b).unwrap()),
        (0.1f64..=20.0, 50.0f64..=200.0).prop_map(|(k, m)| UtilityFunction::logarithmic(k, m).unwrap()),
    ]
}

/// Two carriers and two to six UEs, each reaching carrier 1, carrier 2 or
/// both.
pub fn scenario() -> impl Strategy<Value = Scenario> {
    (
        prop::collection::vec(20.0f64..200.0, 2),
        prop::collection::vec((utility(), 0u8..3), 2..=6),
    )
        .prop_filter_map("valid scenario", |(caps, ues)| {
            let carriers = caps
                .iter()
                .enumerate()
                .map(|(i, &capacity)| Carrier { id: CarrierId(i as u32 + 1), capacity })
                .collect();
            let ues = ues
                .into_iter()
                .enumerate()
                .map(|(i, (utility, reach))| UeSpec {
                    id: UeId(i as u32 + 1),
                    utility,
                    reachable: match reach {
                        0 => vec![CarrierId(1)],
                        1 => vec![CarrierId(2)],
                        _ => vec![CarrierId(1), CarrierId(2)],
                    },
                })
                .collect();
            Scenario::new("random", carriers, ues).ok()
        })
}

/// Optimal prices all at least `1e-6`. Below that every user is saturated,
/// the objective is flat to machine precision, and neither absolute KKT
/// tolerances nor the protocol's price floor can tell allocations apart.
pub fn well_posed(s: &Scenario) -> bool {
    let o = carrier_agg_core::solve_central(s, 1e-9).unwrap();
    o.prices
        .iter()
        .enumerate()
        .all(|(l, &p)| s.users_in_range()[l] == 0 || p >= 1e-6)
}
