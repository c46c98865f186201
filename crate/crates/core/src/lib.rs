//! Utility-proportional-fair rate allocation over aggregated carriers.
//!
//! UEs with sigmoidal or logarithmic utilities bid for rate on the carriers
//! they can reach; carriers turn the bids into shadow prices. The bidding
//! protocol lives in [`subproblem`] (UE side) and [`protocol`] (carrier side
//! and the round loop). [`oracle`] solves the same problem centrally and
//! checks the optimality conditions of any candidate allocation.

#![no_std]

extern crate alloc;

pub mod oracle;
pub mod protocol;
pub mod scenario;
pub mod subproblem;
pub mod utility;

pub use protocol::{run, AllocationResult, EngineConfig, ProtocolError, RateMatrix};
pub use scenario::{build_paper_scenario, Carrier, CarrierId, Scenario, SweepSpec, UeId, UeSpec};
pub use utility::UtilityFunction;
pub use oracle::{kkt_check, solve_central, KktReport, OracleSolution};
