//! Operating-period simulation and estimation of the game inputs.

pub mod battery;
pub mod estimate;
pub mod mfd;
pub mod network;
pub mod simulate;

pub use battery::{discharge_step, VehicleState};
pub use estimate::{
    assemble_game, build_game, build_polytopes, charging_demand, compute_feasibility,
    estimate_company_params, estimate_driver_params, government_objective, CompanyEstimate,
    CompanyFleet, GameInputs,
};
pub use mfd::mfd_speed;
pub use network::RoadNetwork;
pub use simulate::{simulate_period, Request, Scenario, Snapshot};
