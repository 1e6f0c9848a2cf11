//! Deterministic simulator and control library for merging two single-lane
//! roads carrying a mix of automated and human-driven vehicles.
//!
//! A centralized coordinator keeps the crossing order of the two streams
//! safe for the automated vehicles to realize, and each automated vehicle
//! tracks its slot with a short-horizon quadratic program whose constraints
//! are control barrier functions. Human-driven vehicles follow car-following
//! models and are handled reactively near the merge point.

pub mod az;
pub mod barriers;
pub mod config;
pub mod controller;
pub mod dynamics;
pub mod hdv;
pub mod metrics;
pub mod oracle;
pub mod qp;
pub mod sequencing;
pub mod sim;
pub mod table;
pub mod trajectory;
pub mod vehicle;

pub use config::{ScenarioConfig, SequencingPolicy};
pub use sim::{run, RunResult, Simulation};
pub use table::VehicleTable;
pub use vehicle::{RoadId, VehicleClass, VehicleId, VehicleRecord, VehicleState, Zone};
