//! Simulation core for instruction-following driving agents: road networks,
//! vehicle kinematics, rule-based traffic, the driving primitive API, scenario
//! generation, scoring, and the agent wire protocol.

pub mod agents;
pub mod api;
pub mod behavior;
pub mod context;
pub mod engine;
pub mod eval;
pub mod geometry;
pub mod goal;
pub mod log;
pub mod network;
pub mod protocol;
pub mod scenario;
pub mod world;

pub use engine::{run_agent_observed, run_episode, Driver, EngineError, Episode, EpisodeOptions, EpisodeOutcome};
pub use behavior::{idm_acceleration, mobil_should_change, IdmParams, Leader, MobilParams};
pub use geometry::{OrientedBox, Polyline, Position};
pub use network::{LaneId, MapConfig, RoadNetwork};
pub use world::{step, Control, SimConfig, SimError, VehicleId, VehicleState, WorldSnapshot, WorldState};
