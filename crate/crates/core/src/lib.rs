//! Simultaneous control, planning and trajectory estimation for a planar
//! free-flying robot among moving obstacles, solved as one factor graph.

pub mod dynamics;
pub mod error;
pub mod factors;
pub mod graph;
pub mod planner;
pub mod scenario;
pub mod sdf;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use planner::{PlanSnapshot, PlanningMode, ScatePlanner};
pub use scenario::Scenario;
pub use sim::{run_episode, EpisodeLog};
