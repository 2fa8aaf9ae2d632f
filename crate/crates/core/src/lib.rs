//! Mixed-traffic single-lane roundabout simulator. Automated vehicles are
//! driven by a receding-horizon program with barrier-function safety
//! constraints and merge in safe sequences; human drivers follow IDM.

pub mod controller;
pub mod experiments;
pub mod geometry;
pub mod sequencing;
pub mod simulator;
pub mod vehicle;
pub mod world;

pub use geometry::{RoundaboutLayout, Segment, SegmentRole};
pub use vehicle::{VehicleId, VehicleKind, VehicleLimits, VehicleState};
pub use world::World;
