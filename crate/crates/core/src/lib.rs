//! Anchor-relative inspection missions on a shared map.
//!
//! The crate covers the whole pipeline: rigid-body geometry and frame
//! lookup, a simulated spatial-anchor service, the serializable mission
//! graph and its store, mesh-to-occupancy-grid conversion, grid planning
//! with a kinematic robot, the gesture classifier, and the mission
//! executor that ties them together.

pub mod anchor_sim;
pub mod executor;
pub mod fixtures;
pub mod geometry;
pub mod gestures;
pub mod mission;
pub mod mapconv;
pub mod nav;
