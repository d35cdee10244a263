//! Kinematics-based whole-body control for a holonomic mobile manipulator.
//!
//! The crate maps 6-DoF end-effector targets to joint position commands for
//! the base and arm together ([`wbc`]), executes hybrid keypose/dense action
//! streams on top of that controller ([`executor`]), and provides the
//! deterministic geometry that surrounds a point-cloud keypose policy
//! ([`perception`]). A kinematic simulator with a 10 Hz episode recorder,
//! replay and benchmarking lives in [`harness`].

pub mod collision;
pub mod error;
pub mod executor;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod perception;
pub mod qp;
pub mod wbc;

pub use error::{Error, Result};
pub use geometry::{Pose, Rotation, Twist};
pub use model::{JointConfig, RobotModel};
pub use wbc::{WbcParams, WbcResult};
