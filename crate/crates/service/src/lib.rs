//! Live teleoperation service: streams robot state over a WebSocket and
//! drives the kinematic simulator through the whole-body controller.
//!
//! Clients connect to `/ws?role=observer` or `/ws?role=controller` (add
//! `&takeover=true` to replace an existing controller). Every tick the
//! service sends a `state` message to all clients; only the controller may
//! send commands.

pub mod control;
pub mod protocol;
pub mod server;

pub use control::ControlLoop;
pub use protocol::{CommandMessage, Role, ServerMessage, StateMessage};
pub use server::{serve, start, ServiceConfig, ServiceHandle, DEFAULT_TICK};
