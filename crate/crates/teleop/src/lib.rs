//! Teleoperation server: exposes the simulator over a length-prefixed JSON
//! protocol and records successful episodes as demonstrations at 30 Hz.

pub mod client;
pub mod protocol;
pub mod server;
pub mod session;

pub use client::TeleopClient;
pub use protocol::{ControlMessage, FrameMessage, Handshake, RecordEvent, ResetRequest};
pub use server::{bind, serve, TickMode, TICK_HZ};
pub use session::{Session, SessionConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error("cannot bind: {0}")]
    Bind(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Demo(#[from] demoaug_core::demo::DemoError),
}
