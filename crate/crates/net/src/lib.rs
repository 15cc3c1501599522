//! The harness over HTTP: the production application as a server, the shadowing proxy
//! in front of it, the control API for operators, and the overhead measurement.

pub mod app_server;
pub mod asynchrony;
pub mod config;
pub mod control;
pub mod http;
pub mod overhead;
pub mod server;
pub mod shadower;
pub mod topology;

pub use config::{BadConfig, Config};
pub use shadower::{Shadower, ShadowerConfig, ShadowerStats};
pub use topology::{BootError, Topology};
