//! Production-driven patch generation and validation on a simulated web application.

pub mod app;
pub mod experiments;
pub mod events;
pub mod faults;
pub mod harness;
pub mod oracles;
pub mod patch;
pub mod patch_service;
pub mod profile;
pub mod regression;
pub mod replay;
pub mod rng;
pub mod session;
pub mod signature;
pub mod store;
pub mod workload;
