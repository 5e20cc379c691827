//! Asynchronous decentralized unit commitment: network model, regional
//! subproblems, consensus exchange, controller and agents, and the run
//! drivers.

pub mod agent;
pub mod case;
pub mod centralized;
pub mod consensus;
pub mod controller;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod runtime;
pub mod subproblem;

pub use error::{Error, Result};
