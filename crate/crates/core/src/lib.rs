//! Simulation and verification of south-last fault-tolerant routing on
//! unidirectional near-Manhattan controller networks.

pub mod cli;
pub mod error;
pub mod faults;
pub mod ft_routing;
pub mod routing;
pub mod sim;
pub mod topology;
pub mod verification;

pub use error::{Error, Result};
