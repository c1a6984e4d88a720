#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN
//! Multi-model federated learning scheduler and round-based simulator.

pub mod batch_adapt;
pub mod config;
pub mod deadline;
pub mod domain;
mod error;
pub mod experiment;
pub mod numeric;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod selection;
pub mod sim;
pub mod utility;

pub use error::{Error, Result};
