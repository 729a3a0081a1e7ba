//! Runtime-savings prediction for simplifying discrete-event simulation models.
//!
//! The crate calibrates two regressions on the host machine, instructions per
//! arrival against occupancy and wall-clock savings against the reduction in
//! executed instructions, and uses them to predict how much faster a model
//! gets when subsystems are abstracted into LOS holds or aggregated.

pub mod calibration;
pub mod dist;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod kernel;
pub mod network;
pub mod predict;
pub mod regression;
pub mod sim;
pub mod simplify;
pub mod timing;
pub mod trace_metrics;

pub use error::{Error, Result};
