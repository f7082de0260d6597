pub mod analysis;
pub mod cli;
pub mod control;
pub mod error;
pub mod metrics;
pub mod netmodel;
pub mod powerflow;
pub mod simengine;

pub use error::{Error, Result};
