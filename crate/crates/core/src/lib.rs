pub mod adversary_detector;
pub mod allocation;
pub mod capacity;
pub mod channel_model;
pub mod cli;
pub mod compound;
pub mod covert_code;
pub mod covertness_meter;
pub mod error;
pub mod mc;

pub use error::{Error, Result};
