pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod sea;
pub mod spiking;

pub use error::{DosaError, Result};
