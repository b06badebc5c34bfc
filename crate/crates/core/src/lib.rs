pub mod disparity;
pub mod error;
pub mod mitigate;
pub mod model;
pub mod origins;
pub mod rng;
pub mod semantic;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
