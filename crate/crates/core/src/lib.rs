pub mod cli;
pub mod error;
pub mod haze;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
