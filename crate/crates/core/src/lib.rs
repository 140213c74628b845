pub mod diagnostics;
pub mod error;
pub mod loss;
pub mod nn;
pub mod pde;
pub mod sampling;
pub mod smoothing;
pub mod trainer;

pub use error::{Error, Result};
