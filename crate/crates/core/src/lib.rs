pub mod bessel;
pub mod chaos;
pub mod cli;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod mc;
pub mod phase;
pub mod quad;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
