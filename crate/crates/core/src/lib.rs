pub mod bench;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod kernel;
pub mod quadrature;
pub mod selectors;
pub mod special;
pub mod targets;

pub use error::{Error, Result};
