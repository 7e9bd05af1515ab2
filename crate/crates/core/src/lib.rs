//! Critical points of smooth isotropic Gaussian random fields.

pub mod acceptance;
pub mod correlation;
pub mod covariance;
pub mod error;
pub mod field;
pub mod goe;
pub mod kac_rice;
pub mod linalg;
pub mod montecarlo;
pub mod pfaffian;
pub mod special;

pub use error::{Error, Result};
