//! Principal eigenvalues of space-time periodic, weakly coupled cooperative
//! parabolic systems in one space dimension.

pub mod discretize;
pub mod error;
pub mod matrixkit;
pub mod model;
pub mod spectra;
pub mod analysis;
pub mod optimize;
pub mod config;
pub mod acceptance;

pub use error::{Error, Result};
