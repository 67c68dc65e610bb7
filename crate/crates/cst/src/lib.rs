//! Data files, provenance records, experiment protocols and the command
//! line front end for covariance scattering transforms.

pub mod cli;
pub mod error;
pub mod harness;
pub mod io;

pub use error::{AppError, AppResult};
