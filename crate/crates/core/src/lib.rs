pub mod cli;
pub mod dssm;
pub mod ekf;
pub mod env;
pub mod error;
pub mod eval;
pub mod numkit;
pub mod scheduler;
pub mod trainer;

pub use error::{Error, Result};
