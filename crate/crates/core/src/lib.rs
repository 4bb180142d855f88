pub mod cli;
pub mod diffnet;
pub mod error;
pub mod estimators;
pub mod glimpse;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
