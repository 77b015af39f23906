pub mod assimilate;
pub mod cli;
pub mod error;
pub mod floquet;
pub mod integrate;
pub(crate) mod linalg;
pub mod model;
pub mod spectral;
pub mod timeseries;

pub use error::{Error, Result};
