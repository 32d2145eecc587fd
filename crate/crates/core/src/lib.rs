pub mod cli;
pub mod coarsegrain;
pub mod error;
pub mod ising;
pub mod linalg;
pub mod rbm;
pub mod rng;
pub mod transport;
pub mod wishart;

pub use error::{Error, Result};
