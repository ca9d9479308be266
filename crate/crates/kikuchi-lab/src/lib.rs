pub mod cli;
pub mod combinat;
pub mod error;
pub mod guiding;
pub mod instances;
pub mod kikuchi;
pub mod qsim;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod tensorpca;

pub use error::{Error, Result};
