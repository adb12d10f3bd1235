pub mod analysis;
pub mod autograd;
pub mod cli;
pub mod error;
pub mod field;
pub mod filterbank;
pub mod fourier;
pub mod imageio;
pub mod morlet;
pub mod scattering;
pub mod training;

pub use error::{Error, Result};
