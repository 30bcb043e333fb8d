pub mod augment;
pub mod datasets;
pub mod featfile;
pub mod error;
pub mod eval;
pub mod fft;
pub mod filterbank;
pub mod image;
pub mod losses;
pub mod network;
pub mod rng;
pub mod scattering;
pub mod tensornet;
pub mod trainer;

pub use error::{Error, Result};
