pub mod analysis;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod io;
pub mod lfads;
pub mod nn;
pub mod synth;

pub use error::{Error, Result};
