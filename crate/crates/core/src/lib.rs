pub mod audio;
pub mod augment;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod features;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
