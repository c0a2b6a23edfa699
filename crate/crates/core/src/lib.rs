//! Benchmark pipeline for classifying synthetic fluorescence dental images
//! with a residual CNN and seven shallow baselines.

pub mod cli;
pub mod cnn;
pub mod conv;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod io;
pub mod seed;
pub mod shallow;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Channel, ChannelMask, Matrix, Tensor3};
