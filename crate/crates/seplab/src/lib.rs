//! Std companion to `seplab-core`: WAV and manifest IO, checkpoints, FFT
//! convolution, dataset generation, the training driver, evaluation, plots,
//! experiment configuration and the `seplab` subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod fftconv;
pub mod manifest;
pub mod plots;
pub mod training;
pub mod wav;

pub use error::{Error, Result};
pub use seplab_core as core;
