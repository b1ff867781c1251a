//! Time-domain speech separation on a dual-path RNN backbone.
//!
//! The crate is `no_std` (with `alloc`) and holds every numeric piece of the
//! experiment: a small reverse-mode autodiff tape, the learned waveform codec,
//! the dual-path blocks, the three separation assemblies (SIMO-only, mixed
//! SIMO-SISO and iterative SISO-only), losses, the optimizer, the room/scene
//! simulator and the overlap-bucketed report. File formats, the training
//! driver and the command line live in the `seplab` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod codec;
pub mod dprnn;
pub mod error;
pub mod eval;
pub mod losses;
pub mod math;
pub mod matrix;
pub mod models;
pub mod optim;
pub mod params;
pub mod report;
pub mod rng;
pub mod scene;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Sample rate used throughout (2 ms windows are 32 samples).
pub const SAMPLE_RATE: u32 = 16_000;
