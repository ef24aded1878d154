//! Sinusoidal implicit neural representations (INRs) of sampled
//! power-system waveforms.
//!
//! A capture (one or more time-aligned voltage/current channels) is fitted
//! by a small multilayer perceptron that maps normalized time to signal
//! value. Single-layer, double-layer and shared-trunk multi-output networks
//! are supported, together with the tooling around them: synthetic event
//! generation, spectral analysis of raw and reconstructed signals, and the
//! sweep/comparison protocols exposed by the `waveinr` binary.

pub mod cli;
pub mod error;
pub mod waveform;
pub mod model;
pub mod fitted;
pub mod optim;
pub mod trainer;
pub mod experiment;
pub mod spectrum;
pub mod synth;

mod engine;
mod trig;

pub use error::{Error, Result};
