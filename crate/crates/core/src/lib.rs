//! Active noise control simulation built around a hybrid of selective
//! fixed-filter control (a small 1D CNN picks a pre-trained control filter
//! once per frame) and sample-rate FxNLMS adaptation.
//!
//! Module map:
//!
//! - [`dsp`]: waveforms, FIR design, streaming and batch convolution, metrics.
//! - [`noise`]: seeded band-limited noise, scenario composition, path perturbation.
//! - [`adaptive`]: FxLMS / FxNLMS step functions and the fixed-filter controller.
//! - [`bank`]: control-filter pre-training, oracle labelling, dataset generation.
//! - [`classifier`]: the 1D CNN with hand-written backpropagation and Adam.
//! - [`hybrid`]: the two-rate controller and the experiment scenarios.
//! - [`config`]: the run configuration shared by the CLI and the experiments.

pub mod adaptive;
pub mod bank;
pub mod classifier;
pub mod config;
pub mod dsp;
pub mod error;
pub mod hybrid;
pub mod noise;

mod binio;

pub use error::{Error, Result};

/// System sample rate used throughout unless configured otherwise.
pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 16_000;
/// Number of pre-trained control filters.
pub const NUM_CONTROL_FILTERS: usize = 15;
