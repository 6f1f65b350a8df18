//! Speech enhancement front-end toolkit.
//!
//! The crate bundles the building blocks of a noisy, reverberant,
//! multi-microphone recognition front-end:
//!
//! - [`audio`]: WAV I/O and channel alignment helpers.
//! - [`spectral`]: STFT/ISTFT, Mel filterbank with its pseudo-inverse,
//!   log-Mel features, deltas and standardization.
//! - [`neural`]: LSTM/BLSTM/feed-forward sequence networks trained with
//!   full back-propagation through time.
//! - [`sse`]: single-channel enhancement by spectral subtraction driven by
//!   predicted speech and noise log-Mel features.
//! - [`pef`]: phase-error based multi-channel filtering.
//! - [`cs`]: correlation shaping of LP residuals with a multi-input
//!   single-output equalizer.
//! - [`lm`]: LSTM language model, ARPA back-off scoring, interpolation,
//!   data selection and N-best rescoring.
//! - [`harness`]: synthetic scenes, objective metrics and the pipeline
//!   driver used by the command line tool.

// `!(x > 0.0)` is deliberate: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod cs;
mod error;
pub mod harness;
pub mod lm;
pub mod neural;
pub mod pef;
pub mod spectral;
pub mod sse;

pub use error::{Error, ErrorKind, Result};

/// Sample rate assumed by all frame-size defaults.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
