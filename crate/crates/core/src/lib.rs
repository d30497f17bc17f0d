//! Conditional dynamics of quantum systems driven by a single-photon wavepacket.
// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embedding;
pub mod error;
pub mod experiments;
pub mod filters;
pub mod harness;
pub mod hierarchy;
pub mod hilbert;
mod kernel;
pub mod output;
pub mod pulse;

pub use error::{Error, Result};
