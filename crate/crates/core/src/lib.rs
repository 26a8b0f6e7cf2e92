//! Sample-accurate 2x2 MIMO baseband modem and a four-node FDMA mesh simulator.
//!
//! The crate is organized bottom-up:
//!
//! - [`dsp`]: FIR design and filtering, NCO mixing, rate conversion and Golay
//!   sequences.
//! - [`framing`]: the over-the-air frame layout and its byte-level codecs.
//! - [`modem`]: transmit chain, channelizer and the full receive chain.
//! - [`channel`]: the shared medium connecting all nodes.
//! - [`mesh`]: band plan, complete-graph scheduling and link metrics.

pub mod channel;
pub mod dsp;
mod error;
pub mod framing;
pub mod mesh;
pub mod modem;

pub use error::{Error, Result};

/// Complex baseband sample.
pub type C64 = num_complex::Complex64;
