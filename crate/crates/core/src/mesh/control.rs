//! Operator commands accepted by a running network.

use crate::framing::DiversityMode;
use crate::mesh::payload::PayloadSource;
use crate::modem::Modulation;
use serde::{Deserialize, Serialize};

/// Largest linear transmit gain accepted by `SetGain`.
pub const MAX_GAIN: f64 = 4.0;
/// Accepted range for `SetSnr`, in dB.
pub const SNR_RANGE_DB: (f64, f64) = (-30.0, 100.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Control {
    SetGain { node: usize, gain: f64 },
    SetModulation { node: usize, modulation: Modulation },
    SetDiversity { node: usize, mode: DiversityMode },
    /// Receive SNR of one node, or of every node when `node` is `None`.
    SetSnr { node: Option<usize>, snr_db: f64 },
    /// Exchange the bands of two nodes at a common frame boundary.
    SwapBands { a: usize, b: usize },
    /// Move one node to a band. Only a no-op can succeed, since every band
    /// is always owned.
    AssignBand { node: usize, band: usize },
    SetPayloadSource { node: usize, source: PayloadSource },
    /// Stop one node's transmitter, or all of them.
    Pause { node: Option<usize> },
    Resume { node: Option<usize> },
}
