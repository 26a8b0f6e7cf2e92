//! Training-based 2×2 flat channel estimation.

use crate::error::{contract, Error};
use crate::framing::TrainingSequences;
use crate::{Result, C64};
use serde::{Deserialize, Serialize};

/// Estimates below this dominant magnitude are rejected.
pub const DEGENERATE_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimate {
    /// `h[i][j]`: TX antenna `j` to RX antenna `i`, normalized so the largest
    /// entry has unit magnitude.
    pub h: [[C64; 2]; 2],
    /// Largest raw entry magnitude, divided out of `h`.
    pub dominant_tap_mag: f64,
    /// Symbol index of the first training symbol.
    pub timestamp: u64,
}

impl ChannelEstimate {
    pub fn column_energy(&self, j: usize) -> f64 {
        self.h[0][j].norm_sqr() + self.h[1][j].norm_sqr()
    }

    pub fn total_energy(&self) -> f64 {
        self.column_energy(0) + self.column_energy(1)
    }

    pub fn scaled(&self, k: f64) -> ChannelEstimate {
        let mut out = *self;
        for row in out.h.iter_mut() {
            for v in row.iter_mut() {
                *v *= k;
            }
        }
        out
    }
}

fn correlate(y: &[C64], t: &[C64]) -> C64 {
    y.iter().zip(t).map(|(y, t)| y * t.conj()).sum::<C64>() / t.len() as f64
}

/// Estimate from the symbol-rate samples of each RX antenna over training A
/// (`rx_a[i]`) and training B (`rx_b[i]`).
pub fn estimate_channel(rx_a: [&[C64]; 2], rx_b: [&[C64]; 2], training: &TrainingSequences, timestamp: u64) -> Result<ChannelEstimate> {
    for y in rx_a.iter().chain(&rx_b) {
        if y.len() != training.antenna_a.len() {
            return Err(contract(format!("training window of {} symbols, expected {}", y.len(), training.antenna_a.len())));
        }
    }
    let mut h = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        h[i][0] = correlate(rx_a[i], &training.antenna_a);
        h[i][1] = correlate(rx_b[i], &training.antenna_b);
    }
    let d = h.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max);
    if !(d >= DEGENERATE_THRESHOLD) {
        return Err(Error::DegenerateChannel(d));
    }
    for v in h.iter_mut().flatten() {
        *v /= d;
    }
    Ok(ChannelEstimate {
        h,
        dominant_tap_mag: d,
        timestamp,
    })
}
