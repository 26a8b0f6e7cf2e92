//! Sample-level DSP kernels shared by the transmit and receive chains.
//!
//! All kernels operate on double-precision complex samples. Stateful kernels
//! ([`FirFilter`], [`RateChanger`], [`GolayCorrelator`]) produce bit-identical
//! output for any blocking of their input.

mod design;
mod fir;
mod golay;
mod nco;
mod resample;

pub use design::{design_kaiser_lowpass, design_srrc, freq_response, kaiser_beta, kaiser_order, FilterDesign, FirTaps};
pub use fir::{fir_filter, FirFilter, FirState, Tap};
pub use golay::{golay_pair, GolayCorrelator, GolayPair};
pub use nco::{nco_mix, Nco};
pub use resample::{rate_change, RateChanger};

use crate::C64;

/// Contiguous complex baseband samples with their rate and stream position.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    pub samples: Vec<C64>,
    /// Samples per second, or samples per symbol in normalized units.
    pub sample_rate: f64,
    /// Absolute index of `samples[0]` since stream start.
    pub start_index: u64,
}

impl SampleBlock {
    pub fn new(samples: Vec<C64>, sample_rate: f64, start_index: u64) -> Self {
        SampleBlock {
            samples,
            sample_rate,
            start_index,
        }
    }

    pub fn zeros(len: usize, sample_rate: f64, start_index: u64) -> Self {
        Self::new(vec![C64::new(0.0, 0.0); len], sample_rate, start_index)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Index one past the last sample.
    pub fn end_index(&self) -> u64 {
        self.start_index + self.samples.len() as u64
    }

    /// Mean power per sample, zero for an empty block.
    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

pub fn mean_power(samples: &[C64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64
}

pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}
