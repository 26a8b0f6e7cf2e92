use super::SampleBlock;
use crate::error::param;
use crate::{Result, C64};
use std::f64::consts::PI;

const TABLE_BITS: u32 = 16;

/// Ideal phase-accumulator oscillator.
///
/// The phase at absolute sample index `n` is `2π·frac(f·n) + φ0`, so the
/// output depends only on the index, never on how a stream was blocked.
/// Offsets that are multiples of 2^-16 are served from a per-period lookup
/// table holding the same values.
#[derive(Debug, Clone)]
pub struct Nco {
    freq: f64,
    phase0: f64,
    table: Option<Vec<C64>>,
}

impl Nco {
    pub fn new(freq_offset: f64, initial_phase: f64) -> Result<Self> {
        if !(freq_offset > -0.5 && freq_offset <= 0.5) {
            return Err(param(format!("NCO offset {freq_offset} outside (-0.5, 0.5]")));
        }
        let scaled = freq_offset * (1u64 << TABLE_BITS) as f64;
        let table = if scaled.fract() == 0.0 {
            let modulus = 1u64 << TABLE_BITS;
            let step = (scaled as i64).rem_euclid(modulus as i64) as u64;
            let period = if step == 0 { 1 } else { modulus / gcd(step, modulus) };
            let table = (0..period)
                .map(|n| {
                    let idx = (step * n) % modulus;
                    C64::from_polar(1.0, 2.0 * PI * (idx as f64 / modulus as f64) + initial_phase)
                })
                .collect();
            Some(table)
        } else {
            None
        };
        Ok(Nco {
            freq: freq_offset,
            phase0: initial_phase,
            table,
        })
    }

    pub fn freq(&self) -> f64 {
        self.freq
    }

    /// Unit phasor at absolute sample index `n`.
    #[inline]
    pub fn phasor(&self, n: u64) -> C64 {
        match &self.table {
            Some(table) => table[(n % table.len() as u64) as usize],
            None => {
                let cycles = (self.freq * n as f64).rem_euclid(1.0);
                C64::from_polar(1.0, 2.0 * PI * cycles + self.phase0)
            }
        }
    }

    /// Multiply `samples` (starting at absolute index `start`) in place.
    pub fn mix_in_place(&self, samples: &mut [C64], start: u64) {
        if let Some(table) = &self.table {
            let period = table.len() as u64;
            let mut idx = (start % period) as usize;
            for s in samples.iter_mut() {
                *s *= table[idx];
                idx += 1;
                if idx == table.len() {
                    idx = 0;
                }
            }
        } else {
            for (k, s) in samples.iter_mut().enumerate() {
                *s *= self.phasor(start + k as u64);
            }
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Frequency-shift a block by `freq_offset` cycles per sample.
pub fn nco_mix(input: &SampleBlock, freq_offset: f64, initial_phase: f64) -> Result<SampleBlock> {
    let nco = Nco::new(freq_offset, initial_phase)?;
    let mut out = input.clone();
    nco.mix_in_place(&mut out.samples, input.start_index);
    Ok(out)
}
