use crate::error::param;
use crate::{Result, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// How a set of taps was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FilterDesign {
    Srrc {
        roll_off: f64,
        span_symbols: usize,
        samples_per_symbol: usize,
    },
    KaiserLowpass {
        passband_edge: f64,
        stopband_edge: f64,
        stopband_atten_db: f64,
        beta: f64,
    },
    Custom,
}

/// Real FIR coefficients plus their design metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FirTaps {
    pub taps: Vec<f64>,
    pub description: FilterDesign,
}

impl FirTaps {
    pub fn new(taps: Vec<f64>, description: FilterDesign) -> Self {
        FirTaps { taps, description }
    }

    /// Single unit tap.
    pub fn identity() -> Self {
        Self::new(vec![1.0], FilterDesign::Custom)
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }

    /// Group delay of a linear-phase design in samples.
    pub fn group_delay(&self) -> f64 {
        (self.taps.len() as f64 - 1.0) / 2.0
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.taps.len();
        (0..n / 2).all(|k| self.taps[k] == self.taps[n - 1 - k])
    }

    /// Full linear convolution with another tap set.
    pub fn convolve(&self, other: &FirTaps) -> FirTaps {
        let mut out = vec![0.0; self.len() + other.len() - 1];
        for (i, a) in self.taps.iter().enumerate() {
            for (j, b) in other.taps.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        FirTaps::new(out, FilterDesign::Custom)
    }
}

/// Frequency response at normalized frequency `f` (cycles per sample).
pub fn freq_response(taps: &[f64], f: f64) -> C64 {
    taps.iter()
        .enumerate()
        .map(|(n, &h)| C64::from_polar(h, -2.0 * PI * f * n as f64))
        .sum()
}

/// Square-root raised-cosine pulse with `span_symbols * samples_per_symbol + 1`
/// taps, scaled to unit energy.
pub fn design_srrc(roll_off: f64, span_symbols: usize, samples_per_symbol: usize) -> Result<FirTaps> {
    if !(roll_off > 0.0 && roll_off <= 1.0) {
        return Err(param(format!("SRRC roll-off {roll_off} outside (0, 1]")));
    }
    if span_symbols == 0 || samples_per_symbol == 0 {
        return Err(param("SRRC span and samples per symbol must be positive"));
    }
    let len = span_symbols * samples_per_symbol;
    if !len.is_multiple_of(2) {
        return Err(param(format!("SRRC span x sps = {len} must be even")));
    }
    let mid = (len / 2) as i64;
    let sps = samples_per_symbol as f64;
    let b = roll_off;
    let mut taps: Vec<f64> = (0..=len as i64)
        .map(|n| {
            let k = n - mid;
            // Singular points in samples: t = 0 and |t| = Ts / (4 b).
            let singular = 4.0 * b * k.abs() as f64 == sps;
            let t = k as f64 / sps;
            if k == 0 {
                1.0 - b + 4.0 * b / PI
            } else if singular {
                let a = PI / (4.0 * b);
                b / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos())
            } else {
                let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
                let den = PI * t * (1.0 - (4.0 * b * t).powi(2));
                num / den
            }
        })
        .collect();
    let norm = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|t| *t /= norm);
    symmetrize(&mut taps);
    Ok(FirTaps::new(
        taps,
        FilterDesign::Srrc {
            roll_off,
            span_symbols,
            samples_per_symbol,
        },
    ))
}

/// Kaiser window shape parameter for a stopband attenuation in dB.
pub fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

/// Kaiser order estimate for a transition width in cycles per sample.
pub fn kaiser_order(atten_db: f64, transition: f64) -> usize {
    ((atten_db - 7.95) / (2.285 * 2.0 * PI * transition)).ceil().max(1.0) as usize
}

/// Windowed-sinc low-pass designed with a Kaiser window.
///
/// The tap count starts at the Kaiser order estimate (rounded up to odd) and
/// grows by two until the response, measured on a dense grid, meets both the
/// 0.5 dB passband ripple bound and the requested stopband attenuation.
pub fn design_kaiser_lowpass(passband_edge: f64, stopband_edge: f64, stopband_atten_db: f64) -> Result<FirTaps> {
    if !(passband_edge > 0.0 && passband_edge < stopband_edge && stopband_edge < 0.5) {
        return Err(param(format!(
            "low-pass edges need 0 < {passband_edge} < {stopband_edge} < 0.5"
        )));
    }
    if !(stopband_atten_db > 0.0) || !stopband_atten_db.is_finite() {
        return Err(param(format!("stopband attenuation {stopband_atten_db} dB must be positive")));
    }
    let beta = kaiser_beta(stopband_atten_db);
    let cutoff = 0.5 * (passband_edge + stopband_edge);
    let mut len = kaiser_order(stopband_atten_db, stopband_edge - passband_edge) + 1;
    if len.is_multiple_of(2) {
        len += 1;
    }
    let max_len = 8 * len + 1;
    loop {
        let taps = windowed_sinc(len, cutoff, beta);
        if meets_mask(&taps, passband_edge, stopband_edge, stopband_atten_db) || len >= max_len {
            return Ok(FirTaps::new(
                taps,
                FilterDesign::KaiserLowpass {
                    passband_edge,
                    stopband_edge,
                    stopband_atten_db,
                    beta,
                },
            ));
        }
        len += 2;
    }
}

fn windowed_sinc(len: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let m = (len - 1) as f64 / 2.0;
    let i0_beta = bessel_i0(beta);
    let mut taps: Vec<f64> = (0..len)
        .map(|n| {
            let x = n as f64 - m;
            let sinc = if x == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * x).sin() / (PI * x)
            };
            let r = x / m;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
            sinc * w
        })
        .collect();
    let dc: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= dc);
    symmetrize(&mut taps);
    taps
}

const MASK_GRID: usize = 8192;

fn meets_mask(taps: &[f64], passband_edge: f64, stopband_edge: f64, atten_db: f64) -> bool {
    let stop_limit = 10f64.powf(-atten_db / 20.0);
    let (mut pass_min, mut pass_max) = (f64::INFINITY, 0.0f64);
    for i in 0..=MASK_GRID {
        let f = 0.5 * i as f64 / MASK_GRID as f64;
        let mag = freq_response(taps, f).norm();
        if f <= passband_edge {
            pass_min = pass_min.min(mag);
            pass_max = pass_max.max(mag);
        } else if f >= stopband_edge && mag > stop_limit {
            return false;
        }
    }
    20.0 * (pass_max / pass_min).log10() <= 0.5
}

// Mirror the first half so symmetry is exact rather than up to rounding.
fn symmetrize(taps: &mut [f64]) {
    let n = taps.len();
    for k in 0..n / 2 {
        taps[n - 1 - k] = taps[k];
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}
