//! Gray-coded QPSK and 16-QAM mappers and hard-decision demappers.
//!
//! Bits are consumed most significant first. For 16-QAM a nibble
//! `b3 b2 b1 b0` selects the in-phase level with `b3 b2` and the quadrature
//! level with `b1 b0`, each through the Gray map
//! `00 → -3, 01 → -1, 11 → +1, 10 → +3`, scaled by `1/√10`.
//!
//! QPSK maps `b1 b0` to `((1 - 2·b1) + j(1 - 2·b0)) / √2`.
//!
//! Samples exactly on a decision boundary resolve toward the lower Gray
//! code: `0 → -1` (01 beats 11), `-2 → -3` (00 beats 01) and
//! `+2 → +3` (10 beats 11), in units of the unscaled grid. For QPSK a zero
//! component decides bit 0.

use crate::error::param;
use crate::{Result, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

/// Payload modulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modulation {
    #[serde(rename = "QPSK")]
    Qpsk,
    #[serde(rename = "QAM16")]
    Qam16,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
        }
    }

    pub fn map(self, bits: &[u8]) -> Result<Vec<C64>> {
        match self {
            Modulation::Qpsk => map_qpsk(bits),
            Modulation::Qam16 => map_qam16_gray(bits),
        }
    }

    pub fn demap(self, symbols: &[C64]) -> Vec<u8> {
        match self {
            Modulation::Qpsk => demap_qpsk(symbols),
            Modulation::Qam16 => demap_qam16_gray(symbols),
        }
    }

    /// Nearest constellation point.
    pub fn slice(self, s: C64) -> C64 {
        match self {
            Modulation::Qpsk => qpsk_point(s.re < 0.0, s.im < 0.0),
            Modulation::Qam16 => C64::new(level(slice_pam4(s.re * QAM16_SCALE)), level(slice_pam4(s.im * QAM16_SCALE))) / QAM16_SCALE,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Qpsk => "QPSK",
            Modulation::Qam16 => "QAM16",
        }
    }
}

impl std::str::FromStr for Modulation {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "QPSK" => Ok(Modulation::Qpsk),
            "QAM16" => Ok(Modulation::Qam16),
            other => Err(param(format!("unknown modulation {other:?}"))),
        }
    }
}

/// `√10`: 16-QAM grid spacing normalizer for unit average power.
pub const QAM16_SCALE: f64 = 3.162_277_660_168_379_5;

// Gray index (2 bits) -> PAM4 level.
const PAM4_LEVELS: [f64; 4] = [-3.0, -1.0, 3.0, 1.0];

fn level(gray: u8) -> f64 {
    PAM4_LEVELS[gray as usize]
}

fn slice_pam4(x: f64) -> u8 {
    if x <= -2.0 {
        0b00
    } else if x <= 0.0 {
        0b01
    } else if x < 2.0 {
        0b11
    } else {
        0b10
    }
}

fn qpsk_point(b1: bool, b0: bool) -> C64 {
    C64::new(if b1 { -FRAC_1_SQRT_2 } else { FRAC_1_SQRT_2 }, if b0 { -FRAC_1_SQRT_2 } else { FRAC_1_SQRT_2 })
}

/// Gray 16-QAM mapping of a bit sequence (one bit per byte, values 0/1).
pub fn map_qam16_gray(bits: &[u8]) -> Result<Vec<C64>> {
    if !bits.len().is_multiple_of(4) {
        return Err(param(format!("16-QAM needs a multiple of 4 bits, got {}", bits.len())));
    }
    Ok(bits
        .chunks_exact(4)
        .map(|b| {
            let i = level((b[0] << 1) | b[1]);
            let q = level((b[2] << 1) | b[3]);
            C64::new(i, q) / QAM16_SCALE
        })
        .collect())
}

pub fn demap_qam16_gray(symbols: &[C64]) -> Vec<u8> {
    let mut bits = Vec::with_capacity(symbols.len() * 4);
    for s in symbols {
        let i = slice_pam4(s.re * QAM16_SCALE);
        let q = slice_pam4(s.im * QAM16_SCALE);
        bits.extend_from_slice(&[i >> 1, i & 1, q >> 1, q & 1]);
    }
    bits
}

pub fn map_qpsk(bits: &[u8]) -> Result<Vec<C64>> {
    if !bits.len().is_multiple_of(2) {
        return Err(param(format!("QPSK needs an even number of bits, got {}", bits.len())));
    }
    Ok(bits.chunks_exact(2).map(|b| qpsk_point(b[0] == 1, b[1] == 1)).collect())
}

pub fn demap_qpsk(symbols: &[C64]) -> Vec<u8> {
    symbols
        .iter()
        .flat_map(|s| [(s.re < 0.0) as u8, (s.im < 0.0) as u8])
        .collect()
}

/// Unpack bytes into bits, most significant bit first.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes.iter().flat_map(|b| (0..8).rev().map(move |k| (b >> k) & 1)).collect()
}

/// Pack bits (MSB first) into bytes; a trailing partial byte is zero-padded.
pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|ch| ch.iter().enumerate().fold(0u8, |acc, (k, &b)| acc | ((b & 1) << (7 - k))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nibble_bits(n: u8) -> [u8; 4] {
        [(n >> 3) & 1, (n >> 2) & 1, (n >> 1) & 1, n & 1]
    }

    #[test]
    fn corner_point() {
        let s = map_qam16_gray(&[0, 0, 0, 0]).unwrap();
        assert!((s[0] - C64::new(-3.0, -3.0) / 10f64.sqrt()).norm() < 1e-15);
    }

    #[test]
    fn unit_average_power() {
        let bits: Vec<u8> = (0..16u8).flat_map(nibble_bits).collect();
        let syms = map_qam16_gray(&bits).unwrap();
        let p: f64 = syms.iter().map(|s| s.norm_sqr()).sum::<f64>() / 16.0;
        assert!((p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn adjacent_points_differ_in_one_bit() {
        let grid: Vec<(u8, C64)> = (0..16u8)
            .map(|n| (n, map_qam16_gray(&nibble_bits(n)).unwrap()[0] * QAM16_SCALE))
            .collect();
        let mut ordered_pairs = 0;
        for (na, a) in &grid {
            for (nb, b) in &grid {
                if ((a - b).norm() - 2.0).abs() < 1e-9 {
                    ordered_pairs += 1;
                    assert_eq!((na ^ nb).count_ones(), 1, "{na:04b} vs {nb:04b}");
                }
            }
        }
        assert_eq!(ordered_pairs, 48);
    }

    #[test]
    fn round_trip_all_nibbles() {
        for n in 0..16u8 {
            let bits = nibble_bits(n);
            assert_eq!(demap_qam16_gray(&map_qam16_gray(&bits).unwrap()), bits.to_vec());
        }
        let bits = [0, 1, 1, 1, 1, 0, 0, 0];
        assert_eq!(demap_qpsk(&map_qpsk(&bits).unwrap()), bits.to_vec());
    }

    #[test]
    fn boundary_ties_pick_lower_gray_code() {
        let s = |i: f64, q: f64| C64::new(i, q) / QAM16_SCALE;
        // I = 0 lies between 01 (-1) and 11 (+1).
        assert_eq!(&demap_qam16_gray(&[s(0.0, 3.0)])[..2], &[0, 1]);
        assert_eq!(&demap_qam16_gray(&[s(-2.0, 3.0)])[..2], &[0, 0]);
        assert_eq!(&demap_qam16_gray(&[s(2.0, 3.0)])[..2], &[1, 0]);
        assert_eq!(demap_qpsk(&[C64::new(0.0, 0.0)]), vec![0, 0]);
    }

    #[test]
    fn bad_bit_count_rejected() {
        assert!(map_qam16_gray(&[0, 1, 1]).is_err());
        assert!(map_qpsk(&[1]).is_err());
    }

    #[test]
    fn byte_bit_packing() {
        assert_eq!(bytes_to_bits(&[0b1010_0001]), vec![1, 0, 1, 0, 0, 0, 0, 1]);
        assert_eq!(bits_to_bytes(&bytes_to_bits(b"xyz")), b"xyz".to_vec());
    }

    #[test]
    fn slicer_matches_demapper() {
        for n in 0..16u8 {
            let p = map_qam16_gray(&nibble_bits(n)).unwrap()[0];
            let noisy = p + C64::new(0.05, -0.04);
            assert!((Modulation::Qam16.slice(noisy) - p).norm() < 1e-12);
        }
    }
}
