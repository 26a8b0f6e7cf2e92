//! Link quality measurements: EVM, gated SINR, BER and the theory curve.

use crate::dsp::db;
use crate::C64;
use serde::{Deserialize, Serialize};

/// SINR values are clamped to this many dB when the guard gate sees no noise.
pub const SINR_CEILING_DB: f64 = 100.0;

/// Running sums behind an RMS error vector magnitude.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvmAccumulator {
    pub error_energy: f64,
    pub reference_energy: f64,
    pub count: u64,
}

impl EvmAccumulator {
    pub fn add(&mut self, received: C64, reference: C64) {
        self.error_energy += (received - reference).norm_sqr();
        self.reference_energy += reference.norm_sqr();
        self.count += 1;
    }

    pub fn merge(&mut self, other: &EvmAccumulator) {
        self.error_energy += other.error_energy;
        self.reference_energy += other.reference_energy;
        self.count += other.count;
    }

    /// RMS EVM in percent, or `None` before any reference symbol.
    pub fn rms_pct(&self) -> Option<f64> {
        (self.reference_energy > 0.0).then(|| 100.0 * (self.error_energy / self.reference_energy).sqrt())
    }
}

/// Data-aided RMS EVM in percent over paired received/reference symbols.
pub fn evm_rms_pct(received: &[C64], reference: &[C64]) -> f64 {
    let mut acc = EvmAccumulator::default();
    for (&r, &s) in received.iter().zip(reference) {
        acc.add(r, s);
    }
    acc.rms_pct().unwrap_or(0.0)
}

/// Gate-on / gate-off power sums for the pre-detection SINR.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SinrAccumulator {
    pub on_energy: f64,
    pub on_count: u64,
    pub off_energy: f64,
    pub off_count: u64,
}

impl SinrAccumulator {
    pub fn add_on(&mut self, samples: &[C64]) {
        self.on_energy += samples.iter().map(|s| s.norm_sqr()).sum::<f64>();
        self.on_count += samples.len() as u64;
    }

    pub fn add_off(&mut self, samples: &[C64]) {
        self.off_energy += samples.iter().map(|s| s.norm_sqr()).sum::<f64>();
        self.off_count += samples.len() as u64;
    }

    pub fn merge(&mut self, other: &SinrAccumulator) {
        self.on_energy += other.on_energy;
        self.on_count += other.on_count;
        self.off_energy += other.off_energy;
        self.off_count += other.off_count;
    }

    /// `(P_on - P_off) / P_off` in dB, clamped to `[-SINR_CEILING_DB, SINR_CEILING_DB]`.
    /// `None` without both gates.
    pub fn sinr_db(&self) -> Option<f64> {
        if self.on_count == 0 || self.off_count == 0 {
            return None;
        }
        let on = self.on_energy / self.on_count as f64;
        let off = self.off_energy / self.off_count as f64;
        let signal = (on - off).max(0.0);
        let ratio = if off > 0.0 { signal / off } else { f64::INFINITY };
        let v = if ratio > 0.0 { db(ratio) } else { f64::NEG_INFINITY };
        Some(v.clamp(-SINR_CEILING_DB, SINR_CEILING_DB))
    }
}

/// Accumulated metrics for one directed link.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub evm: EvmAccumulator,
    /// Payload symbols against the transmitted payload, either side of the
    /// equalizer.
    pub evm_pre_eq: EvmAccumulator,
    pub evm_post_eq: EvmAccumulator,
    pub sinr: SinrAccumulator,
    pub frames_detected: u64,
    pub frames_crc_ok: u64,
    pub frames_missed: u64,
    pub payload_bits: u64,
    pub bit_errors: u64,
    /// Payload bits of CRC-clean frames.
    pub delivered_bits: u64,
}

impl LinkMetrics {
    pub fn evm_rms_pct(&self) -> Option<f64> {
        self.evm.rms_pct()
    }

    pub fn sinr_db(&self) -> Option<f64> {
        self.sinr.sinr_db()
    }

    pub fn merge(&mut self, other: &LinkMetrics) {
        self.evm.merge(&other.evm);
        self.evm_pre_eq.merge(&other.evm_pre_eq);
        self.evm_post_eq.merge(&other.evm_post_eq);
        self.sinr.merge(&other.sinr);
        self.frames_detected += other.frames_detected;
        self.frames_crc_ok += other.frames_crc_ok;
        self.frames_missed += other.frames_missed;
        self.payload_bits += other.payload_bits;
        self.bit_errors += other.bit_errors;
        self.delivered_bits += other.delivered_bits;
    }

    pub fn ber(&self) -> f64 {
        if self.payload_bits == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.payload_bits as f64
        }
    }

    /// Frames lost or corrupted over frames sent.
    pub fn fer(&self) -> f64 {
        let total = self.frames_detected + self.frames_missed;
        if total == 0 {
            0.0
        } else {
            (self.frames_detected - self.frames_crc_ok + self.frames_missed) as f64 / total as f64
        }
    }
}

/// Exact Gray-coded square 16-QAM bit error probability over AWGN at
/// `es_n0` (linear).
pub fn ber_qam16_theory(es_n0: f64) -> f64 {
    let x = (es_n0 / 10.0).sqrt();
    0.375 * libm::erfc(x) + 0.25 * libm::erfc(3.0 * x) - 0.125 * libm::erfc(5.0 * x)
}

/// Gray QPSK bit error probability at `es_n0` (linear).
pub fn ber_qpsk_theory(es_n0: f64) -> f64 {
    0.5 * libm::erfc((es_n0 / 2.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::from_db;
    use crate::modem::qam::map_qam16_gray;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn awgn(rng: &mut ChaCha8Rng, var: f64) -> C64 {
        let s = (var / 2.0).sqrt();
        C64::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s)
    }

    #[test]
    fn evm_matches_noise_ratio_at_20db() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bits: Vec<u8> = (0..400_000).map(|_| rng.random_range(0..2)).collect();
        let tx = map_qam16_gray(&bits).unwrap();
        let n0 = from_db(-20.0);
        let rx: Vec<C64> = tx.iter().map(|&s| s + awgn(&mut rng, n0)).collect();
        let evm = evm_rms_pct(&rx, &tx);
        assert!((evm - 10.0).abs() < 1.0, "{evm}");
        assert!((evm - 10.0).abs() < 0.1, "{evm}");
    }

    #[test]
    fn noiseless_evm_is_zero_and_sinr_clamps() {
        let s = [C64::new(1.0, 0.0); 10];
        assert_eq!(evm_rms_pct(&s, &s), 0.0);
        let mut acc = SinrAccumulator::default();
        acc.add_on(&s);
        acc.add_off(&[C64::new(0.0, 0.0); 4]);
        assert_eq!(acc.sinr_db(), Some(SINR_CEILING_DB));
        assert_eq!(SinrAccumulator::default().sinr_db(), None);
    }

    #[test]
    fn sinr_subtracts_gate_off() {
        let mut acc = SinrAccumulator::default();
        acc.add_on(&[C64::new(11f64.sqrt(), 0.0); 5]);
        acc.add_off(&[C64::new(1.0, 0.0); 3]);
        assert!((acc.sinr_db().unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn fer_counts_misses() {
        let m = LinkMetrics {
            frames_detected: 9,
            frames_crc_ok: 8,
            frames_missed: 1,
            ..Default::default()
        };
        assert!((m.fer() - 0.2).abs() < 1e-15);
        assert_eq!(LinkMetrics::default().fer(), 0.0);
    }

    #[test]
    fn theory_curve_reference_points() {
        // Independent evaluation: per-axis 4-PAM bit error probabilities
        // integrated numerically over the Gaussian noise density.
        for es_n0_db in [8.0, 12.0, 16.0] {
            let es_n0 = from_db(es_n0_db);
            let sigma = (1.0 / (2.0 * es_n0)).sqrt() * 10f64.sqrt();
            let q = |x: f64| 0.5 * libm::erfc(x / (sigma * 2f64.sqrt()));
            // Levels -3,-1,+1,+3 with Gray labels 00,01,11,10; boundaries at -2,0,2.
            let mut pe = 0.0;
            for &l in &[-3.0f64, -1.0, 1.0, 3.0] {
                let p_region = |a: f64, b: f64| q(a - l) - q(b - l);
                let regions = [(-1e9, -2.0, 0b00), (-2.0, 0.0, 0b01), (0.0, 2.0, 0b11), (2.0, 1e9, 0b10)];
                let tx = match l as i32 {
                    -3 => 0b00,
                    -1 => 0b01,
                    1 => 0b11,
                    _ => 0b10,
                };
                for (a, b, label) in regions {
                    let errs = (label ^ tx as u32).count_ones() as f64;
                    pe += p_region(a, b) * errs;
                }
            }
            let oracle = pe / (4.0 * 2.0);
            let got = ber_qam16_theory(es_n0);
            assert!((got - oracle).abs() / oracle < 1e-9, "{es_n0_db}: {got} vs {oracle}");
        }
    }
}
