//! Transmit chain: frame bits to composite-rate samples on two antennas.

use crate::dsp::{design_srrc, FirTaps, Nco, SampleBlock};
use crate::error::param;
use crate::framing::{build_preamble, training_sequences, DiversityMode, EncodedFrame, Slot, TrainingSequences, TRAINING_SEED};
use crate::mesh::BandPlan;
use crate::modem::qam::map_qpsk;
use crate::modem::Modulation;
use crate::{Result, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

pub const SRRC_SPAN_SYMBOLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxConfig {
    pub band_index: usize,
    pub gain: f64,
    pub modulation: Modulation,
    pub diversity_mode: DiversityMode,
    pub samples_per_symbol: usize,
}

impl Default for TxConfig {
    fn default() -> Self {
        TxConfig {
            band_index: 0,
            gain: 1.0,
            modulation: Modulation::Qam16,
            diversity_mode: DiversityMode::Alamouti,
            samples_per_symbol: 8,
        }
    }
}

impl TxConfig {
    pub fn validate(&self, plan: &BandPlan) -> Result<()> {
        plan.check_band(self.band_index)?;
        if !(self.gain > 0.0) || !self.gain.is_finite() {
            return Err(param(format!("gain {} must be positive", self.gain)));
        }
        if self.samples_per_symbol != plan.samples_per_symbol {
            return Err(param(format!(
                "{} samples per symbol, band plan runs at {}",
                self.samples_per_symbol, plan.samples_per_symbol
            )));
        }
        Ok(())
    }
}

/// Per-antenna symbol streams of a frame, before pulse shaping.
pub fn frame_symbols(frame: &EncodedFrame, training: &TrainingSequences) -> Result<[Vec<C64>; 2]> {
    let seg = &frame.segments;
    let n = seg.total_symbols();
    let zero = C64::new(0.0, 0.0);
    let mut a0 = vec![zero; n];
    let mut a1 = vec![zero; n];
    for (slot, chip) in a0[seg.preamble.clone()].iter_mut().zip(build_preamble()) {
        *slot = C64::new(chip, 0.0);
    }
    a0[seg.training_a.clone()].copy_from_slice(&training.antenna_a);
    if frame.descriptor.diversity_mode == DiversityMode::Alamouti {
        a1[seg.training_b.clone()].copy_from_slice(&training.antenna_b);
    }
    a0[seg.header.clone()].copy_from_slice(&map_qpsk(&frame.header_bits)?);

    let modulation = frame.descriptor.modulation;
    let mut data = modulation.map(&frame.payload_bits)?;
    data.extend(modulation.map(&frame.crc_bits)?);
    let region = seg.payload_region.start;
    let mut data_pos = Vec::with_capacity(data.len());
    for (k, slot) in seg.region_slots().into_iter().enumerate() {
        match slot {
            Slot::Pilot(_) => a0[region + k] = training.pilot_symbol,
            Slot::Payload(_) | Slot::Crc(_) => data_pos.push(region + k),
        }
    }
    match frame.descriptor.diversity_mode {
        DiversityMode::SingleTxMrc => {
            for (&pos, &s) in data_pos.iter().zip(&data) {
                a0[pos] = s;
            }
        }
        DiversityMode::Alamouti => {
            for (pos, s) in data_pos.chunks_exact(2).zip(data.chunks_exact(2)) {
                let (s1, s2) = (s[0] * FRAC_1_SQRT_2, s[1] * FRAC_1_SQRT_2);
                a0[pos[0]] = s1;
                a0[pos[1]] = -s2.conj();
                a1[pos[0]] = s2;
                a1[pos[1]] = s1.conj();
            }
        }
    }
    Ok([a0, a1])
}

/// Upsample by `sps` and shape with `taps`; output has
/// `symbols.len() * sps + taps.len() - 1` samples.
pub fn pulse_shape(symbols: &[C64], taps: &[f64], sps: usize) -> Vec<C64> {
    let zero = C64::new(0.0, 0.0);
    if symbols.is_empty() {
        return Vec::new();
    }
    let mut out = vec![zero; symbols.len() * sps + taps.len() - 1];
    for (k, &s) in symbols.iter().enumerate() {
        if s == zero {
            continue;
        }
        for (o, &t) in out[k * sps..k * sps + taps.len()].iter_mut().zip(taps) {
            *o += s * t;
        }
    }
    out
}

/// Reusable transmitter holding the pulse-shaping filter and training symbols.
#[derive(Debug, Clone)]
pub struct Transmitter {
    srrc: FirTaps,
    training: TrainingSequences,
}

impl Transmitter {
    pub fn new(sps: usize) -> Result<Self> {
        Ok(Transmitter {
            srrc: design_srrc(0.5, SRRC_SPAN_SYMBOLS, sps)?,
            training: training_sequences(TRAINING_SEED),
        })
    }

    pub fn srrc(&self) -> &FirTaps {
        &self.srrc
    }

    /// Both antenna waveforms, first sample at absolute index `start_index`.
    /// Symbol `k` is centred on sample `start_index + k·sps + (taps - 1)/2`.
    pub fn tx_frame(&self, frame: &EncodedFrame, cfg: &TxConfig, plan: &BandPlan, start_index: u64) -> Result<[SampleBlock; 2]> {
        cfg.validate(plan)?;
        let d = &frame.descriptor;
        if d.modulation != cfg.modulation || d.diversity_mode != cfg.diversity_mode {
            return Err(param(format!(
                "frame is {} / {}, transmitter configured for {} / {}",
                d.modulation.name(),
                d.diversity_mode.name(),
                cfg.modulation.name(),
                cfg.diversity_mode.name()
            )));
        }
        let nco = Nco::new(plan.center_normalized(cfg.band_index)?, 0.0)?;
        let symbols = frame_symbols(frame, &self.training)?;
        let rate = plan.composite_rate;
        Ok(symbols.map(|s| {
            let mut samples = pulse_shape(&s, &self.srrc.taps, cfg.samples_per_symbol);
            if cfg.gain != 1.0 {
                samples.iter_mut().for_each(|x| *x *= cfg.gain);
            }
            nco.mix_in_place(&mut samples, start_index);
            SampleBlock::new(samples, rate, start_index)
        }))
    }
}

/// One-shot [`Transmitter::tx_frame`] starting at sample 0.
pub fn tx_frame(frame: &EncodedFrame, cfg: &TxConfig, plan: &BandPlan) -> Result<[SampleBlock; 2]> {
    Transmitter::new(cfg.samples_per_symbol)?.tx_frame(frame, cfg, plan, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framing::{encode_frame, FrameDescriptor};
    use crate::modem::prbs::prbs23_payload;

    fn frame(len: usize, m: Modulation, mode: DiversityMode) -> EncodedFrame {
        let d = FrameDescriptor::new(0, 1, 3, len, m, mode);
        encode_frame(&d, &prbs23_payload(0, 1, 3, len)).unwrap()
    }

    fn cfg(m: Modulation, mode: DiversityMode) -> TxConfig {
        TxConfig {
            band_index: 2,
            modulation: m,
            diversity_mode: mode,
            ..Default::default()
        }
    }

    #[test]
    fn duration_is_symbols_times_sps_plus_tail() {
        let f = frame(200, Modulation::Qam16, DiversityMode::Alamouti);
        let out = tx_frame(&f, &cfg(Modulation::Qam16, DiversityMode::Alamouti), &BandPlan::normalized()).unwrap();
        for ant in &out {
            assert_eq!(ant.len(), f.segments.total_symbols() * 8 + 64);
        }
    }

    #[test]
    fn antenna_one_silent_during_training_a() {
        let f = frame(64, Modulation::Qam16, DiversityMode::Alamouti);
        let out = tx_frame(&f, &cfg(Modulation::Qam16, DiversityMode::Alamouti), &BandPlan::normalized()).unwrap();
        // Samples driven only by preamble, training A and header symbols on
        // antenna 1 are exactly zero: training A sits between silent
        // preamble and training B pulse tails.
        let ta = &f.segments.training_a;
        let lo = ta.start * 8 + 64;
        let hi = ta.end * 8;
        assert!(out[1].samples[lo..hi].iter().all(|s| *s == C64::new(0.0, 0.0)));
        assert!(out[0].samples[lo..hi].iter().any(|s| s.norm() > 0.0));
    }

    #[test]
    fn single_tx_leaves_antenna_one_silent() {
        let f = frame(64, Modulation::Qpsk, DiversityMode::SingleTxMrc);
        let out = tx_frame(&f, &cfg(Modulation::Qpsk, DiversityMode::SingleTxMrc), &BandPlan::normalized()).unwrap();
        assert!(out[1].samples.iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn alamouti_pairs_follow_the_code() {
        let f = frame(16, Modulation::Qam16, DiversityMode::Alamouti);
        let t = training_sequences(TRAINING_SEED);
        let [a0, a1] = frame_symbols(&f, &t).unwrap();
        let data = Modulation::Qam16.map(&f.payload_bits).unwrap();
        let r = f.segments.payload_region.start;
        let h = FRAC_1_SQRT_2;
        assert!((a0[r] - data[0] * h).norm() < 1e-15);
        assert!((a0[r + 1] + data[1].conj() * h).norm() < 1e-15);
        assert!((a1[r] - data[1] * h).norm() < 1e-15);
        assert!((a1[r + 1] - data[0].conj() * h).norm() < 1e-15);
    }

    #[test]
    fn mismatched_config_rejected() {
        let f = frame(8, Modulation::Qam16, DiversityMode::Alamouti);
        let plan = BandPlan::normalized();
        assert!(tx_frame(&f, &cfg(Modulation::Qpsk, DiversityMode::Alamouti), &plan).is_err());
        let mut c = cfg(Modulation::Qam16, DiversityMode::Alamouti);
        c.band_index = 7;
        assert!(tx_frame(&f, &c, &plan).is_err());
        c.band_index = 0;
        c.gain = 0.0;
        assert!(tx_frame(&f, &c, &plan).is_err());
    }

    #[test]
    fn spectral_occupancy_within_band() {
        let f = frame(1024, Modulation::Qam16, DiversityMode::SingleTxMrc);
        let plan = BandPlan::normalized();
        let out = tx_frame(&f, &cfg(Modulation::Qam16, DiversityMode::SingleTxMrc), &plan).unwrap();
        let x = &out[0].samples;
        let center = plan.center_normalized(2).unwrap();
        // Direct DFT-based periodogram on a 2048-bin grid.
        let bins = 2048;
        let mut total = 0.0;
        let mut inside = 0.0;
        for b in 0..bins {
            let f = b as f64 / bins as f64 - 0.5;
            let w = C64::from_polar(1.0, -2.0 * std::f64::consts::PI * f);
            let mut ph = C64::new(1.0, 0.0);
            let mut acc = C64::new(0.0, 0.0);
            for &s in x {
                acc += s * ph;
                ph *= w;
            }
            let p = acc.norm_sqr();
            total += p;
            if (f - center).abs() <= 0.75 / 8.0 {
                inside += p;
            }
        }
        assert!(inside / total >= 0.99, "{}", inside / total);
    }
}
