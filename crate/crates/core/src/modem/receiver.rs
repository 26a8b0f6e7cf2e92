//! Streaming receiver for one band on two antennas.

use super::channelizer::{Channelizer, ChannelizerDesign};
use super::combine::{alamouti_decode, mrc_column};
use super::detect::{DetectionResult, Detector, DetectorConfig};
use super::equalizer::{EqualizerConfig, NlmsEqualizer, Reference};
use super::estimate::{estimate_channel, ChannelEstimate};
use super::metrics::{EvmAccumulator, SinrAccumulator};
use super::qam::{bits_to_bytes, bytes_to_bits, demap_qpsk, map_qpsk};
use super::Modulation;
use crate::dsp::SampleBlock;
use crate::error::contract;
use crate::framing::{
    build_preamble, check_payload, decode_header, encode_header, training_sequences, DiversityMode, FrameDescriptor, FrameSegments, Slot,
    TrainingSequences, FRAME_VERSION, GUARD_SYMBOLS, HEADER_BITS, MAX_PAYLOAD, PREAMBLE_SYMBOLS, TRAINING_LEN, TRAINING_SEED,
};
use crate::mesh::BandPlan;
use crate::{Result, C64};
use std::collections::VecDeque;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Guard symbols, counted from the frame end, whose power is the SINR
/// gate-off reference.
pub const GATE_OFF_SYMBOLS: std::ops::Range<usize> = 16..48;
/// Preamble symbols fed to the equalizer ahead of training A.
const EQ_LEAD_IN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverConfig {
    pub detector: DetectorConfig,
    pub equalizer: EqualizerConfig,
    /// Equalized payload symbols kept per frame for constellation display.
    pub constellation_points: usize,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        ReceiverConfig {
            detector: DetectorConfig::default(),
            equalizer: EqualizerConfig::default(),
            constellation_points: 64,
        }
    }
}

/// Why a detected frame produced no payload.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameFailure {
    DegenerateChannel(f64),
    HeaderCrc,
    /// Header CRC passed but a field is unusable.
    HeaderInvalid(String),
}

/// Everything the receiver learned from one detection.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameReport {
    pub detection: DetectionResult,
    /// Composite-rate index of the frame's first symbol impulse at the
    /// transmitter output, assuming zero propagation delay.
    pub frame_start: u64,
    pub descriptor: Option<FrameDescriptor>,
    pub failure: Option<FrameFailure>,
    pub estimate: Option<ChannelEstimate>,
    pub payload: Vec<u8>,
    pub sinr: SinrAccumulator,
    /// Data-aided over training and pilots, after equalization.
    pub evm: EvmAccumulator,
    /// Payload symbols against the known payload, before and after the
    /// equalizer (only when the caller supplies the payload).
    pub evm_pre_eq: EvmAccumulator,
    pub evm_post_eq: EvmAccumulator,
    pub constellation: Vec<C64>,
    /// Linear phase fitted to the pilots: radians at the first payload-region
    /// symbol and radians per symbol.
    pub phase_fit: (f64, f64),
}

impl FrameReport {
    pub fn header_ok(&self) -> bool {
        self.descriptor.is_some_and(|d| d.header_crc_ok) && self.failure.is_none()
    }

    pub fn payload_ok(&self) -> bool {
        self.descriptor.is_some_and(|d| d.payload_crc_ok)
    }
}

#[derive(Debug, Clone)]
struct Header {
    det: DetectionResult,
    est: ChannelEstimate,
    desc: FrameDescriptor,
    seg: FrameSegments,
}

#[derive(Debug, Clone)]
enum Pending {
    Detected(DetectionResult),
    Decoded(Box<Header>),
}

/// Receive chain for one band: channelizers, detector and frame decoder.
#[derive(Debug, Clone)]
pub struct BandReceiver {
    band_index: usize,
    cfg: ReceiverConfig,
    sps: usize,
    delay: usize,
    channelizers: [Channelizer; 2],
    detector: Detector,
    mf: [VecDeque<C64>; 2],
    mf_base: u64,
    mf_started: bool,
    pending: Option<Pending>,
    training: TrainingSequences,
    preamble: Vec<f64>,
    equalizer: NlmsEqualizer,
    equalizer_src: Option<u8>,
}

impl BandReceiver {
    pub fn new(plan: &BandPlan, band_index: usize, design: &ChannelizerDesign, cfg: ReceiverConfig) -> Result<Self> {
        let sps = plan.samples_per_symbol;
        let delay = design.end_to_end_delay();
        let det_cfg = DetectorConfig {
            samples_per_symbol: sps,
            reference_delay: delay,
            lockout: (PREAMBLE_SYMBOLS + 2 * TRAINING_LEN + HEADER_BITS / 2) * sps,
            ..cfg.detector
        };
        Ok(BandReceiver {
            band_index,
            cfg,
            sps,
            delay,
            channelizers: [Channelizer::new(plan, band_index, design)?, Channelizer::new(plan, band_index, design)?],
            detector: Detector::new(det_cfg, 2)?,
            mf: [VecDeque::new(), VecDeque::new()],
            mf_base: 0,
            mf_started: false,
            pending: None,
            training: training_sequences(TRAINING_SEED),
            preamble: build_preamble(),
            equalizer: NlmsEqualizer::new(cfg.equalizer)?,
            equalizer_src: None,
        })
    }

    pub fn band_index(&self) -> usize {
        self.band_index
    }

    /// Samples from a transmit symbol impulse to its matched-filter peak.
    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn equalizer_taps(&self) -> &[C64] {
        self.equalizer.taps()
    }

    /// Process the next composite-rate block of both antennas. `reference`
    /// returns the true payload of a frame when it is known (test mode).
    pub fn push(&mut self, rx: [&SampleBlock; 2], reference: &dyn Fn(&FrameDescriptor) -> Option<Vec<u8>>) -> Result<Vec<FrameReport>> {
        if rx[0].len() != rx[1].len() || rx[0].start_index != rx[1].start_index {
            return Err(contract("receiver antenna blocks are not aligned"));
        }
        let y0 = self.channelizers[0].process(rx[0]);
        let y1 = self.channelizers[1].process(rx[1]);
        if !self.mf_started {
            self.mf_base = y0.start_index;
            self.mf_started = true;
        }
        self.detector.push(&[&y0.samples, &y1.samples], y0.start_index)?;
        self.mf[0].extend(y0.samples);
        self.mf[1].extend(y1.samples);

        let mut reports = Vec::new();
        loop {
            match self.pending.take() {
                None => match self.detector.poll() {
                    Some(det) => self.pending = Some(Pending::Detected(det)),
                    None => break,
                },
                Some(Pending::Detected(det)) => {
                    let need = det.sample_index + ((PREAMBLE_SYMBOLS + 2 * TRAINING_LEN + HEADER_BITS / 2) * self.sps) as u64;
                    if self.mf_end() < need {
                        self.pending = Some(Pending::Detected(det));
                        break;
                    }
                    match self.decode_header_stage(det) {
                        Ok(h) => self.pending = Some(Pending::Decoded(Box::new(h))),
                        Err(report) => reports.push(*report),
                    }
                }
                Some(Pending::Decoded(h)) => {
                    let need = h.det.sample_index + ((h.seg.total_symbols() + GATE_OFF_SYMBOLS.end) * self.sps) as u64;
                    if self.mf_end() < need {
                        self.pending = Some(Pending::Decoded(h));
                        break;
                    }
                    reports.push(self.decode_body(*h, reference));
                }
            }
        }
        self.trim();
        Ok(reports)
    }

    fn mf_end(&self) -> u64 {
        self.mf_base + self.mf[0].len() as u64
    }

    fn trim(&mut self) {
        let keep = match &self.pending {
            Some(Pending::Detected(d)) => d.sample_index,
            Some(Pending::Decoded(h)) => h.det.sample_index,
            // A later detection can be refined to a few samples before the
            // detector's scan position.
            None => self.detector.scan_position(),
        };
        let keep = keep.saturating_sub((self.sps * 2) as u64);
        while self.mf_base < keep && !self.mf[0].is_empty() {
            self.mf[0].pop_front();
            self.mf[1].pop_front();
            self.mf_base += 1;
        }
    }

    /// Symbol-rate samples of antenna `i` for frame symbols `range`.
    fn symbols(&self, p: u64, i: usize, range: std::ops::Range<usize>, scale: f64) -> Vec<C64> {
        range
            .map(|k| self.mf[i][(p + (k * self.sps) as u64 - self.mf_base) as usize] * scale)
            .collect()
    }

    fn failure(&mut self, det: DetectionResult, failure: FrameFailure, descriptor: Option<FrameDescriptor>, estimate: Option<ChannelEstimate>) -> Box<FrameReport> {
        let min_frame = PREAMBLE_SYMBOLS + 2 * TRAINING_LEN + HEADER_BITS / 2;
        self.detector.set_lockout(det.sample_index + (min_frame * self.sps) as u64);
        Box::new(FrameReport {
            frame_start: det.sample_index.saturating_sub(self.delay as u64),
            detection: det,
            descriptor,
            failure: Some(failure),
            estimate,
            payload: Vec::new(),
            sinr: SinrAccumulator::default(),
            evm: EvmAccumulator::default(),
            evm_pre_eq: EvmAccumulator::default(),
            evm_post_eq: EvmAccumulator::default(),
            constellation: Vec::new(),
            phase_fit: (0.0, 0.0),
        })
    }

    fn decode_header_stage(&mut self, det: DetectionResult) -> std::result::Result<Header, Box<FrameReport>> {
        let p = det.sample_index;
        let seg = FrameSegments::new(0, Modulation::Qpsk);
        let ya = [self.symbols(p, 0, seg.training_a.clone(), 1.0), self.symbols(p, 1, seg.training_a.clone(), 1.0)];
        let yb = [self.symbols(p, 0, seg.training_b.clone(), 1.0), self.symbols(p, 1, seg.training_b.clone(), 1.0)];
        let est = match estimate_channel([&ya[0], &ya[1]], [&yb[0], &yb[1]], &self.training, seg.training_a.start as u64) {
            Ok(e) => e,
            Err(crate::Error::DegenerateChannel(d)) => return Err(self.failure(det, FrameFailure::DegenerateChannel(d), None, None)),
            Err(e) => unreachable!("training windows are sized by construction: {e}"),
        };
        let scale = 1.0 / est.dominant_tap_mag;
        let h0 = self.symbols(p, 0, seg.header.clone(), scale);
        let h1 = self.symbols(p, 1, seg.header.clone(), scale);
        let combined = match mrc_column(&h0, &h1, &est, 0) {
            Ok(c) => c,
            Err(_) => return Err(self.failure(det, FrameFailure::DegenerateChannel(0.0), None, Some(est))),
        };
        let desc = decode_header(&demap_qpsk(&combined)).expect("header window is 128 bits");
        if !desc.header_crc_ok {
            return Err(self.failure(det, FrameFailure::HeaderCrc, Some(desc), Some(est)));
        }
        let invalid = if desc.version != FRAME_VERSION {
            Some(format!("version {}", desc.version))
        } else if desc.payload_len as usize > MAX_PAYLOAD {
            Some(format!("payload length {}", desc.payload_len))
        } else {
            None
        };
        if let Some(reason) = invalid {
            return Err(self.failure(det, FrameFailure::HeaderInvalid(reason), Some(desc), Some(est)));
        }
        let mut est = est;
        if desc.diversity_mode == DiversityMode::SingleTxMrc {
            est.h[0][1] = C64::new(0.0, 0.0);
            est.h[1][1] = C64::new(0.0, 0.0);
        }
        Ok(Header {
            det,
            est,
            desc,
            seg: desc.segments(),
        })
    }

    fn decode_body(&mut self, h: Header, reference: &dyn Fn(&FrameDescriptor) -> Option<Vec<u8>>) -> FrameReport {
        let Header { det, mut est, mut desc, seg } = h;
        self.mf[0].make_contiguous();
        self.mf[1].make_contiguous();
        let p = det.sample_index;
        let sps = self.sps;
        let first = seg.training_a.start - EQ_LEAD_IN;
        let end = seg.total_symbols();
        let scale = 1.0 / est.dominant_tap_mag;
        let mut y = [self.symbols(p, 0, first..end, scale), self.symbols(p, 1, first..end, scale)];
        let region = seg.payload_region.start;
        let slots = seg.region_slots();

        // Pilot-aided phase: least-squares line through unwrapped pilot phases.
        let pilot = self.training.pilot_symbol;
        let col0_norm = est.column_energy(0);
        let mut pilot_k = Vec::new();
        let mut pilot_phase: Vec<f64> = Vec::new();
        for (j, slot) in slots.iter().enumerate() {
            if let Slot::Pilot(_) = slot {
                let k = region + j;
                let z = (est.h[0][0].conj() * y[0][k - first] + est.h[1][0].conj() * y[1][k - first]) / col0_norm;
                let mut phi = (z / pilot).arg();
                if let Some(&prev) = pilot_phase.last() {
                    phi += 2.0 * PI * ((prev - phi) / (2.0 * PI)).round();
                }
                pilot_k.push(k as f64);
                pilot_phase.push(phi);
            }
        }
        let (theta0, omega) = fit_line(&pilot_k, &pilot_phase);
        for (idx, k) in (first..end).enumerate() {
            let rot = C64::from_polar(1.0, -(theta0 + omega * k as f64));
            y[0][idx] *= rot;
            y[1][idx] *= rot;
        }
        let rot_b = C64::from_polar(1.0, -omega * TRAINING_LEN as f64);
        est.h[0][1] *= rot_b;
        est.h[1][1] *= rot_b;

        // Combine segment by segment into one stream with its references.
        let mode = desc.diversity_mode;
        let modulation = desc.modulation;
        let header_syms = map_qpsk(&bytes_to_bits(&encode_header(&desc))).expect("128 header bits");
        let mut z = Vec::with_capacity(end - first);
        let mut refs = Vec::with_capacity(end - first);
        let mut evm_ref: Vec<Option<C64>> = Vec::with_capacity(end - first);
        let slice = |r: std::ops::Range<usize>, i: usize| -> &[C64] { &y[i][r.start - first..r.end - first] };
        let col0 = |r: std::ops::Range<usize>| mrc_column(slice(r.clone(), 0), slice(r, 1), &est, 0).expect("nonzero column");
        let lead = first..seg.training_a.start;
        z.extend(col0(lead.clone()));
        for k in lead {
            refs.push(Reference::Known(C64::new(self.preamble[k], 0.0)));
            evm_ref.push(None);
        }
        z.extend(col0(seg.training_a.clone()));
        refs.extend(self.training.antenna_a.iter().map(|&s| Reference::Known(s)));
        evm_ref.extend(self.training.antenna_a.iter().map(|&s| Some(s)));
        match mode {
            DiversityMode::Alamouti => {
                z.extend(mrc_column(slice(seg.training_b.clone(), 0), slice(seg.training_b.clone(), 1), &est, 1).unwrap_or_else(|_| vec![C64::new(0.0, 0.0); TRAINING_LEN]));
                refs.extend(self.training.antenna_b.iter().map(|&s| Reference::Known(s)));
                evm_ref.extend(self.training.antenna_b.iter().map(|&s| Some(s)));
            }
            DiversityMode::SingleTxMrc => {
                // Silent slot: antenna 0 sent nothing, which is itself a reference.
                z.extend(col0(seg.training_b.clone()));
                refs.extend(std::iter::repeat_n(Reference::Known(C64::new(0.0, 0.0)), TRAINING_LEN));
                evm_ref.extend(std::iter::repeat_n(None, TRAINING_LEN));
            }
        }
        z.extend(col0(seg.header.clone()));
        refs.extend(header_syms.iter().map(|&s| Reference::Known(s)));
        evm_ref.extend(std::iter::repeat_n(None, header_syms.len()));

        let data_pos: Vec<usize> = slots
            .iter()
            .enumerate()
            .filter(|(_, s)| !matches!(s, Slot::Pilot(_)))
            .map(|(j, _)| region + j)
            .collect();
        let d0: Vec<C64> = data_pos.iter().map(|&k| y[0][k - first]).collect();
        let d1: Vec<C64> = data_pos.iter().map(|&k| y[1][k - first]).collect();
        let data = match mode {
            DiversityMode::Alamouti => alamouti_decode(&d0, &d1, &est.scaled(FRAC_1_SQRT_2)),
            DiversityMode::SingleTxMrc => mrc_column(&d0, &d1, &est, 0),
        }
        .expect("even data count and nonzero channel");
        let mut data_iter = data.iter();
        for (j, slot) in slots.iter().enumerate() {
            let k = region + j;
            match slot {
                Slot::Pilot(_) => {
                    z.push((est.h[0][0].conj() * y[0][k - first] + est.h[1][0].conj() * y[1][k - first]) / col0_norm);
                    refs.push(Reference::Known(pilot));
                    evm_ref.push(Some(pilot));
                }
                _ => {
                    z.push(*data_iter.next().expect("one combined symbol per data slot"));
                    refs.push(Reference::Decide(modulation));
                    evm_ref.push(None);
                }
            }
        }

        if self.equalizer_src != Some(desc.src_node) {
            self.equalizer.reset();
            self.equalizer_src = Some(desc.src_node);
        }
        let eq = self.equalizer.equalize(&z, &refs);

        let mut evm = EvmAccumulator::default();
        for ((s, r), w) in eq.symbols.iter().zip(&evm_ref).zip(&eq.warmup) {
            if let (Some(r), false) = (r, w) {
                evm.add(*s, *r);
            }
        }
        let data_idx: Vec<usize> = data_pos.iter().map(|&k| k - first).collect();
        let eq_data: Vec<C64> = data_idx.iter().map(|&i| eq.symbols[i]).collect();
        let bits = modulation.demap(&eq_data);
        let payload_bit_count = seg.payload_symbols * modulation.bits_per_symbol();
        let payload = bits_to_bytes(&bits[..payload_bit_count]);
        let header_bits = bytes_to_bits(&encode_header(&desc));
        desc.payload_crc_ok = check_payload(&header_bits, &payload, &bits[payload_bit_count..]);

        let mut evm_pre_eq = EvmAccumulator::default();
        let mut evm_post_eq = EvmAccumulator::default();
        if let Some(true_payload) = reference(&desc).filter(|b| b.len() == payload.len()) {
            let crc_true = crate::framing::payload_crc(&encode_header(&desc), &true_payload);
            let mut true_bits = bytes_to_bits(&true_payload);
            true_bits.extend(bytes_to_bits(&crc_true.to_le_bytes()));
            let true_syms = modulation.map(&true_bits).expect("whole symbols");
            for ((&i, s), t) in data_idx.iter().zip(&eq_data).zip(&true_syms) {
                if !eq.warmup[i] {
                    evm_pre_eq.add(z[i], *t);
                    evm_post_eq.add(*s, *t);
                }
            }
        }

        // Gated power on the raw matched-filter output, both antennas.
        let mut sinr = SinrAccumulator::default();
        for i in 0..2 {
            let on: Vec<std::ops::Range<usize>> = match mode {
                DiversityMode::Alamouti => vec![seg.training_a.start..end],
                DiversityMode::SingleTxMrc => vec![seg.training_a.clone(), seg.header.start..end],
            };
            for r in on {
                sinr.add_on(self.raw(p, i, r.start * sps, r.end * sps));
            }
            sinr.add_off(self.raw(p, i, (end + GATE_OFF_SYMBOLS.start) * sps, (end + GATE_OFF_SYMBOLS.end) * sps));
        }

        let n_points = self.cfg.constellation_points.min(eq_data.len());
        let constellation = (0..n_points).map(|k| eq_data[k * eq_data.len() / n_points]).collect();

        self.detector.set_lockout(p + (end * sps) as u64);
        debug_assert!(GUARD_SYMBOLS >= GATE_OFF_SYMBOLS.end);
        FrameReport {
            frame_start: p.saturating_sub(self.delay as u64),
            detection: det,
            descriptor: Some(desc),
            failure: None,
            estimate: Some(est),
            payload,
            sinr,
            evm,
            evm_pre_eq,
            evm_post_eq,
            constellation,
            phase_fit: (theta0 + omega * region as f64, omega),
        }
    }

    /// Matched-filter samples `from..to` after frame peak `p`; the buffers
    /// must be contiguous.
    fn raw(&self, p: u64, i: usize, from: usize, to: usize) -> &[C64] {
        let a = (p + from as u64 - self.mf_base) as usize;
        let b = (p + to as u64 - self.mf_base) as usize;
        &self.mf[i].as_slices().0[a..b]
    }
}

/// Least-squares `(intercept, slope)`; a single point gives a flat line and
/// no points give zero.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    match x.len() {
        0 => (0.0, 0.0),
        1 => (y[0], 0.0),
        n => {
            let n = n as f64;
            let mx = x.iter().sum::<f64>() / n;
            let my = y.iter().sum::<f64>() / n;
            let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
            let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let slope = sxy / sxx;
            (my - slope * mx, slope)
        }
    }
}
