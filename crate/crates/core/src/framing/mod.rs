//! Over-the-air frame format.
//!
//! A frame is, in transmission order (symbol counts in parentheses):
//!
//! | segment      | symbols                  | antennas                      |
//! |--------------|--------------------------|-------------------------------|
//! | preamble     | 512 BPSK chips Ga ‖ Gb   | 0                             |
//! | training A   | 64 QPSK                  | 0                             |
//! | training B   | 64 QPSK                  | 1 (silent in single-TX mode)  |
//! | header       | 64 QPSK (16 bytes)       | 0                             |
//! | payload      | `8·len / bps` + pilots   | per diversity mode            |
//! | CRC-32       | `32 / bps`               | per diversity mode            |
//!
//! A known pilot symbol follows every 32 payload symbols. Frames are
//! separated by a silent guard of 64 symbols which receivers use as the
//! noise gate. Multi-byte header fields are little-endian; bytes are sent
//! most significant bit first. The payload CRC-32 covers the 16 header bytes
//! followed by the payload and is appended little-endian.

mod crc;

pub use crc::{crc16_ccitt, crc32, CRC32_RESIDUE};

use crate::dsp::golay_pair;
use crate::error::{contract, Error};
use crate::modem::qam::{bytes_to_bits, bits_to_bytes, map_qpsk};
use crate::modem::Modulation;
use crate::{Result, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;

pub const PREAMBLE_SYMBOLS: usize = 512;
pub const TRAINING_LEN: usize = 64;
pub const PILOT_PERIOD: usize = 32;
pub const HEADER_LEN: usize = 16;
pub const HEADER_BITS: usize = HEADER_LEN * 8;
/// Header is always QPSK.
pub const HEADER_SYMBOLS: usize = HEADER_BITS / 2;
pub const MAX_PAYLOAD: usize = 8192;
pub const CRC_LEN: usize = 4;
pub const GUARD_SYMBOLS: usize = 64;
pub const FRAME_VERSION: u8 = 1;
pub const BROADCAST: u8 = 0xFF;
/// Seed every node uses for the training sequences.
pub const TRAINING_SEED: u64 = 0x2117_822F;

/// Fixed frame dimensions, gathered in one place for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FrameLayout {
    pub preamble_symbols: usize,
    pub training_len_per_antenna: usize,
    pub pilot_period: usize,
    pub header_len: usize,
    pub max_payload: usize,
    pub crc_len: usize,
    pub guard_symbols: usize,
}

impl FrameLayout {
    pub const STANDARD: FrameLayout = FrameLayout {
        preamble_symbols: PREAMBLE_SYMBOLS,
        training_len_per_antenna: TRAINING_LEN,
        pilot_period: PILOT_PERIOD,
        header_len: HEADER_LEN,
        max_payload: MAX_PAYLOAD,
        crc_len: CRC_LEN,
        guard_symbols: GUARD_SYMBOLS,
    };
}

impl Default for FrameLayout {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// Transmit diversity scheme for the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiversityMode {
    /// Rate-1 Alamouti code over both transmit antennas.
    #[serde(rename = "ALAMOUTI")]
    Alamouti,
    /// Antenna 0 only, maximal-ratio combined over both receive antennas.
    #[serde(rename = "SINGLE_TX_MRC")]
    SingleTxMrc,
}

impl DiversityMode {
    pub fn name(self) -> &'static str {
        match self {
            DiversityMode::Alamouti => "ALAMOUTI",
            DiversityMode::SingleTxMrc => "SINGLE_TX_MRC",
        }
    }
}

impl std::str::FromStr for DiversityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ALAMOUTI" => Ok(DiversityMode::Alamouti),
            "SINGLE_TX_MRC" => Ok(DiversityMode::SingleTxMrc),
            other => Err(crate::error::param(format!("unknown diversity mode {other:?}"))),
        }
    }
}

/// Parsed header fields plus CRC verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDescriptor {
    pub version: u8,
    pub src_node: u8,
    pub dst_node: u8,
    pub seq: u32,
    pub payload_len: u16,
    pub modulation: Modulation,
    pub diversity_mode: DiversityMode,
    pub header_crc_ok: bool,
    pub payload_crc_ok: bool,
}

impl FrameDescriptor {
    pub fn new(src: u8, dst: u8, seq: u32, payload_len: usize, modulation: Modulation, diversity_mode: DiversityMode) -> Self {
        FrameDescriptor {
            version: FRAME_VERSION,
            src_node: src,
            dst_node: dst,
            seq,
            payload_len: payload_len as u16,
            modulation,
            diversity_mode,
            header_crc_ok: true,
            payload_crc_ok: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.src_node > 3 {
            return Err(Error::Encode(format!("source node {} out of range", self.src_node)));
        }
        if self.dst_node > 3 && self.dst_node != BROADCAST {
            return Err(Error::Encode(format!("destination node {} out of range", self.dst_node)));
        }
        if self.src_node == self.dst_node {
            return Err(Error::Encode(format!("unicast frame from node {} to itself", self.src_node)));
        }
        if self.payload_len as usize > MAX_PAYLOAD {
            return Err(Error::Encode(format!("payload of {} bytes exceeds {MAX_PAYLOAD}", self.payload_len)));
        }
        Ok(())
    }

    pub fn segments(&self) -> FrameSegments {
        FrameSegments::new(self.payload_len as usize, self.modulation)
    }
}

/// One slot of the payload region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Payload(usize),
    Pilot(usize),
    Crc(usize),
}

/// Symbol boundaries of every segment, relative to the first preamble chip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSegments {
    pub preamble: Range<usize>,
    pub training_a: Range<usize>,
    pub training_b: Range<usize>,
    pub header: Range<usize>,
    /// Payload symbols, interleaved pilots and the CRC symbols.
    pub payload_region: Range<usize>,
    pub payload_symbols: usize,
    pub pilot_count: usize,
    pub crc_symbols: usize,
}

impl FrameSegments {
    pub fn new(payload_len: usize, modulation: Modulation) -> Self {
        let bps = modulation.bits_per_symbol();
        let payload_symbols = payload_len * 8 / bps;
        let pilot_count = payload_symbols / PILOT_PERIOD;
        let crc_symbols = CRC_LEN * 8 / bps;
        let training_a = PREAMBLE_SYMBOLS..PREAMBLE_SYMBOLS + TRAINING_LEN;
        let training_b = training_a.end..training_a.end + TRAINING_LEN;
        let header = training_b.end..training_b.end + HEADER_SYMBOLS;
        let payload_region = header.end..header.end + payload_symbols + pilot_count + crc_symbols;
        FrameSegments {
            preamble: 0..PREAMBLE_SYMBOLS,
            training_a,
            training_b,
            header,
            payload_region,
            payload_symbols,
            pilot_count,
            crc_symbols,
        }
    }

    /// Symbols from the first preamble chip through the last CRC symbol.
    pub fn total_symbols(&self) -> usize {
        self.payload_region.end
    }

    /// Frame plus its trailing guard.
    pub fn period_symbols(&self) -> usize {
        self.total_symbols() + GUARD_SYMBOLS
    }

    /// Contents of each payload-region slot in transmission order.
    pub fn region_slots(&self) -> Vec<Slot> {
        let mut slots = Vec::with_capacity(self.payload_region.len());
        let mut pilots = 0;
        for k in 0..self.payload_symbols {
            slots.push(Slot::Payload(k));
            if (k + 1) % PILOT_PERIOD == 0 {
                slots.push(Slot::Pilot(pilots));
                pilots += 1;
            }
        }
        slots.extend((0..self.crc_symbols).map(Slot::Crc));
        slots
    }
}

/// Known QPSK training and pilot symbols shared by every node.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequences {
    pub antenna_a: Vec<C64>,
    pub antenna_b: Vec<C64>,
    pub pilot_symbol: C64,
}

/// Training symbols drawn from ChaCha8 seeded with `seed`: each symbol takes
/// the two low bits of one `u32` draw (high bit first) through the QPSK map,
/// 64 draws for antenna A followed by 64 for antenna B.
pub fn training_sequences(seed: u64) -> TrainingSequences {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<C64> {
        let bits: Vec<u8> = (0..n)
            .flat_map(|_| {
                let r: u32 = rng.random();
                [((r >> 1) & 1) as u8, (r & 1) as u8]
            })
            .collect();
        map_qpsk(&bits).expect("even bit count")
    };
    let antenna_a = draw(TRAINING_LEN);
    let antenna_b = draw(TRAINING_LEN);
    TrainingSequences {
        antenna_a,
        antenna_b,
        pilot_symbol: C64::new(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    }
}

/// `Ga ‖ Gb` from the length-256 Golay pair as ±1 chips.
pub fn build_preamble() -> Vec<f64> {
    let pair = golay_pair(8).expect("256 is a supported length");
    pair.a.iter().chain(pair.b.iter()).map(|&c| c as f64).collect()
}

/// Frame content as bits, with the header already protected.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFrame {
    pub descriptor: FrameDescriptor,
    pub segments: FrameSegments,
    /// Preamble chips as bits (chip +1 ↔ bit 0).
    pub preamble_bits: Vec<u8>,
    pub header_bits: Vec<u8>,
    pub payload_bits: Vec<u8>,
    pub crc_bits: Vec<u8>,
}

impl EncodedFrame {
    /// The full frame bit stream: preamble, header, payload, CRC.
    pub fn bits(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            self.preamble_bits.len() + self.header_bits.len() + self.payload_bits.len() + self.crc_bits.len(),
        );
        out.extend_from_slice(&self.preamble_bits);
        out.extend_from_slice(&self.header_bits);
        out.extend_from_slice(&self.payload_bits);
        out.extend_from_slice(&self.crc_bits);
        out
    }

    /// Bit ranges within [`EncodedFrame::bits`] for each segment.
    pub fn bit_markers(&self) -> [(&'static str, Range<usize>); 4] {
        let p = self.preamble_bits.len();
        let h = p + self.header_bits.len();
        let d = h + self.payload_bits.len();
        [("preamble", 0..p), ("header", p..h), ("payload", h..d), ("crc", d..d + self.crc_bits.len())]
    }
}

pub fn encode_header(desc: &FrameDescriptor) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0] = desc.version;
    h[1] = desc.src_node;
    h[2] = desc.dst_node;
    h[3..7].copy_from_slice(&desc.seq.to_le_bytes());
    h[7..9].copy_from_slice(&desc.payload_len.to_le_bytes());
    h[9] = match desc.modulation {
        Modulation::Qpsk => 0,
        Modulation::Qam16 => 1,
    };
    h[10] = match desc.diversity_mode {
        DiversityMode::Alamouti => 0,
        DiversityMode::SingleTxMrc => 1,
    };
    let crc = crc16_ccitt(&h[..11]);
    h[11..13].copy_from_slice(&crc.to_le_bytes());
    h
}

pub fn encode_frame(desc: &FrameDescriptor, payload: &[u8]) -> Result<EncodedFrame> {
    if payload.len() > MAX_PAYLOAD {
        return Err(Error::Encode(format!("payload of {} bytes exceeds {MAX_PAYLOAD}", payload.len())));
    }
    if payload.len() != desc.payload_len as usize {
        return Err(Error::Encode(format!(
            "descriptor says {} payload bytes, got {}",
            desc.payload_len,
            payload.len()
        )));
    }
    desc.validate()?;
    let mut descriptor = *desc;
    descriptor.header_crc_ok = true;
    descriptor.payload_crc_ok = true;
    let header = encode_header(&descriptor);
    let crc = payload_crc(&header, payload);
    Ok(EncodedFrame {
        segments: descriptor.segments(),
        descriptor,
        preamble_bits: build_preamble().iter().map(|&c| (c < 0.0) as u8).collect(),
        header_bits: bytes_to_bits(&header),
        payload_bits: bytes_to_bits(payload),
        crc_bits: bytes_to_bits(&crc.to_le_bytes()),
    })
}

/// CRC-32 over the header bytes followed by the payload.
pub fn payload_crc(header: &[u8; HEADER_LEN], payload: &[u8]) -> u32 {
    let mut buf = Vec::with_capacity(HEADER_LEN + payload.len());
    buf.extend_from_slice(header);
    buf.extend_from_slice(payload);
    crc32(&buf)
}

/// Parse 128 header bits. Fields are returned even when the CRC fails.
pub fn decode_header(header_bits: &[u8]) -> Result<FrameDescriptor> {
    if header_bits.len() != HEADER_BITS {
        return Err(contract(format!("header needs {HEADER_BITS} bits, got {}", header_bits.len())));
    }
    let h = bits_to_bytes(header_bits);
    let crc = u16::from_le_bytes([h[11], h[12]]);
    Ok(FrameDescriptor {
        version: h[0],
        src_node: h[1],
        dst_node: h[2],
        seq: u32::from_le_bytes([h[3], h[4], h[5], h[6]]),
        payload_len: u16::from_le_bytes([h[7], h[8]]),
        modulation: if h[9] & 1 == 1 { Modulation::Qam16 } else { Modulation::Qpsk },
        diversity_mode: if h[10] & 1 == 1 {
            DiversityMode::SingleTxMrc
        } else {
            DiversityMode::Alamouti
        },
        header_crc_ok: crc16_ccitt(&h[..11]) == crc,
        payload_crc_ok: false,
    })
}

/// Check the received payload and CRC bits against the decoded header.
pub fn check_payload(header_bits: &[u8], payload: &[u8], crc_bits: &[u8]) -> bool {
    if header_bits.len() != HEADER_BITS || crc_bits.len() != 32 {
        return false;
    }
    let header: [u8; HEADER_LEN] = bits_to_bytes(header_bits).try_into().expect("16 bytes");
    let crc = bits_to_bytes(crc_bits);
    payload_crc(&header, payload) == u32::from_le_bytes([crc[0], crc[1], crc[2], crc[3]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(payload_len: usize) -> FrameDescriptor {
        FrameDescriptor::new(1, 2, 0xDEAD_BEEF, payload_len, Modulation::Qam16, DiversityMode::Alamouti)
    }

    #[test]
    fn preamble_is_64_bytes_of_chips() {
        let p = build_preamble();
        assert_eq!(p.len(), 512);
        assert_eq!(p.len() / 8, 64);
        assert_eq!(&p[..2], &[1.0, 1.0]);
    }

    #[test]
    fn preamble_self_correlation_peaks_at_512() {
        let p = build_preamble();
        let (ga, gb) = p.split_at(256);
        // Complementary metric of the preamble against itself, brute force.
        let metric = |lag: isize| -> f64 {
            let corr = |code: &[f64], offset: isize| -> f64 {
                code.iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let idx = offset + i as isize;
                        if idx >= 0 && (idx as usize) < p.len() {
                            c * p[idx as usize]
                        } else {
                            0.0
                        }
                    })
                    .sum()
            };
            corr(ga, lag).abs() + corr(gb, lag + 256).abs()
        };
        assert_eq!(metric(0), 512.0);
        for lag in -600..600 {
            if lag != 0 {
                assert!(metric(lag) < 512.0);
            }
        }
    }

    #[test]
    fn default_frame_segment_sizes() {
        let s = FrameSegments::new(4992, Modulation::Qam16);
        assert_eq!(s.payload_symbols, 9984);
        assert_eq!(s.pilot_count, 312);
        assert_eq!(s.crc_symbols, 8);
        assert_eq!(s.total_symbols(), 512 + 128 + 64 + 9984 + 312 + 8);
        let q = FrameSegments::new(100, Modulation::Qpsk);
        assert_eq!(q.crc_symbols, 16);
        assert_eq!(q.pilot_count, 400 / 32);
    }

    #[test]
    fn region_slots_place_pilots_every_32() {
        let s = FrameSegments::new(40, Modulation::Qam16); // 80 payload symbols
        let slots = s.region_slots();
        assert_eq!(slots.len(), s.payload_region.len());
        assert_eq!(slots[32], Slot::Pilot(0));
        assert_eq!(slots[65], Slot::Pilot(1));
        assert_eq!(slots[66], Slot::Payload(64));
        assert_eq!(*slots.last().unwrap(), Slot::Crc(7));
    }

    #[test]
    fn zero_length_payload_still_has_every_segment() {
        let f = encode_frame(&desc(0), &[]).unwrap();
        assert!(f.payload_bits.is_empty());
        assert_eq!(f.crc_bits.len(), 32);
        assert_eq!(f.segments.payload_symbols, 0);
        let header = encode_header(&f.descriptor);
        let crc = bits_to_bytes(&f.crc_bits);
        assert_eq!(u32::from_le_bytes(crc.try_into().unwrap()), crc32(&header));
    }

    #[test]
    fn encode_rejects_bad_frames() {
        assert!(matches!(encode_frame(&desc(9000), &vec![0; 9000]), Err(Error::Encode(_))));
        let mut d = desc(4);
        d.src_node = 5;
        assert!(encode_frame(&d, &[0; 4]).is_err());
        d.src_node = 2;
        assert!(encode_frame(&d, &[0; 4]).is_err());
        assert!(encode_frame(&desc(4), &[0; 3]).is_err());
    }

    #[test]
    fn header_single_bit_flips_detected() {
        let f = encode_frame(&desc(10), &[7; 10]).unwrap();
        assert!(decode_header(&f.header_bits).unwrap().header_crc_ok);
        // Bits 0..104 are the protected fields plus the CRC itself.
        for k in 0..104 {
            let mut bits = f.header_bits.clone();
            bits[k] ^= 1;
            assert!(!decode_header(&bits).unwrap().header_crc_ok, "bit {k}");
        }
    }

    #[test]
    fn all_zero_header_fails_crc() {
        let d = decode_header(&[0u8; 128]).unwrap();
        assert!(!d.header_crc_ok);
        assert_ne!(crc::oracle::crc16_bitwise(&[0u8; 11]), 0);
    }

    #[test]
    fn decode_header_length_checked() {
        assert!(matches!(decode_header(&[0u8; 127]), Err(Error::Contract(_))));
    }

    #[test]
    fn training_is_deterministic_unit_power() {
        let t = training_sequences(TRAINING_SEED);
        assert_eq!(t, training_sequences(TRAINING_SEED));
        for seq in [&t.antenna_a, &t.antenna_b] {
            assert_eq!(seq.len(), 64);
            let p = seq.iter().map(|s| s.norm_sqr()).sum::<f64>() / 64.0;
            assert!((p - 1.0).abs() < 1e-12);
        }
        let xc: C64 = t.antenna_a.iter().zip(&t.antenna_b).map(|(a, b)| a * b.conj()).sum();
        assert!(xc.norm() < 64.0);
    }

    fn arb_frame() -> impl proptest::strategy::Strategy<Value = (FrameDescriptor, Vec<u8>)> {
        use proptest::prelude::*;
        (0u8..4, 1u8..4, any::<u32>(), prop::bool::ANY, prop::bool::ANY, prop::bool::ANY, prop::collection::vec(any::<u8>(), 0..600)).prop_map(
            |(src, step, seq, qam, mrc, broadcast, payload)| {
                let dst = if broadcast { BROADCAST } else { (src + step) % 4 };
                let m = if qam { Modulation::Qam16 } else { Modulation::Qpsk };
                let mode = if mrc { DiversityMode::SingleTxMrc } else { DiversityMode::Alamouti };
                (FrameDescriptor::new(src, dst, seq, payload.len(), m, mode), payload)
            },
        )
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(10_000))]

        #[test]
        fn encode_decode_round_trip((d, payload) in arb_frame()) {
            let f = encode_frame(&d, &payload).unwrap();
            let bits = f.bits();
            let [_, (_, h), (_, p), (_, c)] = f.bit_markers();
            let got = decode_header(&bits[h.clone()]).unwrap();
            proptest::prop_assert!(got.header_crc_ok);
            proptest::prop_assert!(check_payload(&bits[h], &bits_to_bytes(&bits[p.clone()]), &bits[c]));
            proptest::prop_assert_eq!(FrameDescriptor { payload_crc_ok: true, ..got }, f.descriptor);
            proptest::prop_assert_eq!(bits_to_bytes(&bits[p]), payload);
            let seg = &f.segments;
            proptest::prop_assert_eq!(seg.pilot_count, seg.payload_symbols / PILOT_PERIOD);
            proptest::prop_assert_eq!(seg.region_slots().len(), seg.payload_symbols + seg.pilot_count + seg.crc_symbols);
        }
    }
}
