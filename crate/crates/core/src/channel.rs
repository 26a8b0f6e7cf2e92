//! Shared over-the-air medium between the four nodes.
//!
//! Every receive antenna hears the sum of all other nodes' transmit antennas,
//! each path delayed, filtered, frequency-shifted, plus white Gaussian noise.
//! Paths are fixed per directed node pair; a node never hears itself.

use crate::dsp::{design_srrc, SampleBlock};
use crate::error::{contract, param};
use crate::modem::channelizer::ChannelizerDesign;
use crate::modem::tx::SRRC_SPAN_SYMBOLS;
use crate::mesh::BandPlan;
use crate::{Result, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const NODES: usize = 4;
/// Multipath tap powers in dB relative to the first tap.
pub const MULTIPATH_PROFILE_DB: [f64; 3] = [0.0, -9.0, -18.0];
/// Samples between multipath taps (one symbol at 8 samples per symbol).
pub const MULTIPATH_TAP_SPACING: usize = 8;
/// Largest random path delay in composite samples (exclusive).
pub const MAX_PATH_DELAY: usize = 8;
/// Largest carrier offset of the mobile profile, in symbol-rate units.
pub const MOBILE_MAX_CFO_RS: f64 = 1e-4;
/// Largest tap rotation of the mobile profile, in cycles per composite sample.
pub const MOBILE_TAP_ROTATION: f64 = 2e-7;
/// Delay-line history kept per transmit antenna.
const HISTORY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelProfile {
    #[serde(rename = "IDEAL")]
    Ideal,
    #[serde(rename = "AWGN_ONLY")]
    AwgnOnly,
    #[serde(rename = "MULTIPATH_LIGHT")]
    MultipathLight,
    #[serde(rename = "MOBILE")]
    Mobile,
}

impl ChannelProfile {
    pub fn name(self) -> &'static str {
        match self {
            ChannelProfile::Ideal => "IDEAL",
            ChannelProfile::AwgnOnly => "AWGN_ONLY",
            ChannelProfile::MultipathLight => "MULTIPATH_LIGHT",
            ChannelProfile::Mobile => "MOBILE",
        }
    }

    pub fn has_noise(self) -> bool {
        self != ChannelProfile::Ideal
    }
}

/// Independent random streams. Each kind maps to its own ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Noise { node: usize, antenna: usize },
    Fading,
    Payload { node: usize },
}

impl StreamKind {
    pub fn id(self) -> u64 {
        match self {
            StreamKind::Noise { node, antenna } => 0x100 + (node * 2 + antenna) as u64,
            StreamKind::Fading => 0x200,
            StreamKind::Payload { node } => 0x300 + node as u64,
        }
    }
}

/// A seeded ChaCha8 generator on one stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, kind: StreamKind) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(kind.id());
        RngStream {
            seed,
            stream_id: kind.id(),
            rng,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Circularly-symmetric complex Gaussian sample of variance `var`.
    pub fn complex_gaussian(&mut self, var: f64) -> C64 {
        complex_gaussian(&mut self.rng, var)
    }
}

pub fn complex_gaussian<R: Rng>(rng: &mut R, var: f64) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * (var / 2.0).sqrt()
}

/// One directed node pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathChannel {
    /// `taps[i][j]`: composite-rate FIR from TX antenna `j` to RX antenna `i`.
    pub taps: [[Vec<C64>; 2]; 2],
    pub delay_samples: usize,
    /// Carrier offset in cycles per composite sample.
    pub cfo_normalized: f64,
    /// Per-tap phase rotation in cycles per composite sample.
    pub tap_rotation: [[Vec<f64>; 2]; 2],
}

impl PathChannel {
    pub fn unit() -> Self {
        let one = vec![C64::new(1.0, 0.0)];
        PathChannel {
            taps: [[one.clone(), one.clone()], [one.clone(), one]],
            delay_samples: 0,
            cfo_normalized: 0.0,
            tap_rotation: [[vec![0.0], vec![0.0]], [vec![0.0], vec![0.0]]],
        }
    }
}

/// Propagation state of the whole network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub profile: ChannelProfile,
    /// `paths[src][dst]`; `None` on the diagonal.
    pub paths: [[Option<PathChannel>; NODES]; NODES],
    /// Noise variance per complex composite sample at each receiving node.
    pub noise_power: [f64; NODES],
    /// Requested in-band SNR per receiving node.
    pub snr_db: [f64; NODES],
}

impl ChannelRealization {
    pub fn path(&self, src: usize, dst: usize) -> Option<&PathChannel> {
        self.paths.get(src).and_then(|row| row.get(dst)).and_then(|p| p.as_ref())
    }

    /// Re-derive node `node`'s noise for a new in-band SNR.
    pub fn set_snr(&mut self, node: usize, snr_db: f64, cal: &NoiseCalibration) -> Result<()> {
        if node >= NODES || !snr_db.is_finite() {
            return Err(param(format!("cannot set SNR {snr_db} dB on node {node}")));
        }
        self.snr_db[node] = snr_db;
        self.noise_power[node] = if self.profile.has_noise() { cal.noise_power(snr_db) } else { 0.0 };
        Ok(())
    }

    /// Multiply every tap of path `src -> dst` by `amplitude`.
    pub fn scale_path(&mut self, src: usize, dst: usize, amplitude: f64) -> Result<()> {
        let path = self.paths.get_mut(src).and_then(|row| row.get_mut(dst)).and_then(|p| p.as_mut());
        match path {
            Some(p) if amplitude.is_finite() && amplitude >= 0.0 => {
                p.taps.iter_mut().flatten().flatten().for_each(|t| *t *= amplitude);
                Ok(())
            }
            _ => Err(param(format!("cannot scale path {src} -> {dst} by {amplitude}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for src in 0..NODES {
            for dst in 0..NODES {
                match (&self.paths[src][dst], src == dst) {
                    (Some(_), true) => return Err(param(format!("node {src} has a path to itself"))),
                    (None, false) => return Err(param(format!("missing path {src} -> {dst}"))),
                    (Some(p), false) => {
                        let max_len = p.taps.iter().flatten().map(Vec::len).max().unwrap_or(0);
                        if p.taps.iter().flatten().any(Vec::is_empty) || p.delay_samples + max_len > HISTORY {
                            return Err(param(format!("path {src} -> {dst} taps or delay out of range")));
                        }
                    }
                    (None, true) => {}
                }
            }
        }
        if self.noise_power.iter().any(|&n| !(n >= 0.0)) {
            return Err(param("noise power must be non-negative"));
        }
        Ok(())
    }
}

/// Signal and noise gains of the receive chain, used to turn an in-band SNR
/// into a composite-rate noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    /// Mean matched-filter output power for unit-power symbols, unit channel.
    pub signal_power: f64,
    /// Matched-filter output noise power per unit input noise variance.
    pub noise_gain: f64,
}

impl NoiseCalibration {
    pub fn new(plan: &BandPlan, design: &ChannelizerDesign) -> Result<Self> {
        let sps = plan.samples_per_symbol;
        let srrc = design_srrc(plan.roll_off, SRRC_SPAN_SYMBOLS, sps)?;
        let rx = design.lowpass.convolve(&design.lowpass).convolve(&design.srrc);
        let g = srrc.convolve(&rx);
        Ok(NoiseCalibration {
            signal_power: g.taps.iter().map(|t| t * t).sum::<f64>() / sps as f64,
            noise_gain: rx.energy(),
        })
    }

    /// Noise variance per composite sample giving `snr_db` at the
    /// matched-filter output.
    pub fn noise_power(&self, snr_db: f64) -> f64 {
        self.signal_power / (10f64.powf(snr_db / 10.0) * self.noise_gain)
    }
}

fn multipath_taps<R: Rng>(rng: &mut R) -> Vec<C64> {
    let total: f64 = MULTIPATH_PROFILE_DB.iter().map(|d| 10f64.powf(d / 10.0)).sum();
    let mut taps = vec![C64::new(0.0, 0.0); (MULTIPATH_PROFILE_DB.len() - 1) * MULTIPATH_TAP_SPACING + 1];
    for (k, d) in MULTIPATH_PROFILE_DB.iter().enumerate() {
        taps[k * MULTIPATH_TAP_SPACING] = complex_gaussian(rng, 10f64.powf(d / 10.0) / total);
    }
    taps
}

/// Draw a realization for every directed pair. `snr_db[n]` is node `n`'s
/// in-band receive SNR.
pub fn make_realization(profile: ChannelProfile, snr_db: [f64; NODES], cal: &NoiseCalibration, rng: &mut RngStream) -> ChannelRealization {
    let mut paths: [[Option<PathChannel>; NODES]; NODES] = Default::default();
    for (src, row) in paths.iter_mut().enumerate() {
        for (dst, slot) in row.iter_mut().enumerate() {
            if src == dst {
                continue;
            }
            *slot = Some(match profile {
                ChannelProfile::Ideal | ChannelProfile::AwgnOnly => PathChannel::unit(),
                ChannelProfile::MultipathLight | ChannelProfile::Mobile => {
                    let r = rng.rng();
                    let taps = [[multipath_taps(r), multipath_taps(r)], [multipath_taps(r), multipath_taps(r)]];
                    let delay_samples = r.random_range(0..MAX_PATH_DELAY);
                    let (cfo_normalized, tap_rotation) = if profile == ChannelProfile::Mobile {
                        let cfo = r.random_range(-1.0..=1.0) * MOBILE_MAX_CFO_RS / 8.0;
                        let rot = taps.clone().map(|row| {
                            row.map(|t| t.iter().map(|_| r.random_range(-1.0..=1.0) * MOBILE_TAP_ROTATION).collect())
                        });
                        (cfo, rot)
                    } else {
                        (0.0, taps.clone().map(|row| row.map(|t| vec![0.0; t.len()])))
                    };
                    PathChannel {
                        taps,
                        delay_samples,
                        cfo_normalized,
                        tap_rotation,
                    }
                }
            });
        }
    }
    let mut real = ChannelRealization {
        profile,
        paths,
        noise_power: [0.0; NODES],
        snr_db,
    };
    for (node, &s) in snr_db.iter().enumerate() {
        real.set_snr(node, s, cal).expect("finite SNR");
    }
    real
}

/// Streaming propagation with delay-line history and per-antenna noise.
#[derive(Debug, Clone)]
pub struct Medium {
    history: [[Vec<C64>; 2]; NODES],
    next_index: Option<u64>,
    noise: Vec<RngStream>,
    parallel: bool,
}

impl Medium {
    pub fn new(seed: u64, parallel: bool) -> Self {
        let zero = vec![C64::new(0.0, 0.0); HISTORY];
        Medium {
            history: std::array::from_fn(|_| [zero.clone(), zero.clone()]),
            next_index: None,
            noise: (0..NODES * 2)
                .map(|k| RngStream::new(seed, StreamKind::Noise { node: k / 2, antenna: k % 2 }))
                .collect(),
            parallel,
        }
    }

    pub fn set_parallel(&mut self, parallel: bool) {
        self.parallel = parallel;
    }

    /// Mix one block quantum. `tx[node][antenna]` must share length and start
    /// index; returns `rx[node][antenna]`.
    pub fn propagate(&mut self, tx: &[[SampleBlock; 2]; NODES], real: &ChannelRealization) -> Result<[[SampleBlock; 2]; NODES]> {
        let start = tx[0][0].start_index;
        let len = tx[0][0].len();
        let rate = tx[0][0].sample_rate;
        if tx.iter().flatten().any(|b| b.start_index != start || b.len() != len || b.sample_rate != rate) {
            return Err(contract("transmit blocks differ in start, length or rate"));
        }
        if let Some(expected) = self.next_index {
            if start != expected {
                return Err(contract(format!("medium expected sample {expected}, got {start}")));
            }
        }
        real.validate()?;
        // Delay line ‖ block, per transmitter and antenna.
        let ext: Vec<[Vec<C64>; 2]> = (0..NODES)
            .map(|n| {
                std::array::from_fn(|j| {
                    let mut v = Vec::with_capacity(HISTORY + len);
                    v.extend_from_slice(&self.history[n][j]);
                    v.extend_from_slice(&tx[n][j].samples);
                    v
                })
            })
            .collect();
        let silent: Vec<[bool; 2]> = (0..NODES).map(|n| std::array::from_fn(|j| tx[n][j].samples.iter().all(|s| *s == C64::new(0.0, 0.0)) && self.history[n][j].iter().all(|s| *s == C64::new(0.0, 0.0)))).collect();

        let work = |(k, rng): (usize, &mut RngStream)| -> Vec<C64> {
            let (dst, ant) = (k / 2, k % 2);
            let mut out = vec![C64::new(0.0, 0.0); len];
            for src in (0..NODES).filter(|&s| s != dst) {
                let path = real.path(src, dst).expect("validated");
                let mut acc = vec![C64::new(0.0, 0.0); len];
                let mut any = false;
                for j in 0..2 {
                    if silent[src][j] {
                        continue;
                    }
                    any = true;
                    let taps = &path.taps[ant][j];
                    let rot = &path.tap_rotation[ant][j];
                    let x = &ext[src][j];
                    for (t, (&tap, &r)) in taps.iter().zip(rot).enumerate() {
                        if tap == C64::new(0.0, 0.0) {
                            continue;
                        }
                        // Rotating taps are held for the block at their
                        // value at the block's centre sample.
                        let tap = if r != 0.0 {
                            let mid = start as f64 + len as f64 / 2.0;
                            tap * C64::from_polar(1.0, 2.0 * PI * (r * mid).rem_euclid(1.0))
                        } else {
                            tap
                        };
                        let off = HISTORY - path.delay_samples - t;
                        for (o, s) in acc.iter_mut().zip(&x[off..off + len]) {
                            *o += tap * s;
                        }
                    }
                }
                if !any {
                    continue;
                }
                if path.cfo_normalized != 0.0 {
                    let step = C64::from_polar(1.0, 2.0 * PI * path.cfo_normalized);
                    let mut ph = C64::from_polar(1.0, 2.0 * PI * (path.cfo_normalized * start as f64).rem_euclid(1.0));
                    for a in acc.iter_mut() {
                        *a *= ph;
                        ph *= step;
                    }
                }
                for (o, a) in out.iter_mut().zip(&acc) {
                    *o += a;
                }
            }
            let var = real.noise_power[dst];
            if var > 0.0 {
                for o in out.iter_mut() {
                    *o += rng.complex_gaussian(var);
                }
            }
            out
        };
        let outs: Vec<Vec<C64>> = if self.parallel {
            self.noise.par_iter_mut().enumerate().map(work).collect()
        } else {
            self.noise.iter_mut().enumerate().map(work).collect()
        };

        for (n, hist) in self.history.iter_mut().enumerate() {
            for (j, h) in hist.iter_mut().enumerate() {
                let e = &ext[n][j];
                h.copy_from_slice(&e[e.len() - HISTORY..]);
            }
        }
        self.next_index = Some(start + len as u64);
        let mut it = outs.into_iter();
        Ok(std::array::from_fn(|_| std::array::from_fn(|_| SampleBlock::new(it.next().expect("8 outputs"), rate, start))))
    }
}

/// One-shot propagation of a single block from a fresh medium.
pub fn propagate(tx: &[[SampleBlock; 2]; NODES], real: &ChannelRealization, rng_seed: u64) -> Result<[[SampleBlock; 2]; NODES]> {
    Medium::new(rng_seed, false).propagate(tx, real)
}
