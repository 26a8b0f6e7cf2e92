//! The four-node complete graph: transmit scheduling, shared medium, twelve
//! receive chains and link accounting, advanced in fixed block quanta.

use crate::channel::{make_realization, ChannelProfile, ChannelRealization, Medium, NoiseCalibration, RngStream, StreamKind, NODES};
use crate::dsp::SampleBlock;
use crate::error::{param, Error};
use crate::framing::{encode_frame, DiversityMode, FrameDescriptor, FrameSegments};
use crate::mesh::band::{build_band_plan, BandPlan, BAND_COUNT, SAMPLES_PER_SYMBOL};
use crate::mesh::control::{Control, MAX_GAIN, SNR_RANGE_DB};
use crate::mesh::payload::{PayloadGenerator, PayloadSource};
use crate::modem::channelizer::ChannelizerDesign;
use crate::modem::metrics::LinkMetrics;
use crate::modem::receiver::{BandReceiver, FrameReport, ReceiverConfig};
use crate::modem::tx::{Transmitter, TxConfig};
use crate::modem::Modulation;
use crate::{Result, C64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::Arc;

/// Composite samples advanced per step.
pub const BLOCK_QUANTUM: usize = 8192;
/// Silence before the first frame so every detector has a noise floor.
pub const TX_WARMUP: u64 = BLOCK_QUANTUM as u64;
/// Extra silence between a node's last frame and a band-swap commit.
pub const SWAP_DRAIN: u64 = 1024;
/// Silence after a band-swap commit before the swapped nodes resume.
pub const SWAP_SETTLE: u64 = 4096;
/// A transmitted frame not decoded this many samples after it ended is
/// counted as missed.
pub const MISS_TIMEOUT: u64 = 4 * BLOCK_QUANTUM as u64;
/// Largest distance between a transmitted frame start and the receiver's
/// estimate of it when matching the two.
const MATCH_EARLY: u64 = 16;
const MATCH_LATE: u64 = 64;
/// Directed links in the complete graph.
pub const LINK_COUNT: usize = NODES * (NODES - 1);
/// Constellation points kept per link per telemetry period.
pub const CONSTELLATION_POINTS: usize = 512;
/// Default per-frame payload in bytes.
pub const DEFAULT_PAYLOAD_LEN: usize = 4992;

/// Index of link (src, dst) in the fixed link order.
pub fn link_index(src: usize, dst: usize) -> usize {
    debug_assert!(src != dst && src < NODES && dst < NODES);
    src * (NODES - 1) + dst - usize::from(dst > src)
}

/// (src, dst) of every link in the fixed order.
pub fn link_pairs() -> impl Iterator<Item = (usize, usize)> {
    (0..NODES).flat_map(|s| (0..NODES).filter(move |&d| d != s).map(move |d| (s, d)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub gain: f64,
    pub modulation: Modulation,
    pub diversity_mode: DiversityMode,
    pub payload_source: PayloadSource,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            gain: 1.0,
            modulation: Modulation::Qam16,
            diversity_mode: DiversityMode::Alamouti,
            payload_source: PayloadSource::Prbs23,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub profile: ChannelProfile,
    /// Receive SNR of each node, in-band, in dB.
    pub snr_db: [f64; NODES],
    /// Per-link SNR overrides `(src, dst, dB)`, realized by scaling the path
    /// gain against the receiving node's noise.
    pub link_snr_db: Vec<(usize, usize, f64)>,
    pub payload_len: usize,
    pub nodes: [NodeConfig; NODES],
    /// Initial band of each node; must be a permutation.
    pub bands: [usize; NODES],
    pub seed: u64,
    /// Run the medium and receive chains on the rayon pool.
    pub parallel: bool,
    pub receiver: ReceiverConfig,
    pub payload_file: Option<Arc<Vec<u8>>>,
    /// Symbol rate used to report time and rates; the simulation itself is
    /// always at one symbol per normalized second.
    pub report_symbol_rate: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            profile: ChannelProfile::AwgnOnly,
            snr_db: [28.0; NODES],
            link_snr_db: Vec::new(),
            payload_len: DEFAULT_PAYLOAD_LEN,
            nodes: [NodeConfig::default(); NODES],
            bands: [0, 1, 2, 3],
            seed: 1,
            parallel: true,
            receiver: ReceiverConfig::default(),
            payload_file: None,
            report_symbol_rate: 1.0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; BAND_COUNT];
        for &b in &self.bands {
            if b >= BAND_COUNT || std::mem::replace(&mut seen[b], true) {
                return Err(param(format!("band assignment {:?} is not a permutation", self.bands)));
            }
        }
        if self.payload_len > crate::framing::MAX_PAYLOAD {
            return Err(param(format!("payload_len {} exceeds {}", self.payload_len, crate::framing::MAX_PAYLOAD)));
        }
        for (n, c) in self.nodes.iter().enumerate() {
            if !(c.gain > 0.0 && c.gain <= MAX_GAIN) {
                return Err(param(format!("node {n} gain {} outside (0, {MAX_GAIN}]", c.gain)));
            }
            if c.payload_source == PayloadSource::File && !self.payload_file.as_ref().is_some_and(|f| !f.is_empty()) {
                return Err(param(format!("node {n} uses FILE payloads but no file is loaded")));
            }
        }
        if self.snr_db.iter().any(|s| !(SNR_RANGE_DB.0..=SNR_RANGE_DB.1).contains(s)) {
            return Err(param(format!("SNR outside {SNR_RANGE_DB:?} dB")));
        }
        for &(src, dst, snr) in &self.link_snr_db {
            if src >= NODES || dst >= NODES || src == dst || !(SNR_RANGE_DB.0..=SNR_RANGE_DB.1).contains(&snr) {
                return Err(param(format!("link SNR override {src} -> {dst} at {snr} dB is invalid")));
            }
        }
        if !(self.report_symbol_rate > 0.0 && self.report_symbol_rate.is_finite()) {
            return Err(param("report symbol rate must be positive"));
        }
        Ok(())
    }
}

/// Changes requested by the operator, applied at the node's next frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Pending {
    gain: Option<f64>,
    modulation: Option<Modulation>,
    diversity_mode: Option<DiversityMode>,
    payload_source: Option<PayloadSource>,
    paused: Option<bool>,
}

impl Pending {
    fn is_empty(&self) -> bool {
        *self == Pending::default()
    }
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: usize,
    pub band: usize,
    /// Configuration of the frame currently on air.
    pub tx_config: TxConfig,
    pub payload_source: PayloadSource,
    /// Next sequence number towards each destination.
    pub seq_counters: [u32; NODES],
    pub paused: bool,
    frames_sent: u64,
    next_frame_start: u64,
    /// No new frames while a band swap involving this node is pending.
    draining: bool,
    pending: Pending,
    generator: PayloadGenerator,
    /// Overlap-add buffer for both antennas, first sample at the network
    /// clock.
    buffer: [Vec<C64>; 2],
}

impl NodeState {
    /// The three destinations in round-robin order.
    fn destinations(&self) -> [usize; NODES - 1] {
        let mut out = [0; NODES - 1];
        for (slot, d) in out.iter_mut().zip((0..NODES).filter(|&d| d != self.node_id)) {
            *slot = d;
        }
        out
    }

    fn apply_pending(&mut self) {
        let p = std::mem::take(&mut self.pending);
        if let Some(g) = p.gain {
            self.tx_config.gain = g;
        }
        if let Some(m) = p.modulation {
            self.tx_config.modulation = m;
        }
        if let Some(d) = p.diversity_mode {
            self.tx_config.diversity_mode = d;
        }
        if let Some(s) = p.payload_source {
            self.payload_source = s;
        }
        if let Some(paused) = p.paused {
            self.paused = paused;
        }
    }

    /// Configuration including changes not yet on air.
    fn requested(&self) -> NodeConfig {
        NodeConfig {
            gain: self.pending.gain.unwrap_or(self.tx_config.gain),
            modulation: self.pending.modulation.unwrap_or(self.tx_config.modulation),
            diversity_mode: self.pending.diversity_mode.unwrap_or(self.tx_config.diversity_mode),
            payload_source: self.pending.payload_source.unwrap_or(self.payload_source),
        }
    }
}

/// One transmitted frame, kept until every receiver has seen it or it times
/// out.
#[derive(Debug, Clone)]
struct TxRecord {
    dst: u8,
    seq: u32,
    start: u64,
    end: u64,
    payload: Arc<Vec<u8>>,
    received: [bool; NODES],
}

#[derive(Debug)]
struct RxChain {
    node: usize,
    band: usize,
    receiver: BandReceiver,
}

#[derive(Debug, Clone, Default)]
struct LinkState {
    total: LinkMetrics,
    period: LinkMetrics,
    constellation: Vec<C64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PendingSwap {
    a: usize,
    b: usize,
    commit: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSnapshot {
    pub src: usize,
    pub dst: usize,
    pub band: usize,
    /// Over frames received this telemetry period.
    pub evm_pct: Option<f64>,
    pub sinr_db: Option<f64>,
    pub period_fer: Option<f64>,
    /// Cumulative since the start of the run.
    pub ber: f64,
    pub fer: f64,
    pub frames_detected: u64,
    pub frames_crc_ok: u64,
    pub frames_missed: u64,
    pub payload_bits: u64,
    pub bit_errors: u64,
    pub delivered_bits: u64,
    pub goodput_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub node: usize,
    pub band: usize,
    pub gain: f64,
    pub modulation: Modulation,
    pub diversity_mode: DiversityMode,
    pub payload_source: PayloadSource,
    pub paused: bool,
    pub snr_db: f64,
    /// Requested changes are waiting for the next frame boundary.
    pub pending: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    /// Simulated seconds in the reporting time base.
    pub timestamp: f64,
    pub sample_index: u64,
    pub links: Vec<LinkSnapshot>,
    /// Delivered payload bits over elapsed simulated time.
    pub aggregate_throughput_bps: f64,
    /// Sum of the line rates of all links whose transmitter is active.
    pub aggregate_line_rate_bps: f64,
    pub nodes: Vec<NodeSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationLink {
    pub src: usize,
    pub dst: usize,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationSnapshot {
    pub timestamp: f64,
    pub links: Vec<ConstellationLink>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEvent {
    pub timestamp: f64,
    pub sample_index: u64,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSummary {
    pub src: usize,
    pub dst: usize,
    pub evm_pct: Option<f64>,
    pub sinr_db: Option<f64>,
    pub ber: f64,
    pub fer: f64,
    pub frames_detected: u64,
    pub frames_crc_ok: u64,
    pub frames_missed: u64,
    pub payload_bits: u64,
    pub bit_errors: u64,
    pub delivered_bits: u64,
    pub goodput_bps: f64,
    pub line_rate_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub duration_s: f64,
    pub samples: u64,
    pub symbol_rate: f64,
    pub occupied_bw_hz: f64,
    pub links: Vec<LinkSummary>,
    pub aggregate_throughput_bps: f64,
    pub aggregate_line_rate_bps: f64,
}

pub struct Network {
    cfg: NetworkConfig,
    plan: BandPlan,
    report_plan: BandPlan,
    design: ChannelizerDesign,
    cal: NoiseCalibration,
    transmitter: Transmitter,
    nodes: Vec<NodeState>,
    realization: ChannelRealization,
    medium: Medium,
    receivers: Vec<RxChain>,
    tx_log: Vec<VecDeque<TxRecord>>,
    /// (from sample, node owning each band).
    owners: Vec<(u64, [usize; BAND_COUNT])>,
    links: Vec<LinkState>,
    clock: u64,
    swap: Option<PendingSwap>,
    events: Vec<NetworkEvent>,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network").field("clock", &self.clock).field("bands", &self.bands()).finish_non_exhaustive()
    }
}

fn owner_map(bands: &[usize; NODES]) -> [usize; BAND_COUNT] {
    let mut owners = [0; BAND_COUNT];
    for (node, &b) in bands.iter().enumerate() {
        owners[b] = node;
    }
    owners
}

impl Network {
    pub fn new(cfg: NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let plan = BandPlan::normalized();
        let report_plan = build_band_plan(cfg.report_symbol_rate)?;
        let design = ChannelizerDesign::new(&plan)?;
        let cal = NoiseCalibration::new(&plan, &design)?;
        let mut realization = make_realization(cfg.profile, cfg.snr_db, &cal, &mut RngStream::new(cfg.seed, StreamKind::Fading));
        for &(src, dst, snr) in &cfg.link_snr_db {
            realization.scale_path(src, dst, 10f64.powf((snr - cfg.snr_db[dst]) / 20.0))?;
        }
        let nodes = (0..NODES)
            .map(|n| {
                let c = cfg.nodes[n];
                NodeState {
                    node_id: n,
                    band: cfg.bands[n],
                    tx_config: TxConfig {
                        band_index: cfg.bands[n],
                        gain: c.gain,
                        modulation: c.modulation,
                        diversity_mode: c.diversity_mode,
                        samples_per_symbol: SAMPLES_PER_SYMBOL,
                    },
                    payload_source: c.payload_source,
                    seq_counters: [0; NODES],
                    paused: false,
                    frames_sent: 0,
                    next_frame_start: TX_WARMUP,
                    draining: false,
                    pending: Pending::default(),
                    generator: PayloadGenerator::new(cfg.payload_file.clone()),
                    buffer: [Vec::new(), Vec::new()],
                }
            })
            .collect();
        let mut receivers = Vec::with_capacity(LINK_COUNT);
        for node in 0..NODES {
            for band in (0..BAND_COUNT).filter(|&b| b != cfg.bands[node]) {
                receivers.push(RxChain {
                    node,
                    band,
                    receiver: BandReceiver::new(&plan, band, &design, cfg.receiver)?,
                });
            }
        }
        Ok(Network {
            medium: Medium::new(cfg.seed, cfg.parallel),
            owners: vec![(0, owner_map(&cfg.bands))],
            plan,
            report_plan,
            design,
            cal,
            transmitter: Transmitter::new(SAMPLES_PER_SYMBOL)?,
            nodes,
            realization,
            receivers,
            tx_log: vec![VecDeque::new(); NODES],
            links: vec![LinkState::default(); LINK_COUNT],
            clock: 0,
            swap: None,
            events: Vec::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &BandPlan {
        &self.plan
    }

    pub fn report_plan(&self) -> &BandPlan {
        &self.report_plan
    }

    pub fn realization(&self) -> &ChannelRealization {
        &self.realization
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    /// Next composite sample to be simulated.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn bands(&self) -> [usize; NODES] {
        std::array::from_fn(|n| self.nodes[n].band)
    }

    pub fn set_parallel(&mut self, parallel: bool) {
        self.cfg.parallel = parallel;
        self.medium.set_parallel(parallel);
    }

    /// Simulated seconds, in the reporting time base, at composite sample `n`.
    pub fn time_at(&self, n: u64) -> f64 {
        n as f64 / SAMPLES_PER_SYMBOL as f64 / self.cfg.report_symbol_rate
    }

    /// Composite samples in `seconds` of reporting-time.
    pub fn samples_for(&self, seconds: f64) -> u64 {
        (seconds * self.cfg.report_symbol_rate * SAMPLES_PER_SYMBOL as f64).round() as u64
    }

    /// Frame period in composite samples for a node's current settings.
    pub fn frame_period_samples(&self, node: usize) -> u64 {
        let c = &self.nodes[node].tx_config;
        (FrameSegments::new(self.cfg.payload_len, c.modulation).period_symbols() * SAMPLES_PER_SYMBOL) as u64
    }

    /// Commit time of a pending band swap.
    pub fn pending_swap_commit(&self) -> Option<u64> {
        self.swap.map(|s| s.commit)
    }

    pub fn take_events(&mut self) -> Vec<NetworkEvent> {
        std::mem::take(&mut self.events)
    }

    fn event(&mut self, kind: &str, detail: String) {
        self.events.push(NetworkEvent {
            timestamp: self.time_at(self.clock),
            sample_index: self.clock,
            kind: kind.to_string(),
            detail,
        });
    }

    fn check_node(node: usize) -> Result<()> {
        if node >= NODES {
            Err(Error::Rejected(format!("unknown node {node}")))
        } else {
            Ok(())
        }
    }

    /// Validate and queue an operator command. Rejected commands leave the
    /// network untouched.
    pub fn apply_control(&mut self, cmd: &Control) -> Result<()> {
        let reject = |m: String| Err(Error::Rejected(m));
        match *cmd {
            Control::SetGain { node, gain } => {
                Self::check_node(node)?;
                if !(gain > 0.0 && gain <= MAX_GAIN) {
                    return reject(format!("gain {gain} outside (0, {MAX_GAIN}]"));
                }
                self.nodes[node].pending.gain = Some(gain);
            }
            Control::SetModulation { node, modulation } => {
                Self::check_node(node)?;
                self.nodes[node].pending.modulation = Some(modulation);
            }
            Control::SetDiversity { node, mode } => {
                Self::check_node(node)?;
                self.nodes[node].pending.diversity_mode = Some(mode);
            }
            Control::SetPayloadSource { node, source } => {
                Self::check_node(node)?;
                if !self.nodes[node].generator.supports(source) {
                    return reject(format!("payload source {} is unavailable", source.name()));
                }
                self.nodes[node].pending.payload_source = Some(source);
            }
            Control::SetSnr { node, snr_db } => {
                if !(SNR_RANGE_DB.0..=SNR_RANGE_DB.1).contains(&snr_db) {
                    return reject(format!("SNR {snr_db} dB outside {SNR_RANGE_DB:?}"));
                }
                let targets: Vec<usize> = match node {
                    Some(n) => {
                        Self::check_node(n)?;
                        vec![n]
                    }
                    None => (0..NODES).collect(),
                };
                for n in targets {
                    self.realization.set_snr(n, snr_db, &self.cal)?;
                }
            }
            Control::Pause { node } | Control::Resume { node } => {
                let paused = matches!(cmd, Control::Pause { .. });
                let targets: Vec<usize> = match node {
                    Some(n) => {
                        Self::check_node(n)?;
                        vec![n]
                    }
                    None => (0..NODES).collect(),
                };
                for n in targets {
                    self.nodes[n].pending.paused = Some(paused);
                }
            }
            Control::AssignBand { node, band } => {
                Self::check_node(node)?;
                if band >= BAND_COUNT {
                    return reject(format!("unknown band {band}"));
                }
                if self.nodes[node].band != band {
                    let owner = self.owners.last().expect("owner history").1[band];
                    return reject(format!("band {band} is owned by node {owner}; use swap_bands"));
                }
            }
            Control::SwapBands { a, b } => {
                Self::check_node(a)?;
                Self::check_node(b)?;
                if a == b {
                    return reject(format!("cannot swap node {a} with itself"));
                }
                if let Some(s) = self.swap {
                    return reject(format!("swap of nodes {} and {} still pending", s.a, s.b));
                }
                let boundary = self.nodes[a].next_frame_start.max(self.nodes[b].next_frame_start).max(self.clock);
                let q = BLOCK_QUANTUM as u64;
                let commit = (boundary + SWAP_DRAIN).div_ceil(q) * q;
                self.nodes[a].draining = true;
                self.nodes[b].draining = true;
                self.swap = Some(PendingSwap { a, b, commit });
            }
        }
        Ok(())
    }

    fn commit_swap(&mut self, swap: PendingSwap) -> Result<()> {
        let (a, b) = (swap.a, swap.b);
        let (band_a, band_b) = (self.nodes[a].band, self.nodes[b].band);
        for (node, new_band) in [(a, band_b), (b, band_a)] {
            let n = &mut self.nodes[node];
            n.band = new_band;
            n.tx_config.band_index = new_band;
            n.draining = false;
            n.next_frame_start = swap.commit + SWAP_SETTLE;
        }
        // Each swapped node now listens on the band it left.
        for (node, old_band, new_band) in [(a, band_a, band_b), (b, band_b, band_a)] {
            let chain = self.receivers.iter_mut().find(|c| c.node == node && c.band == new_band).expect("receiver for foreign band");
            chain.band = old_band;
            chain.receiver = BandReceiver::new(&self.plan, old_band, &self.design, self.cfg.receiver)?;
        }
        let bands = self.bands();
        self.owners.push((swap.commit, owner_map(&bands)));
        self.swap = None;
        self.event("band_swap_committed", format!("node {a} -> band {band_b}, node {b} -> band {band_a}"));
        Ok(())
    }

    fn owner_at(&self, band: usize, t: u64) -> usize {
        self.owners.iter().rev().find(|(from, _)| *from <= t).unwrap_or(&self.owners[0]).1[band]
    }

    /// Fill each node's buffer with every frame starting before `end`.
    fn schedule_tx(&mut self, end: u64) -> Result<()> {
        let clock = self.clock;
        let payload_len = self.cfg.payload_len;
        for n in 0..NODES {
            loop {
                let node = &mut self.nodes[n];
                if node.draining || node.next_frame_start >= end {
                    break;
                }
                node.apply_pending();
                if node.paused {
                    node.next_frame_start = end;
                    break;
                }
                let dst = node.destinations()[(node.frames_sent % (NODES as u64 - 1)) as usize];
                let seq = node.seq_counters[dst];
                node.seq_counters[dst] = seq.wrapping_add(1);
                node.frames_sent += 1;
                let start = node.next_frame_start;
                let desc = FrameDescriptor::new(n as u8, dst as u8, seq, payload_len, node.tx_config.modulation, node.tx_config.diversity_mode);
                let payload = node.generator.next(node.payload_source, n as u8, dst as u8, seq, payload_len)?;
                let frame = encode_frame(&desc, &payload)?;
                let period = (frame.segments.period_symbols() * SAMPLES_PER_SYMBOL) as u64;
                let wave = self.transmitter.tx_frame(&frame, &node.tx_config, &self.plan, start)?;
                let offset = (start - clock) as usize;
                for (buf, block) in node.buffer.iter_mut().zip(&wave) {
                    if buf.len() < offset + block.len() {
                        buf.resize(offset + block.len(), C64::new(0.0, 0.0));
                    }
                    for (o, s) in buf[offset..].iter_mut().zip(&block.samples) {
                        *o += s;
                    }
                }
                node.next_frame_start = start + period;
                self.tx_log[n].push_back(TxRecord {
                    dst: dst as u8,
                    seq,
                    start,
                    end: start + period,
                    payload: Arc::new(payload),
                    received: [false; NODES],
                });
            }
        }
        Ok(())
    }

    /// Advance the network by one block quantum.
    pub fn step(&mut self) -> Result<()> {
        if let Some(s) = self.swap {
            if s.commit <= self.clock {
                self.commit_swap(s)?;
            }
        }
        let q = BLOCK_QUANTUM;
        let end = self.clock + q as u64;
        self.schedule_tx(end)?;
        let rate = self.plan.composite_rate;
        let clock = self.clock;
        let tx: [[SampleBlock; 2]; NODES] = std::array::from_fn(|n| {
            std::array::from_fn(|j| {
                let buf = &mut self.nodes[n].buffer[j];
                let take = buf.len().min(q);
                let mut samples: Vec<C64> = buf.drain(..take).collect();
                samples.resize(q, C64::new(0.0, 0.0));
                SampleBlock::new(samples, rate, clock)
            })
        });
        let rx = self.medium.propagate(&tx, &self.realization)?;

        let tx_log = &self.tx_log;
        let reference = |d: &FrameDescriptor| -> Option<Vec<u8>> {
            tx_log
                .get(d.src_node as usize)?
                .iter()
                .find(|r| r.dst == d.dst_node && r.seq == d.seq && r.payload.len() == d.payload_len as usize)
                .map(|r| r.payload.to_vec())
        };
        let work = |chain: &mut RxChain| -> Result<Vec<FrameReport>> {
            let ant = &rx[chain.node];
            chain.receiver.push([&ant[0], &ant[1]], &reference)
        };
        let reports: Vec<Result<Vec<FrameReport>>> = if self.cfg.parallel {
            self.receivers.par_iter_mut().map(work).collect()
        } else {
            self.receivers.iter_mut().map(work).collect()
        };
        let tagged: Vec<(usize, usize, Vec<FrameReport>)> = reports
            .into_iter()
            .zip(&self.receivers)
            .map(|(r, c)| r.map(|r| (c.node, c.band, r)))
            .collect::<Result<_>>()?;
        for (node, band, reports) in tagged {
            for r in reports {
                self.account(node, band, r);
            }
        }
        self.clock = end;
        self.expire();
        Ok(())
    }

    fn account(&mut self, dst: usize, band: usize, r: FrameReport) {
        let owner = self.owner_at(band, r.frame_start);
        let src = r
            .descriptor
            .filter(|_| r.header_ok())
            .map(|d| d.src_node as usize)
            .filter(|&s| s < NODES && s != dst)
            .unwrap_or(owner);
        if src == dst {
            return;
        }
        let fs = r.frame_start;
        let log = &mut self.tx_log[src];
        let by_time = log.iter().position(|t| t.start <= fs + MATCH_EARLY && fs <= t.start + MATCH_LATE);
        let by_id = r.descriptor.filter(|_| r.header_ok()).and_then(|d| log.iter().position(|t| t.dst == d.dst_node && t.seq == d.seq));
        let record = by_id.or(by_time).map(|i| &mut log[i]);

        let mut m = LinkMetrics {
            evm: r.evm,
            evm_pre_eq: r.evm_pre_eq,
            evm_post_eq: r.evm_post_eq,
            sinr: r.sinr,
            frames_detected: 1,
            ..Default::default()
        };
        if let Some(rec) = record {
            rec.received[dst] = true;
            if r.header_ok() {
                let sent = &rec.payload;
                let common = sent.len().min(r.payload.len());
                let errors: u64 = sent[..common].iter().zip(&r.payload[..common]).map(|(a, b)| (a ^ b).count_ones() as u64).sum();
                m.payload_bits = 8 * sent.len() as u64;
                m.bit_errors = errors + 8 * (sent.len().abs_diff(r.payload.len())) as u64;
            }
        }
        if r.header_ok() && r.payload_ok() {
            m.frames_crc_ok = 1;
            m.delivered_bits = 8 * r.payload.len() as u64;
        }
        let link = &mut self.links[link_index(src, dst)];
        link.total.merge(&m);
        link.period.merge(&m);
        let room = CONSTELLATION_POINTS.saturating_sub(link.constellation.len());
        link.constellation.extend(r.constellation.iter().take(room));
    }

    /// Count frames nobody decoded in time as missed and drop old records.
    fn expire(&mut self) {
        for src in 0..NODES {
            while let Some(rec) = self.tx_log[src].front() {
                if rec.end + MISS_TIMEOUT > self.clock {
                    break;
                }
                let rec = self.tx_log[src].pop_front().expect("front exists");
                for dst in (0..NODES).filter(|&d| d != src && !rec.received[d]) {
                    let link = &mut self.links[link_index(src, dst)];
                    link.total.frames_missed += 1;
                    link.period.frames_missed += 1;
                }
            }
        }
    }

    /// Advance until the clock reaches at least `sample`.
    pub fn run_until(&mut self, sample: u64) -> Result<()> {
        while self.clock < sample {
            self.step()?;
        }
        Ok(())
    }

    fn line_rate(&self, src: usize) -> f64 {
        let n = &self.nodes[src];
        if n.paused || n.draining {
            0.0
        } else {
            self.report_plan.line_rate(n.tx_config.modulation.bits_per_symbol())
        }
    }

    /// Telemetry for the period since the previous snapshot; resets the
    /// period accumulators.
    pub fn snapshot(&mut self) -> NetworkSnapshot {
        let t = self.time_at(self.clock);
        let links: Vec<LinkSnapshot> = link_pairs()
            .map(|(src, dst)| {
                let l = &self.links[link_index(src, dst)];
                let p = &l.period;
                LinkSnapshot {
                    src,
                    dst,
                    band: self.nodes[src].band,
                    evm_pct: p.evm_rms_pct(),
                    sinr_db: p.sinr_db(),
                    period_fer: (p.frames_detected + p.frames_missed > 0).then(|| p.fer()),
                    ber: l.total.ber(),
                    fer: l.total.fer(),
                    frames_detected: l.total.frames_detected,
                    frames_crc_ok: l.total.frames_crc_ok,
                    frames_missed: l.total.frames_missed,
                    payload_bits: l.total.payload_bits,
                    bit_errors: l.total.bit_errors,
                    delivered_bits: l.total.delivered_bits,
                    goodput_bps: rate(l.total.delivered_bits, t),
                }
            })
            .collect();
        let delivered: u64 = self.links.iter().map(|l| l.total.delivered_bits).sum();
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let req = n.requested();
                NodeSnapshot {
                    node: n.node_id,
                    band: n.band,
                    gain: req.gain,
                    modulation: req.modulation,
                    diversity_mode: req.diversity_mode,
                    payload_source: req.payload_source,
                    paused: n.pending.paused.unwrap_or(n.paused),
                    snr_db: self.realization.snr_db[n.node_id],
                    pending: !n.pending.is_empty() || n.draining,
                }
            })
            .collect();
        let line: f64 = link_pairs().map(|(s, _)| self.line_rate(s)).sum();
        for l in &mut self.links {
            l.period = LinkMetrics::default();
        }
        NetworkSnapshot {
            timestamp: t,
            sample_index: self.clock,
            links,
            aggregate_throughput_bps: rate(delivered, t),
            aggregate_line_rate_bps: line,
            nodes,
        }
    }

    /// Constellation points gathered this period; clears them.
    pub fn take_constellation(&mut self) -> ConstellationSnapshot {
        let timestamp = self.time_at(self.clock);
        let links = link_pairs()
            .map(|(src, dst)| ConstellationLink {
                src,
                dst,
                points: std::mem::take(&mut self.links[link_index(src, dst)].constellation).iter().map(|c| [c.re, c.im]).collect(),
            })
            .collect();
        ConstellationSnapshot { timestamp, links }
    }

    pub fn link_metrics(&self, src: usize, dst: usize) -> &LinkMetrics {
        &self.links[link_index(src, dst)].total
    }

    pub fn summary(&self) -> NetworkSummary {
        let t = self.time_at(self.clock);
        let links: Vec<LinkSummary> = link_pairs()
            .map(|(src, dst)| {
                let m = &self.links[link_index(src, dst)].total;
                LinkSummary {
                    src,
                    dst,
                    evm_pct: m.evm_rms_pct(),
                    sinr_db: m.sinr_db(),
                    ber: m.ber(),
                    fer: m.fer(),
                    frames_detected: m.frames_detected,
                    frames_crc_ok: m.frames_crc_ok,
                    frames_missed: m.frames_missed,
                    payload_bits: m.payload_bits,
                    bit_errors: m.bit_errors,
                    delivered_bits: m.delivered_bits,
                    goodput_bps: rate(m.delivered_bits, t),
                    line_rate_bps: self.report_plan.line_rate(self.nodes[src].tx_config.modulation.bits_per_symbol()),
                }
            })
            .collect();
        NetworkSummary {
            duration_s: t,
            samples: self.clock,
            symbol_rate: self.report_plan.symbol_rate,
            occupied_bw_hz: self.report_plan.occupied_bw,
            aggregate_throughput_bps: rate(links.iter().map(|l| l.delivered_bits).sum(), t),
            aggregate_line_rate_bps: links.iter().map(|l| l.line_rate_bps).sum(),
            links,
        }
    }
}

fn rate(bits: u64, seconds: f64) -> f64 {
    if seconds > 0.0 {
        bits as f64 / seconds
    } else {
        0.0
    }
}


/// Run a fresh network for `duration` reporting-seconds, snapshotting every
/// `telemetry_period` (rounded to whole block quanta).
pub fn step_network(cfg: NetworkConfig, duration: f64, telemetry_period: f64) -> Result<(Vec<NetworkSnapshot>, NetworkSummary)> {
    if !(duration > 0.0) || !(telemetry_period > 0.0) {
        return Err(param("duration and telemetry period must be positive"));
    }
    let mut net = Network::new(cfg)?;
    let end = net.samples_for(duration);
    let q = BLOCK_QUANTUM as u64;
    let period = (net.samples_for(telemetry_period).div_ceil(q)).max(1) * q;
    let mut snapshots = Vec::new();
    let mut next = period;
    while net.clock() < end {
        net.step()?;
        if net.clock() >= next {
            snapshots.push(net.snapshot());
            next += period;
        }
    }
    Ok((snapshots, net.summary()))
}
