//! Scenario files: TOML with documented defaults for every omitted field.
//!
//! Simulated time is counted in seconds of the reporting time base: symbol
//! periods when `real_rate_reporting` is false, real seconds at
//! `symbol_rate` when it is true.

use crate::error::{Result, RuntimeError};
use rfmesh::channel::{ChannelProfile, NODES};
use rfmesh::framing::{DiversityMode, FrameSegments, MAX_PAYLOAD};
use rfmesh::mesh::band::BAND_COUNT;
use rfmesh::mesh::control::{MAX_GAIN, SNR_RANGE_DB};
use rfmesh::mesh::network::DEFAULT_PAYLOAD_LEN;
use rfmesh::mesh::{NetworkConfig, NodeConfig, PayloadSource};
use rfmesh::modem::{Modulation, ReceiverConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Symbol rate of the real system, used for real-rate reporting.
pub const REAL_SYMBOL_RATE: f64 = 24.96e6;
/// Default run length: 30 default frame periods, enough for 1e6 payload
/// bits on every link.
pub const DEFAULT_DURATION_SYMBOLS: f64 = 30.0 * 11072.0;
/// Default telemetry period: 16 block quanta.
pub const DEFAULT_TELEMETRY_SYMBOLS: f64 = 16384.0;
/// Default serve pacing, in telemetry periods per wall-clock second.
pub const DEFAULT_PERIODS_PER_SECOND: f64 = 10.0;

fn default_symbol_rate() -> f64 {
    REAL_SYMBOL_RATE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Symbols per second used when `real_rate_reporting` is set.
    #[serde(default = "default_symbol_rate")]
    pub symbol_rate: f64,
    #[serde(default)]
    pub real_rate_reporting: bool,
    /// Simulated seconds to run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    /// Simulated seconds between snapshots, rounded up to whole block quanta.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub telemetry_period: Option<f64>,
    /// Serve mode: simulated seconds per wall-clock second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pace: Option<f64>,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub frame: FrameSection,
    #[serde(default)]
    pub payload: PayloadSection,
    #[serde(default)]
    pub receiver: ReceiverSection,
    #[serde(default, rename = "node", skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<NodeOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub profile: ChannelProfile,
    /// In-band receive SNR of every node.
    pub snr_db: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkSnr>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            profile: ChannelProfile::AwgnOnly,
            snr_db: 28.0,
            links: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSnr {
    pub src: usize,
    pub dst: usize,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameSection {
    pub payload_len: usize,
    pub modulation: Modulation,
    pub diversity_mode: DiversityMode,
    pub gain: f64,
}

impl Default for FrameSection {
    fn default() -> Self {
        FrameSection {
            payload_len: DEFAULT_PAYLOAD_LEN,
            modulation: Modulation::Qam16,
            diversity_mode: DiversityMode::Alamouti,
            gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PayloadSection {
    pub source: PayloadSource,
    /// Bytes sent cyclically by nodes using the FILE source.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl Default for PayloadSection {
    fn default() -> Self {
        PayloadSection {
            source: PayloadSource::Prbs23,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverSection {
    pub alpha: f64,
    pub equalizer_taps: usize,
    pub equalizer_mu: f64,
}

impl Default for ReceiverSection {
    fn default() -> Self {
        let r = ReceiverConfig::default();
        ReceiverSection {
            alpha: r.detector.alpha,
            equalizer_taps: r.equalizer.taps,
            equalizer_mu: r.equalizer.mu,
        }
    }
}

/// Per-node settings overriding the global ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeOverride {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<Modulation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity_mode: Option<DiversityMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_source: Option<PayloadSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub es_n0_db: Vec<f64>,
    pub bits_per_point: u64,
    pub modulation: Modulation,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            es_n0_db: vec![8.0, 10.0, 12.0, 14.0, 16.0],
            bits_per_point: 1_000_000,
            modulation: Modulation::Qam16,
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| RuntimeError::ScenarioIo {
        path: path.to_path_buf(),
        source,
    })?;
    let mut s = parse_scenario(&text)?;
    // Relative payload files are resolved against the scenario's directory.
    if let (Some(file), Some(dir)) = (s.payload.file.as_mut(), path.parent()) {
        if file.is_relative() {
            *file = dir.join(&*file);
        }
    }
    Ok(s)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| RuntimeError::ScenarioParse {
        field: String::from("."),
        message: e.to_string(),
    })?;
    let s: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| RuntimeError::ScenarioParse {
        field: e.path().to_string(),
        message: e.inner().message().to_string(),
    })?;
    s.validate()?;
    Ok(s)
}

pub fn to_toml(s: &ScenarioConfig) -> String {
    toml::to_string(s).expect("scenario serializes")
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(RuntimeError::invalid(field, format!("must be positive, got {v}")))
    }
}

fn snr(field: &str, v: f64) -> Result<()> {
    if (SNR_RANGE_DB.0..=SNR_RANGE_DB.1).contains(&v) {
        Ok(())
    } else {
        Err(RuntimeError::invalid(field, format!("{v} dB outside {SNR_RANGE_DB:?}")))
    }
}

fn gain(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= MAX_GAIN {
        Ok(())
    } else {
        Err(RuntimeError::invalid(field, format!("{v} outside (0, {MAX_GAIN}]")))
    }
}

impl ScenarioConfig {
    /// The default scenario with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        parse_scenario(&format!("seed = {seed}")).expect("defaults are valid")
    }

    pub fn validate(&self) -> Result<()> {
        positive("symbol_rate", self.symbol_rate)?;
        for (field, v) in [("duration", self.duration), ("telemetry_period", self.telemetry_period), ("pace", self.pace)] {
            if let Some(v) = v {
                positive(field, v)?;
            }
        }
        snr("channel.snr_db", self.channel.snr_db)?;
        for (i, l) in self.channel.links.iter().enumerate() {
            if l.src >= NODES || l.dst >= NODES || l.src == l.dst {
                return Err(RuntimeError::invalid(format!("channel.links[{i}]"), format!("no link {} -> {}", l.src, l.dst)));
            }
            snr(&format!("channel.links[{i}].snr_db"), l.snr_db)?;
        }
        if self.frame.payload_len > MAX_PAYLOAD {
            return Err(RuntimeError::invalid("frame.payload_len", format!("{} exceeds {MAX_PAYLOAD}", self.frame.payload_len)));
        }
        gain("frame.gain", self.frame.gain)?;
        let r = &self.receiver;
        if !(r.alpha > 1.0 && r.alpha.is_finite()) {
            return Err(RuntimeError::invalid("receiver.alpha", format!("must exceed 1, got {}", r.alpha)));
        }
        if r.equalizer_taps.is_multiple_of(2) {
            return Err(RuntimeError::invalid("receiver.equalizer_taps", "must be odd"));
        }
        if !(r.equalizer_mu > 0.0 && r.equalizer_mu < 2.0) {
            return Err(RuntimeError::invalid("receiver.equalizer_mu", format!("{} outside (0, 2)", r.equalizer_mu)));
        }
        let mut seen = [false; NODES];
        for (i, n) in self.nodes.iter().enumerate() {
            let f = |name: &str| format!("node[{i}].{name}");
            if n.id >= NODES || std::mem::replace(&mut seen[n.id], true) {
                return Err(RuntimeError::invalid(f("id"), format!("{} is out of range or repeated", n.id)));
            }
            if n.band.is_some_and(|b| b >= BAND_COUNT) {
                return Err(RuntimeError::invalid(f("band"), "out of range"));
            }
            if let Some(g) = n.gain {
                gain(&f("gain"), g)?;
            }
            if let Some(s) = n.snr_db {
                snr(&f("snr_db"), s)?;
            }
        }
        let bands = self.bands();
        let mut taken = [false; BAND_COUNT];
        if bands.iter().any(|&b| std::mem::replace(&mut taken[b], true)) {
            return Err(RuntimeError::invalid("node.band", format!("assignment {bands:?} puts two nodes on one band")));
        }
        let uses_file = self.payload.source == PayloadSource::File || self.nodes.iter().any(|n| n.payload_source == Some(PayloadSource::File));
        if uses_file && self.payload.file.is_none() {
            return Err(RuntimeError::invalid("payload.file", "required by the FILE payload source"));
        }
        if let Some(sw) = &self.sweep {
            if sw.es_n0_db.is_empty() || sw.es_n0_db.iter().any(|e| !e.is_finite()) {
                return Err(RuntimeError::invalid("sweep.es_n0_db", "needs at least one finite value"));
            }
            if sw.bits_per_point == 0 {
                return Err(RuntimeError::invalid("sweep.bits_per_point", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn bands(&self) -> [usize; NODES] {
        let mut bands: [usize; NODES] = std::array::from_fn(|n| n);
        for n in &self.nodes {
            if let Some(b) = n.band {
                bands[n.id] = b;
            }
        }
        bands
    }

    /// Symbol rate of the reporting time base.
    pub fn report_symbol_rate(&self) -> f64 {
        if self.real_rate_reporting {
            self.symbol_rate
        } else {
            1.0
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.duration.unwrap_or(DEFAULT_DURATION_SYMBOLS / self.report_symbol_rate())
    }

    pub fn telemetry_period_s(&self) -> f64 {
        self.telemetry_period.unwrap_or(DEFAULT_TELEMETRY_SYMBOLS / self.report_symbol_rate())
    }

    pub fn pace(&self) -> f64 {
        self.pace.unwrap_or(DEFAULT_PERIODS_PER_SECOND * self.telemetry_period_s())
    }

    /// Frame period of the global frame settings, in simulated seconds.
    pub fn frame_period_s(&self) -> f64 {
        FrameSegments::new(self.frame.payload_len, self.frame.modulation).period_symbols() as f64 / self.report_symbol_rate()
    }

    pub fn to_network_config(&self, parallel: bool) -> Result<NetworkConfig> {
        let payload_file = match &self.payload.file {
            Some(p) => Some(Arc::new(std::fs::read(p).map_err(|e| RuntimeError::invalid("payload.file", format!("{}: {e}", p.display())))?)),
            None => None,
        };
        let base = NodeConfig {
            gain: self.frame.gain,
            modulation: self.frame.modulation,
            diversity_mode: self.frame.diversity_mode,
            payload_source: self.payload.source,
        };
        let mut nodes = [base; NODES];
        let mut snr_db = [self.channel.snr_db; NODES];
        for n in &self.nodes {
            let c = &mut nodes[n.id];
            c.gain = n.gain.unwrap_or(c.gain);
            c.modulation = n.modulation.unwrap_or(c.modulation);
            c.diversity_mode = n.diversity_mode.unwrap_or(c.diversity_mode);
            c.payload_source = n.payload_source.unwrap_or(c.payload_source);
            snr_db[n.id] = n.snr_db.unwrap_or(snr_db[n.id]);
        }
        let mut receiver = ReceiverConfig::default();
        receiver.detector.alpha = self.receiver.alpha;
        receiver.equalizer.taps = self.receiver.equalizer_taps;
        receiver.equalizer.mu = self.receiver.equalizer_mu;
        let cfg = NetworkConfig {
            profile: self.channel.profile,
            snr_db,
            link_snr_db: self.channel.links.iter().map(|l| (l.src, l.dst, l.snr_db)).collect(),
            payload_len: self.frame.payload_len,
            nodes,
            bands: self.bands(),
            seed: self.seed,
            parallel,
            receiver,
            payload_file,
            report_symbol_rate: self.report_symbol_rate(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
