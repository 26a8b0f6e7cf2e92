//! Batch runs and BER sweeps writing flat result files.

use crate::error::{Result, RuntimeError};
use crate::protocol::Message;
use crate::scenario::{ScenarioConfig, SweepSection};
use rfmesh::mesh::network::{NetworkEvent, BLOCK_QUANTUM};
use rfmesh::mesh::{Network, NetworkSummary};
use rfmesh::modem::montecarlo::{ber_sweep, BerPoint};
use serde::Serialize;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::thread::JoinHandle;

pub const SNAPSHOT_LOG: &str = "snapshots.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BER_TABLE: &str = "ber_table.txt";
/// Log records buffered between the simulation and the writer thread. When
/// the buffer is full the record is dropped and counted; the count is logged
/// as a `log_dropped` event once space frees up.
pub const LOG_BUFFER: usize = 1024;

/// Contents of `summary.json`. Holds no wall-clock values, so equal
/// scenarios give byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub profile: String,
    #[serde(flatten)]
    pub network: NetworkSummary,
}

/// Line-delimited log fed by a writer thread. Each record goes out in one
/// `write_all`, so an abnormal exit never leaves a torn line.
struct LogWriter {
    path: PathBuf,
    tx: Option<SyncSender<String>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
    dropped: u64,
}

impl LogWriter {
    fn create(path: PathBuf) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| RuntimeError::io(&path, e))?;
        let (tx, rx) = sync_channel(LOG_BUFFER);
        let thread = std::thread::spawn(move || write_lines(file, rx));
        Ok(LogWriter {
            path,
            tx: Some(tx),
            thread: Some(thread),
            dropped: 0,
        })
    }

    fn push(&mut self, line: String, timestamp: f64) -> Result<()> {
        let tx = self.tx.as_ref().expect("log open");
        if self.dropped > 0 {
            let note = Message::Event {
                timestamp,
                payload: NetworkEvent {
                    timestamp,
                    sample_index: 0,
                    kind: "log_dropped".into(),
                    detail: format!("{} records dropped", self.dropped),
                },
            };
            match tx.try_send(note.to_line()) {
                Ok(()) => self.dropped = 0,
                Err(TrySendError::Full(_)) => {}
                Err(TrySendError::Disconnected(_)) => return Err(self.fail()),
            }
        }
        match tx.try_send(line) {
            Ok(()) => Ok(()),
            Err(TrySendError::Full(_)) => {
                self.dropped += 1;
                Ok(())
            }
            Err(TrySendError::Disconnected(_)) => Err(self.fail()),
        }
    }

    /// Join the writer and return the error that stopped it.
    fn fail(&mut self) -> RuntimeError {
        self.tx = None;
        match self.thread.take().map(|t| t.join()) {
            Some(Ok(Err(e))) => RuntimeError::io(&self.path, e),
            _ => RuntimeError::io(&self.path, std::io::Error::other("log writer stopped")),
        }
    }

    fn finish(mut self) -> Result<()> {
        self.tx = None;
        match self.thread.take().expect("log open").join() {
            Ok(Ok(())) => Ok(()),
            Ok(Err(e)) => Err(RuntimeError::io(&self.path, e)),
            Err(_) => Err(RuntimeError::io(&self.path, std::io::Error::other("log writer panicked"))),
        }
    }
}

fn write_lines(mut file: File, rx: Receiver<String>) -> std::io::Result<()> {
    for mut line in rx {
        line.push('\n');
        file.write_all(line.as_bytes())?;
    }
    file.sync_data()
}

/// Append a marker record so readers can tell the log stopped early.
fn mark_partial(path: &Path, timestamp: f64, reason: &str) {
    let marker = Message::Event {
        timestamp,
        payload: NetworkEvent {
            timestamp,
            sample_index: 0,
            kind: "partial_log".into(),
            detail: reason.to_string(),
        },
    };
    if let Ok(mut f) = OpenOptions::new().append(true).open(path) {
        let _ = f.write_all(format!("{}\n", marker.to_line()).as_bytes());
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| RuntimeError::io(path, e))
}

pub fn summary_json(s: &RunSummary) -> String {
    let mut text = serde_json::to_string_pretty(s).expect("summary serializes");
    text.push('\n');
    text
}

/// Run the scenario for its duration and write the snapshot log, the
/// summary and, when the scenario has a `[sweep]` section, the BER table.
pub fn run(scenario: &ScenarioConfig, out_dir: &Path, parallel: bool) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| RuntimeError::io(out_dir, e))?;
    let log_path = out_dir.join(SNAPSHOT_LOG);
    let mut log = LogWriter::create(log_path.clone())?;
    let mut net = Network::new(scenario.to_network_config(parallel)?)?;
    let outcome = simulate(scenario, &mut net, &mut log);
    let closed = log.finish();
    if let Some(e) = outcome.as_ref().err().or(closed.as_ref().err()) {
        mark_partial(&log_path, net.time_at(net.clock()), &e.to_string());
    }
    outcome?;
    closed?;
    let summary = RunSummary {
        seed: scenario.seed,
        profile: scenario.channel.profile.name().to_string(),
        network: net.summary(),
    };
    write_file(&out_dir.join(SUMMARY_FILE), &summary_json(&summary))?;
    if let Some(sweep) = &scenario.sweep {
        write_ber_table(&out_dir.join(BER_TABLE), &sweep_points(sweep, scenario.seed))?;
    }
    Ok(summary)
}

fn simulate(scenario: &ScenarioConfig, net: &mut Network, log: &mut LogWriter) -> Result<()> {
    let end = net.samples_for(scenario.duration_s());
    let q = BLOCK_QUANTUM as u64;
    let period = net.samples_for(scenario.telemetry_period_s()).div_ceil(q).max(1) * q;
    let mut next = period;
    while net.clock() < end {
        net.step()?;
        let t = net.time_at(net.clock());
        for e in net.take_events() {
            log.push(Message::event(e).to_line(), t)?;
        }
        if net.clock() >= next || net.clock() >= end {
            log.push(Message::snapshot(net.snapshot()).to_line(), t)?;
            next = net.clock() + period;
        }
    }
    Ok(())
}

pub fn sweep_points(sweep: &SweepSection, seed: u64) -> Vec<BerPoint> {
    ber_sweep(sweep.modulation, &sweep.es_n0_db, sweep.bits_per_point, seed)
}

pub fn format_ber_table(points: &[BerPoint]) -> String {
    let mut text = String::from("es_n0_db ber bits\n");
    for p in points {
        text.push_str(&format!("{:.2} {:.6e} {}\n", p.es_n0_db, p.ber, p.bits));
    }
    text
}

pub fn write_ber_table(path: &Path, points: &[BerPoint]) -> Result<()> {
    write_file(path, &format_ber_table(points))
}

/// Run only the BER sweep, writing the table into `out_dir`.
pub fn sweep(scenario: &ScenarioConfig, out_dir: &Path) -> Result<Vec<BerPoint>> {
    std::fs::create_dir_all(out_dir).map_err(|e| RuntimeError::io(out_dir, e))?;
    let points = sweep_points(&scenario.sweep.clone().unwrap_or_default(), scenario.seed);
    write_ber_table(&out_dir.join(BER_TABLE), &points)?;
    Ok(points)
}
