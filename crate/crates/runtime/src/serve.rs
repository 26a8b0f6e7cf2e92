//! Live service: a paced simulation thread publishing telemetry to any number
//! of socket clients and applying their control commands.
//!
//! The simulation never waits on clients. Telemetry goes through a bounded
//! broadcast channel; a client that falls more than its capacity behind loses
//! the oldest records and is told how many in a `telemetry_dropped` event.
//! Commands are funneled through one ordered queue, applied at block
//! boundaries and acknowledged at the next snapshot, naming the last command
//! of the period with the same type and target.

use crate::error::{Result, RuntimeError};
use crate::protocol::{parse_command, Command, Message};
use crate::scenario::ScenarioConfig;
use axum::extract::ws::{self, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::stream::{SplitSink, SplitStream};
use futures::{SinkExt, StreamExt};
use rfmesh::mesh::network::{NetworkEvent, BLOCK_QUANTUM};
use rfmesh::mesh::{Network, NetworkSummary};
use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc as tmpsc};
use tokio::task::JoinHandle;

/// Telemetry records a client may fall behind before it starts losing them.
pub const TELEMETRY_CAPACITY: usize = 64;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub listen: SocketAddr,
    /// Address of the WebSocket bridge (`/ws`), one record per text message.
    pub ws_listen: Option<SocketAddr>,
    pub parallel: bool,
    pub telemetry_capacity: usize,
}

impl ServeOptions {
    pub fn new(listen: SocketAddr) -> Self {
        ServeOptions {
            listen,
            ws_listen: None,
            parallel: true,
            telemetry_capacity: TELEMETRY_CAPACITY,
        }
    }
}

/// A serialized telemetry record with the simulation time it was sent at.
#[derive(Debug)]
struct Outbound {
    timestamp: f64,
    sample_index: u64,
    line: String,
}

/// A command on its way to the simulation. Dropping it unanswered, for
/// instance because the simulation has stopped, sends a nack, so every
/// command gets exactly one reply.
struct Incoming {
    command: Command,
    reply: tmpsc::UnboundedSender<String>,
    answered: bool,
}

impl Incoming {
    fn answer(mut self, m: Message) {
        self.answered = true;
        let _ = self.reply.send(m.to_line());
    }
}

impl Drop for Incoming {
    fn drop(&mut self) {
        if !self.answered {
            let nack = Message::Nack {
                command_id: self.command.command_id.clone(),
                reason: "simulation stopped".into(),
            };
            let _ = self.reply.send(nack.to_line());
        }
    }
}

#[derive(Clone)]
struct Hub {
    telemetry: broadcast::Sender<Arc<Outbound>>,
    control: mpsc::Sender<Incoming>,
}

pub struct Server {
    tcp_addr: SocketAddr,
    ws_addr: Option<SocketAddr>,
    stop: Arc<AtomicBool>,
    sim: Option<std::thread::JoinHandle<Result<NetworkSummary>>>,
    tasks: Vec<JoinHandle<()>>,
}

/// Bind the listeners and start the simulation. Runs until the scenario's
/// `duration`, or indefinitely when it has none.
pub async fn start(scenario: &ScenarioConfig, opts: ServeOptions) -> Result<Server> {
    let net = Network::new(scenario.to_network_config(opts.parallel)?)?;
    let tcp = TcpListener::bind(opts.listen)
        .await
        .map_err(|e| RuntimeError::Serve(format!("bind {}: {e}", opts.listen)))?;
    let tcp_addr = tcp.local_addr().map_err(|e| RuntimeError::Serve(e.to_string()))?;
    let ws = match opts.ws_listen {
        Some(addr) => Some(
            TcpListener::bind(addr)
                .await
                .map_err(|e| RuntimeError::Serve(format!("bind {addr}: {e}")))?,
        ),
        None => None,
    };
    let ws_addr = ws.as_ref().and_then(|l| l.local_addr().ok());

    let (telemetry, _) = broadcast::channel(opts.telemetry_capacity.max(1));
    let (control, control_rx) = mpsc::channel();
    let hub = Hub { telemetry, control };
    let stop = Arc::new(AtomicBool::new(false));

    let q = BLOCK_QUANTUM as u64;
    let pacing = Pacing {
        period: net.samples_for(scenario.telemetry_period_s()).div_ceil(q).max(1) * q,
        end: scenario.duration.map(|d| net.samples_for(d)),
        pace: scenario.pace(),
    };
    let sim = {
        let (tx, stop) = (hub.telemetry.clone(), stop.clone());
        std::thread::Builder::new()
            .name("rfmesh-sim".into())
            .spawn(move || simulate(net, control_rx, tx, stop, pacing))
            .map_err(|e| RuntimeError::Serve(e.to_string()))?
    };

    let mut tasks = vec![tokio::spawn(accept_tcp(tcp, hub.clone()))];
    if let Some(listener) = ws {
        let app = Router::new().route("/ws", get(ws_upgrade)).with_state(hub.clone());
        tasks.push(tokio::spawn(async move {
            let _ = axum::serve(listener, app).await;
        }));
    }
    Ok(Server {
        tcp_addr,
        ws_addr,
        stop,
        sim: Some(sim),
        tasks,
    })
}

impl Server {
    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    /// Wait for the simulation to finish and close the listeners.
    pub async fn wait(mut self) -> Result<NetworkSummary> {
        let sim = self.sim.take().expect("simulation running");
        let out = tokio::task::spawn_blocking(move || sim.join())
            .await
            .map_err(|e| RuntimeError::Serve(e.to_string()))?
            .map_err(|_| RuntimeError::Serve("simulation thread panicked".into()))?;
        for t in &self.tasks {
            t.abort();
        }
        out
    }

    pub async fn shutdown(self) -> Result<NetworkSummary> {
        self.stop.store(true, Ordering::Relaxed);
        self.wait().await
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in &self.tasks {
            t.abort();
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pacing {
    period: u64,
    end: Option<u64>,
    /// Simulated seconds per wall-clock second.
    pace: f64,
}

fn simulate(
    mut net: Network,
    control: mpsc::Receiver<Incoming>,
    telemetry: broadcast::Sender<Arc<Outbound>>,
    stop: Arc<AtomicBool>,
    pacing: Pacing,
) -> Result<NetworkSummary> {
    let publish = |net: &Network, m: Message| {
        let _ = telemetry.send(Arc::new(Outbound {
            timestamp: net.time_at(net.clock()),
            sample_index: net.clock(),
            line: m.to_line(),
        }));
    };
    let started = Instant::now();
    let mut next = pacing.period;
    let mut applied: Vec<Incoming> = Vec::new();
    while !stop.load(Ordering::Relaxed) && pacing.end.is_none_or(|e| net.clock() < e) {
        for inc in control.try_iter() {
            match net.apply_control(&inc.command.control) {
                Ok(()) => applied.push(inc),
                Err(e) => {
                    let reason = e.to_string();
                    let command_id = inc.command.command_id.clone();
                    inc.answer(Message::Nack { command_id, reason });
                }
            }
        }
        net.step()?;
        for e in net.take_events() {
            publish(&net, Message::event(e));
        }
        if net.clock() >= next {
            acknowledge(&mut applied);
            let snapshot = Message::snapshot(net.snapshot());
            publish(&net, snapshot);
            let constellation = Message::constellation(net.take_constellation());
            publish(&net, constellation);
            next += pacing.period;
        }
        let due = started + Duration::from_secs_f64(net.time_at(net.clock()) / pacing.pace);
        while !stop.load(Ordering::Relaxed) {
            let now = Instant::now();
            if now >= due {
                break;
            }
            std::thread::sleep((due - now).min(Duration::from_millis(50)));
        }
    }
    acknowledge(&mut applied);
    Ok(net.summary())
}

/// Ack every applied command, naming the last one with the same key.
fn acknowledge(applied: &mut Vec<Incoming>) {
    let batch = std::mem::take(applied);
    let winners: Vec<_> = batch
        .iter()
        .map(|a| batch.iter().rev().find(|b| b.command.key == a.command.key).expect("self matches").command.command_id.clone())
        .collect();
    for (inc, winning_command_id) in batch.into_iter().zip(winners) {
        let command_id = inc.command.command_id.clone();
        inc.answer(Message::Ack {
            command_id,
            winning_command_id,
        });
    }
}

trait LineSource {
    /// Next record, or `None` once the peer has gone.
    fn next_line(&mut self) -> impl Future<Output = Option<String>> + Send;
}

trait LineSink {
    fn send_line(&mut self, line: &str) -> impl Future<Output = std::io::Result<()>> + Send;
}

struct TcpLines(BufReader<OwnedReadHalf>);

impl LineSource for TcpLines {
    async fn next_line(&mut self) -> Option<String> {
        let mut buf = Vec::new();
        match self.0.read_until(b'\n', &mut buf).await {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(String::from_utf8_lossy(&buf).into_owned()),
        }
    }
}

impl LineSink for OwnedWriteHalf {
    async fn send_line(&mut self, line: &str) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.write_all(&buf).await
    }
}

impl LineSource for SplitStream<WebSocket> {
    async fn next_line(&mut self) -> Option<String> {
        loop {
            match self.next().await? {
                Ok(ws::Message::Text(t)) => return Some(t.to_string()),
                Ok(ws::Message::Binary(b)) => return Some(String::from_utf8_lossy(&b).into_owned()),
                Ok(ws::Message::Close(_)) | Err(_) => return None,
                Ok(_) => {}
            }
        }
    }
}

impl LineSink for SplitSink<WebSocket, ws::Message> {
    async fn send_line(&mut self, line: &str) -> std::io::Result<()> {
        self.send(ws::Message::Text(line.to_owned().into())).await.map_err(std::io::Error::other)
    }
}

async fn accept_tcp(listener: TcpListener, hub: Hub) {
    while let Ok((stream, _)) = listener.accept().await {
        tokio::spawn(tcp_session(stream, hub.clone()));
    }
}

async fn tcp_session(stream: TcpStream, hub: Hub) {
    let _ = stream.set_nodelay(true);
    let (r, w) = stream.into_split();
    session(TcpLines(BufReader::new(r)), w, hub).await;
}

async fn ws_upgrade(upgrade: WebSocketUpgrade, State(hub): State<Hub>) -> Response {
    upgrade.on_upgrade(move |socket| async move {
        let (w, r) = socket.split();
        session(r, w, hub).await;
    })
}

/// Serve one client until writing to it fails. A client that closes its
/// sending side keeps receiving telemetry.
async fn session(source: impl LineSource, sink: impl LineSink, hub: Hub) {
    let (reply, replies) = tmpsc::unbounded_channel();
    let writer = write_records(sink, hub.telemetry.subscribe(), replies);
    tokio::pin!(writer);
    tokio::select! {
        _ = &mut writer => return,
        _ = read_commands(source, &hub, reply) => {}
    }
    writer.await;
}

async fn read_commands(mut source: impl LineSource, hub: &Hub, reply: tmpsc::UnboundedSender<String>) {
    while let Some(line) = source.next_line().await {
        if line.trim().is_empty() {
            continue;
        }
        match parse_command(&line) {
            // A failed send hands the command back and dropping it nacks.
            Ok(command) => drop(hub.control.send(Incoming {
                command,
                reply: reply.clone(),
                answered: false,
            })),
            Err(rejection) => {
                let _ = reply.send(rejection.into_message().to_line());
            }
        }
    }
}

async fn write_records(mut sink: impl LineSink, mut telemetry: broadcast::Receiver<Arc<Outbound>>, mut replies: tmpsc::UnboundedReceiver<String>) {
    let (mut timestamp, mut sample_index) = (0.0, 0);
    loop {
        let line = tokio::select! {
            biased;
            Some(r) = replies.recv() => r,
            t = telemetry.recv() => match t {
                Ok(o) => {
                    (timestamp, sample_index) = (o.timestamp, o.sample_index);
                    if sink.send_line(&o.line).await.is_err() {
                        return;
                    }
                    continue;
                }
                Err(broadcast::error::RecvError::Lagged(n)) => Message::event(NetworkEvent {
                    timestamp,
                    sample_index,
                    kind: "telemetry_dropped".into(),
                    detail: format!("{n} records dropped"),
                })
                .to_line(),
                Err(broadcast::error::RecvError::Closed) => return,
            },
        };
        if sink.send_line(&line).await.is_err() {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;
    use tokio::sync::Semaphore;

    /// Records lines, one per permit.
    struct GatedSink {
        gate: Arc<Semaphore>,
        lines: Arc<Mutex<Vec<String>>>,
    }

    impl LineSink for GatedSink {
        async fn send_line(&mut self, line: &str) -> std::io::Result<()> {
            self.gate.acquire().await.expect("open").forget();
            self.lines.lock().unwrap().push(line.to_string());
            Ok(())
        }
    }

    fn outbound(i: u64) -> Arc<Outbound> {
        Arc::new(Outbound {
            timestamp: i as f64,
            sample_index: i,
            line: format!("{{\"n\":{i}}}"),
        })
    }

    #[tokio::test]
    async fn lagging_writer_reports_drops() {
        let (tx, rx) = broadcast::channel(4);
        let (reply_tx, replies) = tmpsc::unbounded_channel();
        let gate = Arc::new(Semaphore::new(0));
        let lines = Arc::new(Mutex::new(Vec::new()));
        let sink = GatedSink {
            gate: gate.clone(),
            lines: lines.clone(),
        };
        let writer = tokio::spawn(write_records(sink, rx, replies));
        // The sink is blocked on the first record while twenty more arrive.
        tx.send(outbound(0)).unwrap();
        tokio::task::yield_now().await;
        for i in 1..=20 {
            tx.send(outbound(i)).unwrap();
        }
        reply_tx.send("{\"type\":\"ack\"}".into()).unwrap();
        gate.add_permits(100);
        drop(tx);
        writer.await.unwrap();
        let lines = lines.lock().unwrap();
        let drop_event = lines.iter().position(|l| l.contains("telemetry_dropped")).expect("drop reported");
        assert!(lines[drop_event].contains("16 records dropped"), "{}", lines[drop_event]);
        assert!(lines.contains(&"{\"type\":\"ack\"}".to_string()), "replies are never dropped");
        // The last four records survive.
        assert_eq!(&lines[lines.len() - 4..], ["{\"n\":17}", "{\"n\":18}", "{\"n\":19}", "{\"n\":20}"]);
    }

    #[test]
    fn acks_name_the_last_command_per_key() {
        let (reply, mut rx) = tmpsc::unbounded_channel();
        let cmd = |line: &str| Incoming {
            command: parse_command(line).unwrap(),
            reply: reply.clone(),
            answered: false,
        };
        let mut batch = vec![
            cmd(r#"{"type":"set_gain","target":1,"value":1,"command_id":1}"#),
            cmd(r#"{"type":"set_gain","target":2,"value":1,"command_id":2}"#),
            cmd(r#"{"type":"set_gain","target":1,"value":2,"command_id":3}"#),
        ];
        acknowledge(&mut batch);
        let got: Vec<String> = std::iter::from_fn(|| rx.try_recv().ok()).collect();
        assert_eq!(
            got,
            [
                r#"{"type":"ack","command_id":1,"winning_command_id":3}"#,
                r#"{"type":"ack","command_id":2,"winning_command_id":2}"#,
                r#"{"type":"ack","command_id":3,"winning_command_id":3}"#,
            ]
        );
    }

    #[test]
    fn unanswered_commands_are_nacked_on_drop() {
        let (reply, mut rx) = tmpsc::unbounded_channel();
        let (tx, control) = mpsc::channel();
        tx.send(Incoming {
            command: parse_command(r#"{"type":"pause","command_id":9}"#).unwrap(),
            reply,
            answered: false,
        })
        .unwrap();
        drop(control);
        let nack: Message = serde_json::from_str(&rx.try_recv().unwrap()).unwrap();
        assert!(matches!(nack, Message::Nack { command_id, .. } if command_id == 9));
        assert!(rx.try_recv().is_err());
    }
}
