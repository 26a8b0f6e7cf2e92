use futures::{SinkExt, StreamExt};
use rfmesh_runtime::protocol::Message;
use rfmesh_runtime::scenario::{parse_scenario, ScenarioConfig};
use rfmesh_runtime::serve::{self, ServeOptions, Server};
use serde_json::{json, Value};
use std::time::{Duration, Instant};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpSocket, TcpStream};

const PERIOD: f64 = 8192.0;
/// Four telemetry periods per wall second.
const PACE: f64 = 4.0 * PERIOD;

fn scenario(pace: f64) -> ScenarioConfig {
    parse_scenario(&format!("seed = 21\ntelemetry_period = {PERIOD:.1}\npace = {pace:.1}\n[frame]\npayload_len = 1024")).unwrap()
}

async fn server(capacity: usize) -> Server {
    server_paced(capacity, PACE).await
}

async fn server_paced(capacity: usize, pace: f64) -> Server {
    let opts = ServeOptions {
        ws_listen: Some("127.0.0.1:0".parse().unwrap()),
        telemetry_capacity: capacity,
        ..ServeOptions::new("127.0.0.1:0".parse().unwrap())
    };
    serve::start(&scenario(pace), opts).await.unwrap()
}

struct Client {
    lines: Lines<BufReader<OwnedReadHalf>>,
    w: OwnedWriteHalf,
}

impl Client {
    async fn connect(s: &Server) -> Self {
        let (r, w) = TcpStream::connect(s.tcp_addr()).await.unwrap().into_split();
        Client {
            lines: BufReader::new(r).lines(),
            w,
        }
    }

    async fn send(&mut self, v: Value) {
        self.send_raw(&v.to_string()).await;
    }

    async fn send_raw(&mut self, line: &str) {
        self.w.write_all(format!("{line}\n").as_bytes()).await.unwrap();
    }

    async fn next(&mut self) -> (Message, String) {
        let line = tokio::time::timeout(Duration::from_secs(20), self.lines.next_line())
            .await
            .expect("telemetry within 20 s")
            .unwrap()
            .expect("connection open");
        (serde_json::from_str(&line).unwrap_or_else(|e| panic!("{e}: {line}")), line)
    }

    /// Read until a record matches, returning it.
    async fn until(&mut self, mut f: impl FnMut(&Message) -> bool) -> (Message, String) {
        loop {
            let (m, line) = self.next().await;
            if f(&m) {
                return (m, line);
            }
        }
    }

    async fn snapshot(&mut self) -> (rfmesh::mesh::NetworkSnapshot, String) {
        match self.until(|m| matches!(m, Message::Snapshot { .. })).await {
            (Message::Snapshot { payload, .. }, line) => (payload, line),
            _ => unreachable!(),
        }
    }

    async fn reply(&mut self) -> Message {
        self.until(|m| matches!(m, Message::Ack { .. } | Message::Nack { .. })).await.0
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn set_gain_is_acked_and_reflected() {
    let s = server(64).await;
    let mut c = Client::connect(&s).await;
    c.send(json!({"type": "set_gain", "target": 2, "value": 0.5, "command_id": 17})).await;
    assert_eq!(c.reply().await, Message::Ack { command_id: json!(17), winning_command_id: json!(17) });
    let (snap, _) = c.snapshot().await;
    assert_eq!(snap.nodes[2].gain, 0.5);
    assert_eq!(snap.nodes[1].gain, 1.0);
    s.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_input_is_nacked_and_connection_survives() {
    let s = server(64).await;
    let mut c = Client::connect(&s).await;
    c.send_raw("{not json").await;
    assert!(matches!(c.reply().await, Message::Nack { command_id: Value::Null, .. }));
    c.send(json!({"type": "set_gain", "target": 2, "value": 40.0, "command_id": "big"})).await;
    match c.reply().await {
        Message::Nack { command_id, reason } => {
            assert_eq!(command_id, json!("big"));
            assert!(reason.contains("gain"), "{reason}");
        }
        other => panic!("{other:?}"),
    }
    c.send(json!({"type": "swap_bands", "target": 1, "value": 1, "command_id": 3})).await;
    assert!(matches!(c.reply().await, Message::Nack { .. }));
    c.send(json!({"type": "pause", "target": 0, "command_id": 4, "extra": [1, 2]})).await;
    assert!(matches!(c.reply().await, Message::Ack { .. }));
    s.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn two_clients_last_writer_wins() {
    let s = server(64).await;
    let mut a = Client::connect(&s).await;
    let mut b = Client::connect(&s).await;
    // Send both right after a snapshot so they land in one period.
    a.snapshot().await;
    b.snapshot().await;
    a.send(json!({"type": "set_gain", "target": 1, "value": 0.25, "command_id": "a"})).await;
    tokio::time::sleep(Duration::from_millis(5)).await;
    b.send(json!({"type": "set_gain", "target": 1, "value": 0.75, "command_id": "b"})).await;
    assert_eq!(a.reply().await, Message::Ack { command_id: json!("a"), winning_command_id: json!("b") });
    assert_eq!(b.reply().await, Message::Ack { command_id: json!("b"), winning_command_id: json!("b") });
    let (sa, la) = a.snapshot().await;
    let (_, lb) = b.snapshot().await;
    assert_eq!(sa.nodes[1].gain, 0.75);
    assert_eq!(la, lb);
    s.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn stalled_client_does_not_slow_the_simulation() {
    // Two periods per second leaves the simulation headroom on a loaded machine.
    let pace = 2.0 * PERIOD;
    let s = server_paced(4, pace).await;
    // A client with a tiny receive window that reads nothing for ten periods.
    let sock = TcpSocket::new_v4().unwrap();
    sock.set_recv_buffer_size(4096).unwrap();
    let stalled = sock.connect(s.tcp_addr()).await.unwrap();
    let mut live = Client::connect(&s).await;

    let mut seen = Vec::new();
    while seen.len() < 12 {
        let (snap, _) = live.snapshot().await;
        seen.push((snap.timestamp, Instant::now()));
    }
    let (t0, w0) = seen[0];
    for pair in seen.windows(2) {
        assert_eq!(pair[1].0 - pair[0].0, PERIOD, "snapshots on schedule");
    }
    // A writer blocked on the stalled socket would freeze the loop for
    // seconds; half a period absorbs scheduler jitter on a loaded machine.
    for &(t, w) in &seen {
        let lag = (w - w0).as_secs_f64() - (t - t0) / pace;
        assert!(lag.abs() < 0.25, "wall clock off schedule by {lag:.3} s");
    }

    // Once it reads again, every gap in its snapshot sequence is announced
    // by a drop event and the stream catches up with the live client.
    let last = seen.last().unwrap().0;
    let (r, _w) = stalled.into_split();
    let mut lines = BufReader::new(r).lines();
    let (mut prev, mut announced, mut drops) = (None::<f64>, false, 0);
    loop {
        let line = tokio::time::timeout(Duration::from_secs(20), lines.next_line()).await.unwrap().unwrap().unwrap();
        match serde_json::from_str::<Message>(&line).unwrap() {
            Message::Event { payload, .. } if payload.kind == "telemetry_dropped" => {
                announced = true;
                drops += 1;
            }
            Message::Snapshot { timestamp, .. } => {
                if let Some(p) = prev {
                    assert!(timestamp - p == PERIOD || announced, "silent gap {p} -> {timestamp}");
                }
                prev = Some(timestamp);
                announced = false;
                if timestamp >= last {
                    break;
                }
            }
            _ => {}
        }
    }
    eprintln!("stalled client caught up after {drops} drop notices");
    s.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn websocket_bridge_speaks_the_same_protocol() {
    let s = server(64).await;
    let url = format!("ws://{}/ws", s.ws_addr().unwrap());
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let cmd = json!({"type": "set_modulation", "target": 3, "value": "QPSK", "command_id": 5});
    ws.send(tokio_tungstenite::tungstenite::Message::text(cmd.to_string())).await.unwrap();
    let mut acked = false;
    let mut snapshots = 0;
    while snapshots < 2 {
        let msg = tokio::time::timeout(Duration::from_secs(20), ws.next()).await.unwrap().unwrap().unwrap();
        let text = msg.into_text().unwrap();
        match serde_json::from_str::<Message>(&text).unwrap() {
            Message::Ack { command_id, .. } => {
                assert_eq!(command_id, json!(5));
                acked = true;
            }
            Message::Snapshot { payload, .. } if acked => {
                assert_eq!(payload.nodes[3].modulation.name(), "QPSK");
                snapshots += 1;
            }
            _ => {}
        }
    }
    s.shutdown().await.unwrap();
}
