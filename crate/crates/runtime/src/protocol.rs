//! Newline-delimited JSON wire protocol shared by the TCP socket, the
//! WebSocket bridge and the snapshot log.
//!
//! Server to client, one record per line:
//!
//! ```text
//! {"type":"snapshot","timestamp":0.5,"payload":{...}}
//! {"type":"constellation","timestamp":0.5,"payload":{...}}
//! {"type":"event","timestamp":0.5,"payload":{"kind":"swap_committed",...}}
//! {"type":"ack","command_id":7,"winning_command_id":9}
//! {"type":"nack","command_id":7,"reason":"gain 9 outside (0, 4]"}
//! ```
//!
//! Client to server:
//!
//! ```text
//! {"type":"set_gain","target":2,"value":0.5,"command_id":7}
//! ```
//!
//! `command_id` may be any JSON value and is echoed verbatim. Unknown fields
//! are ignored in both directions.

use rfmesh::framing::DiversityMode;
use rfmesh::mesh::network::{ConstellationSnapshot, NetworkEvent};
use rfmesh::mesh::{Control, NetworkSnapshot, PayloadSource};
use rfmesh::modem::Modulation;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Snapshot { timestamp: f64, payload: NetworkSnapshot },
    Constellation { timestamp: f64, payload: ConstellationSnapshot },
    Event { timestamp: f64, payload: NetworkEvent },
    Ack { command_id: Value, winning_command_id: Value },
    Nack { command_id: Value, reason: String },
}

impl Message {
    pub fn snapshot(s: NetworkSnapshot) -> Self {
        Message::Snapshot {
            timestamp: s.timestamp,
            payload: s,
        }
    }

    pub fn constellation(c: ConstellationSnapshot) -> Self {
        Message::Constellation {
            timestamp: c.timestamp,
            payload: c,
        }
    }

    pub fn event(e: NetworkEvent) -> Self {
        Message::Event {
            timestamp: e.timestamp,
            payload: e,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("messages serialize")
    }
}

/// A parsed control record.
#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub command_id: Value,
    pub control: Control,
    /// Commands with equal keys overwrite each other (last writer wins).
    pub key: String,
}

/// A control record that could not be turned into a command.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub command_id: Value,
    pub reason: String,
}

impl Rejection {
    pub fn into_message(self) -> Message {
        Message::Nack {
            command_id: self.command_id,
            reason: self.reason,
        }
    }
}

pub fn parse_command(line: &str) -> Result<Command, Rejection> {
    let record: Value = serde_json::from_str(line).map_err(|e| Rejection {
        command_id: Value::Null,
        reason: format!("parse error: {e}"),
    })?;
    let command_id = record.get("command_id").cloned().unwrap_or(Value::Null);
    let reject = |reason: String| Rejection {
        command_id: command_id.clone(),
        reason,
    };
    let Some(kind) = record.get("type").and_then(Value::as_str) else {
        return Err(reject("missing string field `type`".into()));
    };
    let target = record.get("target").unwrap_or(&Value::Null);
    let value = record.get("value").unwrap_or(&Value::Null);
    let control = to_control(kind, target, value).map_err(reject)?;
    Ok(Command {
        key: format!("{kind}/{target}"),
        command_id,
        control,
    })
}

fn index(field: &str, v: &Value) -> Result<usize, String> {
    v.as_u64().map(|n| n as usize).ok_or_else(|| format!("`{field}` must be a non-negative integer, got {v}"))
}

fn optional_index(field: &str, v: &Value) -> Result<Option<usize>, String> {
    if v.is_null() {
        Ok(None)
    } else {
        index(field, v).map(Some)
    }
}

fn number(v: &Value) -> Result<f64, String> {
    v.as_f64().ok_or_else(|| format!("`value` must be a number, got {v}"))
}

fn named<T: for<'de> Deserialize<'de>>(v: &Value) -> Result<T, String> {
    T::deserialize(v).map_err(|e| format!("`value`: {e}"))
}

fn to_control(kind: &str, target: &Value, value: &Value) -> Result<Control, String> {
    Ok(match kind {
        "set_gain" => Control::SetGain {
            node: index("target", target)?,
            gain: number(value)?,
        },
        "set_modulation" => Control::SetModulation {
            node: index("target", target)?,
            modulation: named::<Modulation>(value)?,
        },
        "set_diversity" => Control::SetDiversity {
            node: index("target", target)?,
            mode: named::<DiversityMode>(value)?,
        },
        "set_snr" => Control::SetSnr {
            node: optional_index("target", target)?,
            snr_db: number(value)?,
        },
        "swap_bands" => Control::SwapBands {
            a: index("target", target)?,
            b: index("value", value)?,
        },
        "set_band" => Control::AssignBand {
            node: index("target", target)?,
            band: index("value", value)?,
        },
        "set_payload_source" => Control::SetPayloadSource {
            node: index("target", target)?,
            source: named::<PayloadSource>(value)?,
        },
        "pause" => Control::Pause {
            node: optional_index("target", target)?,
        },
        "resume" => Control::Resume {
            node: optional_index("target", target)?,
        },
        other => return Err(format!("unknown command type `{other}`")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_every_command() {
        let cases = [
            (json!({"type": "set_gain", "target": 2, "value": 0.5}), Control::SetGain { node: 2, gain: 0.5 }),
            (
                json!({"type": "set_modulation", "target": 1, "value": "QPSK"}),
                Control::SetModulation {
                    node: 1,
                    modulation: Modulation::Qpsk,
                },
            ),
            (
                json!({"type": "set_diversity", "target": 0, "value": "SINGLE_TX_MRC"}),
                Control::SetDiversity {
                    node: 0,
                    mode: DiversityMode::SingleTxMrc,
                },
            ),
            (json!({"type": "set_snr", "target": null, "value": 12}), Control::SetSnr { node: None, snr_db: 12.0 }),
            (json!({"type": "set_snr", "target": 3, "value": 5.0}), Control::SetSnr { node: Some(3), snr_db: 5.0 }),
            (json!({"type": "swap_bands", "target": 0, "value": 2}), Control::SwapBands { a: 0, b: 2 }),
            (json!({"type": "set_band", "target": 1, "value": 1}), Control::AssignBand { node: 1, band: 1 }),
            (
                json!({"type": "set_payload_source", "target": 3, "value": "SYNTHETIC_VIDEO"}),
                Control::SetPayloadSource {
                    node: 3,
                    source: PayloadSource::SyntheticVideo,
                },
            ),
            (json!({"type": "pause"}), Control::Pause { node: None }),
            (json!({"type": "resume", "target": 1}), Control::Resume { node: Some(1) }),
        ];
        for (record, control) in cases {
            let cmd = parse_command(&record.to_string()).unwrap();
            assert_eq!(cmd.control, control, "{record}");
        }
    }

    #[test]
    fn echoes_command_id_and_ignores_unknown_fields() {
        let cmd = parse_command(r#"{"type":"set_gain","target":2,"value":0.5,"command_id":"abc","client":"x"}"#).unwrap();
        assert_eq!(cmd.command_id, json!("abc"));
        let r = parse_command(r#"{"type":"set_gain","target":2,"value":"loud","command_id":41}"#).unwrap_err();
        assert_eq!(r.command_id, json!(41));
        assert!(r.reason.contains("value"), "{}", r.reason);
    }

    #[test]
    fn malformed_records_are_rejected() {
        for line in ["not json", "[1,2]", r#"{"target":1}"#, r#"{"type":"reboot","command_id":1}"#, r#"{"type":"set_modulation","target":1,"value":"QAM-64"}"#, r#"{"type":"set_gain","target":-1,"value":1}"#] {
            assert!(parse_command(line).is_err(), "{line}");
        }
    }

    #[test]
    fn keys_separate_targets() {
        let a = parse_command(r#"{"type":"set_gain","target":1,"value":1}"#).unwrap();
        let b = parse_command(r#"{"type":"set_gain","target":1,"value":2}"#).unwrap();
        let c = parse_command(r#"{"type":"set_gain","target":2,"value":2}"#).unwrap();
        assert_eq!(a.key, b.key);
        assert_ne!(a.key, c.key);
    }

    #[test]
    fn messages_round_trip_with_extra_fields() {
        let m = Message::Ack {
            command_id: json!(3),
            winning_command_id: json!(4),
        };
        let line = m.to_line();
        assert_eq!(line, r#"{"type":"ack","command_id":3,"winning_command_id":4}"#);
        let mut v: Value = serde_json::from_str(&line).unwrap();
        v["future"] = json!(true);
        assert_eq!(serde_json::from_value::<Message>(v).unwrap(), m);
    }
}
