//! Payload generators for each node's transmitter.

use crate::error::param;
use crate::modem::prbs::prbs23_payload;
use crate::Result;
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PayloadSource {
    #[serde(rename = "PRBS23")]
    Prbs23,
    #[serde(rename = "FILE")]
    File,
    #[serde(rename = "SYNTHETIC_VIDEO")]
    SyntheticVideo,
}

impl PayloadSource {
    pub fn name(self) -> &'static str {
        match self {
            PayloadSource::Prbs23 => "PRBS23",
            PayloadSource::File => "FILE",
            PayloadSource::SyntheticVideo => "SYNTHETIC_VIDEO",
        }
    }
}

impl FromStr for PayloadSource {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PRBS23" => Ok(PayloadSource::Prbs23),
            "FILE" => Ok(PayloadSource::File),
            "SYNTHETIC_VIDEO" => Ok(PayloadSource::SyntheticVideo),
            other => Err(param(format!("unknown payload source {other:?}"))),
        }
    }
}

/// Raster size of the synthetic video source.
pub const VIDEO_WIDTH: usize = 160;
pub const VIDEO_HEIGHT: usize = 120;

/// Per-node payload state. PRBS payloads depend only on the frame identity;
/// file and video payloads are consumed as continuous byte streams.
#[derive(Debug, Clone)]
pub struct PayloadGenerator {
    file: Option<Arc<Vec<u8>>>,
    file_cursor: usize,
    video_cursor: u64,
}

impl PayloadGenerator {
    pub fn new(file: Option<Arc<Vec<u8>>>) -> Self {
        PayloadGenerator {
            file,
            file_cursor: 0,
            video_cursor: 0,
        }
    }

    pub fn supports(&self, source: PayloadSource) -> bool {
        source != PayloadSource::File || self.file.as_ref().is_some_and(|f| !f.is_empty())
    }

    pub fn next(&mut self, source: PayloadSource, src: u8, dst: u8, seq: u32, len: usize) -> Result<Vec<u8>> {
        match source {
            PayloadSource::Prbs23 => Ok(prbs23_payload(src, dst, seq, len)),
            PayloadSource::File => {
                let file = self.file.as_ref().filter(|f| !f.is_empty()).ok_or_else(|| param("FILE payload source has no file loaded"))?;
                let out = (0..len).map(|k| file[(self.file_cursor + k) % file.len()]).collect();
                self.file_cursor = (self.file_cursor + len) % file.len();
                Ok(out)
            }
            PayloadSource::SyntheticVideo => {
                let out = (0..len as u64).map(|k| video_pixel(self.video_cursor + k)).collect();
                self.video_cursor += len as u64;
                Ok(out)
            }
        }
    }
}

/// Luma of a drifting interference pattern, one byte per pixel, frames
/// back to back.
pub fn video_pixel(index: u64) -> u8 {
    let frame_px = (VIDEO_WIDTH * VIDEO_HEIGHT) as u64;
    let t = index / frame_px;
    let p = index % frame_px;
    let x = p % VIDEO_WIDTH as u64;
    let y = p / VIDEO_WIDTH as u64;
    ((x + 2 * t) ^ (y + t)) as u8
}
