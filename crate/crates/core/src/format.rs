//! `TFS1` field-sequence container and binary PGM images.
//!
//! A `TFS1` file is an 8-digit ASCII decimal header length, the JSON header,
//! then the payload: for every frame, for every sensor, `height × width`
//! pixels in row-major order with channels `x, y, z` interleaved, each an
//! IEEE-754 little-endian `f32`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contact::SensorIntrinsics;
use crate::field::TactileFrame;
use crate::grid::Grid;
use crate::{Error, Real, Result};

pub const MAGIC: &str = "TFS1";
pub const HEADER_DIGITS: usize = 8;
pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub magic: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frame_rate: f64,
    pub sensor_count: usize,
    pub frames: usize,
    pub intrinsics: Vec<SensorIntrinsics<f64>>,
    /// Frame timestamps, seconds.
    pub timestamps: Vec<f64>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl FieldHeader {
    pub fn new(width: usize, height: usize, frame_rate: f64, intrinsics: Vec<SensorIntrinsics<f64>>) -> Self {
        Self {
            magic: MAGIC.into(),
            height,
            width,
            channels: CHANNELS,
            frame_rate,
            sensor_count: intrinsics.len(),
            frames: 0,
            intrinsics,
            timestamps: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn payload_len(&self) -> Option<u64> {
        [self.frames, self.sensor_count, self.height, self.width, CHANNELS, 4]
            .iter()
            .try_fold(1u64, |acc, &v| acc.checked_mul(v as u64))
    }

    fn check(&self, at: u64) -> Result<()> {
        let bad = |msg: String| Err(Error::Parse { offset: at, msg });
        if self.magic != MAGIC {
            return bad(format!("bad magic `{}`", self.magic));
        }
        if self.channels != CHANNELS {
            return bad(format!("expected {CHANNELS} channels, got {}", self.channels));
        }
        if self.width == 0 || self.height == 0 || self.sensor_count == 0 {
            return bad("empty dimensions or no sensors".into());
        }
        if self.intrinsics.len() != self.sensor_count {
            return bad(format!(
                "{} intrinsics entries for {} sensors",
                self.intrinsics.len(),
                self.sensor_count
            ));
        }
        if self.timestamps.len() != self.frames {
            return bad(format!("{} timestamps for {} frames", self.timestamps.len(), self.frames));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return bad("frame rate must be positive".into());
        }
        Ok(())
    }
}

/// Header plus frames indexed `[sensor][frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSequence {
    pub header: FieldHeader,
    pub frames: Vec<Vec<TactileFrame<f32>>>,
}

impl FieldSequence {
    /// Builds a sequence from per-sensor frame lists, rounding to `f32`.
    pub fn from_frames<S: Real>(
        frames: &[Vec<TactileFrame<S>>],
        intrinsics: Vec<SensorIntrinsics<f64>>,
        frame_rate: f64,
    ) -> Result<Self> {
        let first = frames
            .first()
            .and_then(|f| f.first())
            .ok_or_else(|| Error::ShapeMismatch("no frames".into()))?;
        let (w, h) = first.grid.dims();
        let n = frames[0].len();
        if intrinsics.len() != frames.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} intrinsics for {} sensors",
                intrinsics.len(),
                frames.len()
            )));
        }
        let mut out = Vec::with_capacity(frames.len());
        for (s, seq) in frames.iter().enumerate() {
            if seq.len() != n {
                return Err(Error::ShapeMismatch("sensors have different frame counts".into()));
            }
            let mut conv = Vec::with_capacity(n);
            for (k, f) in seq.iter().enumerate() {
                f.grid.ensure_same_dims(&first.grid, "frame")?;
                if f.timestamp.to_bits() != frames[0][k].timestamp.to_bits() {
                    return Err(Error::ClockError(format!("sensor {s} frame {k} out of sync")));
                }
                let grid = f.grid.map(|c| c.map(|v| v.to_f32().unwrap_or(f32::NAN)));
                conv.push(TactileFrame::new(grid, f.timestamp, s as u8)?);
            }
            out.push(conv);
        }
        let mut header = FieldHeader::new(w, h, frame_rate, intrinsics);
        header.frames = n;
        header.timestamps = frames[0].iter().map(|f| f.timestamp).collect();
        Ok(Self { header, frames: out })
    }

    pub fn frame_count(&self) -> usize {
        self.header.frames
    }

    /// Frames of all sensors at index `k`, converted to `f64`.
    pub fn frames_at_f64(&self, k: usize) -> Vec<TactileFrame<f64>> {
        self.frames
            .iter()
            .map(|seq| {
                let f = &seq[k];
                TactileFrame {
                    grid: f.grid.map(|c| c.map(f64::from)),
                    timestamp: f.timestamp,
                    sensor_id: f.sensor_id,
                }
            })
            .collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        h.check(0)?;
        if self.frames.len() != h.sensor_count || self.frames.iter().any(|s| s.len() != h.frames) {
            return Err(Error::ShapeMismatch("frames do not match header counts".into()));
        }
        let json = serde_json::to_string(h).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if json.len() >= 10usize.pow(HEADER_DIGITS as u32) {
            return Err(Error::InvalidConfig("header too large".into()));
        }
        let payload = h.payload_len().ok_or_else(|| Error::InvalidConfig("payload too large".into()))?;
        let mut out = Vec::with_capacity(HEADER_DIGITS + json.len() + payload as usize);
        out.extend_from_slice(format!("{:0width$}", json.len(), width = HEADER_DIGITS).as_bytes());
        out.extend_from_slice(json.as_bytes());
        for k in 0..h.frames {
            for seq in &self.frames {
                let g = &seq[k].grid;
                if g.dims() != (h.width, h.height) {
                    return Err(Error::ShapeMismatch("frame dimensions differ from header".into()));
                }
                for c in g.as_slice() {
                    for v in c {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let digits = bytes.get(..HEADER_DIGITS).ok_or_else(|| Error::Parse {
            offset: bytes.len() as u64,
            msg: "truncated header length".into(),
        })?;
        if let Some(p) = digits.iter().position(|b| !b.is_ascii_digit()) {
            return Err(Error::Parse {
                offset: p as u64,
                msg: "header length must be ASCII digits".into(),
            });
        }
        let hlen: usize = std::str::from_utf8(digits)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: 0,
                msg: "bad header length".into(),
            })?;
        let start = HEADER_DIGITS;
        let text = bytes.get(start..start + hlen).ok_or_else(|| Error::Parse {
            offset: bytes.len() as u64,
            msg: format!("truncated header: expected {hlen} bytes"),
        })?;
        let header: FieldHeader = serde_json::from_slice(text).map_err(|e| Error::Parse {
            offset: (start + line_col_offset(text, e.line(), e.column())) as u64,
            msg: e.to_string(),
        })?;
        let payload_at = (start + hlen) as u64;
        header.check(start as u64)?;
        let expected = header.payload_len().ok_or_else(|| Error::Parse {
            offset: start as u64,
            msg: "payload size overflows".into(),
        })?;
        let payload = &bytes[start + hlen..];
        if payload.len() as u64 != expected {
            let offset = payload_at + expected.min(payload.len() as u64);
            return Err(Error::Parse {
                offset,
                msg: format!("payload is {} bytes, expected {expected}", payload.len()),
            });
        }
        let (w, h) = (header.width, header.height);
        let px = w * h;
        let mut frames: Vec<Vec<TactileFrame<f32>>> = vec![Vec::with_capacity(header.frames); header.sensor_count];
        let mut chunks = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        for k in 0..header.frames {
            for (s, seq) in frames.iter_mut().enumerate() {
                let data: Vec<[f32; 3]> = (0..px)
                    .map(|_| {
                        let x = chunks.next().unwrap_or(f32::NAN);
                        let y = chunks.next().unwrap_or(f32::NAN);
                        let z = chunks.next().unwrap_or(f32::NAN);
                        [x, y, z]
                    })
                    .collect();
                seq.push(TactileFrame::new(Grid::from_vec(w, h, data)?, header.timestamps[k], s as u8)?);
            }
        }
        Ok(Self { header, frames })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&self.encode()?)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

/// Byte offset of a 1-based `(line, column)` position in `text`.
fn line_col_offset(text: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (n, l) in text.split(|b| *b == b'\n').enumerate() {
        if n + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len());
        }
        offset += l.len() + 1;
    }
    text.len()
}

/// Writes an 8-bit binary PGM (`P5`).
pub fn write_pgm<W: Write>(grid: &Grid<u8>, mut out: W) -> Result<()> {
    write!(out, "P5\n{} {}\n255\n", grid.width(), grid.height())?;
    out.write_all(grid.as_slice())?;
    Ok(())
}

/// Reads an 8-bit binary PGM (`P5`, maxval ≤ 255). Comments are skipped.
pub fn read_pgm(bytes: &[u8]) -> Result<Grid<u8>> {
    let mut pos = 0usize;
    let err = |offset: usize, msg: &str| Error::Parse {
        offset: offset as u64,
        msg: msg.into(),
    };
    if bytes.get(..2) != Some(b"P5") {
        return Err(err(0, "not a binary PGM (P5)"));
    }
    pos += 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let begin = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if begin == pos {
            return Err(err(pos, "expected a decimal number"));
        }
        *f = std::str::from_utf8(&bytes[begin..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(begin, "number out of range"))?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(err(pos, "only 8-bit PGM is supported"));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(err(pos, "expected whitespace after maxval"));
    }
    pos += 1;
    let n = w.checked_mul(h).ok_or_else(|| err(pos, "image too large"))?;
    let data = bytes
        .get(pos..pos + n)
        .ok_or_else(|| err(bytes.len(), "truncated pixel data"))?;
    Grid::from_vec(w, h, data.to_vec())
}
