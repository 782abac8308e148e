//! `.landmarks.jsonl` reader and canonical writer.
//!
//! Line 1 is a header object, every following line one frame:
//!
//! ```text
//! {"schema":"romkit/landmarks/v1","video_id":"v1","participant_id":"p1","exercise":"DumbbellCurl","rom_condition":"fROM","fps":30.000000}
//! {"i":0,"t":0.000000,"lm":[[x,y,v], ... 33 entries]}
//! ```
//!
//! The writer emits a fixed field order and six-decimal floats, so canonical
//! files round-trip byte for byte.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{ExerciseKind, Landmark, LandmarkFrame, LandmarkSeries, RomCondition, VideoMeta, LANDMARK_COUNT};
use crate::num::Real;

pub const SCHEMA: &str = "romkit/landmarks/v1";

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
    video_id: String,
    participant_id: String,
    exercise: String,
    rom_condition: String,
    fps: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    i: u64,
    #[serde(default)]
    t: Option<f64>,
    lm: Vec<[f64; 3]>,
}

pub fn read_landmark_file<T: Real>(path: impl AsRef<Path>) -> Result<LandmarkSeries<T>> {
    let file = File::open(path.as_ref())?;
    read_landmarks(BufReader::new(file))
}

/// Parses a landmark stream. Frames lacking `"t"` get `t = i / fps`.
pub fn read_landmarks<T: Real, R: BufRead>(reader: R) -> Result<LandmarkSeries<T>> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(Error::Format("missing header record".into())),
            Some((n, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: n + 1,
                    message: e.to_string(),
                })?;
                if value.get("schema").is_none() {
                    return Err(Error::Format(format!(
                        "line {}: first record is not a header (no \"schema\" field)",
                        n + 1
                    )));
                }
                let header: Header = serde_json::from_value(value).map_err(|e| Error::Parse {
                    line: n + 1,
                    message: e.to_string(),
                })?;
                if header.schema != SCHEMA {
                    return Err(Error::Format(format!(
                        "unsupported schema {:?} (expected {SCHEMA:?})",
                        header.schema
                    )));
                }
                break header;
            }
        }
    };
    let meta = VideoMeta {
        video_id: header.video_id,
        participant_id: header.participant_id,
        exercise: header.exercise.parse::<ExerciseKind>()?,
        rom_condition: header.rom_condition.parse::<RomCondition>()?,
    };

    let mut frames = Vec::new();
    for (n, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if rec.lm.len() != LANDMARK_COUNT {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("expected {LANDMARK_COUNT} landmarks, found {}", rec.lm.len()),
            });
        }
        let t = rec.t.unwrap_or(rec.i as f64 / header.fps);
        let mut lms = [Landmark::<T>::hidden(); LANDMARK_COUNT];
        for (slot, [x, y, v]) in lms.iter_mut().zip(rec.lm) {
            *slot = Landmark::new(T::cst(x), T::cst(y), T::cst(v));
        }
        frames.push(LandmarkFrame::new(rec.i, T::cst(t), lms));
    }
    LandmarkSeries::new(meta, T::cst(header.fps), frames)
}

pub fn write_landmark_file<T: Real>(series: &LandmarkSeries<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_landmarks(series, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_landmarks<T: Real, W: Write>(series: &LandmarkSeries<T>, out: &mut W) -> Result<()> {
    if series.is_empty() {
        return Err(Error::Validation("cannot write an empty series".into()));
    }
    out.write_all(header_line(series).as_bytes())?;
    let mut line = String::with_capacity(40 * LANDMARK_COUNT);
    for frame in series.frames() {
        line.clear();
        frame_line(frame, &mut line);
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Serializes a series to a canonical string.
pub fn to_canonical_string<T: Real>(series: &LandmarkSeries<T>) -> Result<String> {
    let mut buf = Vec::new();
    write_landmarks(series, &mut buf)?;
    Ok(String::from_utf8(buf).expect("writer emits UTF-8"))
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

fn fixed6<T: Real>(x: T) -> String {
    let v = x.as_f64();
    // avoid "-0.000000"
    let v = if v == 0.0 { 0.0 } else { v };
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn header_line<T: Real>(series: &LandmarkSeries<T>) -> String {
    let m = series.meta();
    format!(
        "{{\"schema\":{},\"video_id\":{},\"participant_id\":{},\"exercise\":{},\"rom_condition\":{},\"fps\":{}}}\n",
        json_str(SCHEMA),
        json_str(&m.video_id),
        json_str(&m.participant_id),
        json_str(m.exercise.name()),
        json_str(m.rom_condition.as_str()),
        fixed6(series.fps()),
    )
}

fn frame_line<T: Real>(frame: &LandmarkFrame<T>, line: &mut String) {
    let _ = write!(line, "{{\"i\":{},\"t\":{},\"lm\":[", frame.frame_index, fixed6(frame.timestamp));
    for (k, lm) in frame.landmarks.iter().enumerate() {
        if k > 0 {
            line.push(',');
        }
        let _ = write!(line, "[{},{},{}]", fixed6(lm.x), fixed6(lm.y), fixed6(lm.visibility));
    }
    line.push_str("]}\n");
}
