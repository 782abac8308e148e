//! Canonical domain types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

/// Number of landmark slots in the 33-point pose topology.
pub const LANDMARK_COUNT: usize = 33;

/// Landmark indices of the 33-point pose topology used by the pipeline.
pub mod landmark {
    pub const NOSE: usize = 0;
    pub const LEFT_SHOULDER: usize = 11;
    pub const RIGHT_SHOULDER: usize = 12;
    pub const LEFT_ELBOW: usize = 13;
    pub const RIGHT_ELBOW: usize = 14;
    pub const LEFT_WRIST: usize = 15;
    pub const RIGHT_WRIST: usize = 16;
    pub const LEFT_HIP: usize = 23;
    pub const RIGHT_HIP: usize = 24;
    pub const RIGHT_FOOT_INDEX: usize = 32;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BodySide {
    Left,
    Right,
}

impl BodySide {
    pub fn as_str(self) -> &'static str {
        match self {
            BodySide::Left => "left",
            BodySide::Right => "right",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            BodySide::Left => BodySide::Right,
            BodySide::Right => BodySide::Left,
        }
    }
}

impl fmt::Display for BodySide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BodySide {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(BodySide::Left),
            "right" | "r" => Ok(BodySide::Right),
            other => Err(Error::Format(format!("unknown body side {other:?}"))),
        }
    }
}

/// ROM condition; `Partial` is the treatment level of the meta-regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RomCondition {
    #[serde(rename = "fROM")]
    Full,
    #[serde(rename = "pROM")]
    Partial,
}

impl RomCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            RomCondition::Full => "fROM",
            RomCondition::Partial => "pROM",
        }
    }

    pub fn is_partial(self) -> bool {
        self == RomCondition::Partial
    }
}

impl fmt::Display for RomCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RomCondition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "from" | "full" => Ok(RomCondition::Full),
            "prom" | "partial" => Ok(RomCondition::Partial),
            other => Err(Error::Format(format!("unknown ROM condition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

impl FromStr for Sex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M" | "MALE" => Ok(Sex::M),
            "F" | "FEMALE" => Ok(Sex::F),
            other => Err(Error::Format(format!("unknown sex {other:?}"))),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::M => "M",
            Sex::F => "F",
        })
    }
}

/// Joint whose angle drives an exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Elbow,
    Shoulder,
}

impl JointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            JointKind::Elbow => "elbow",
            JointKind::Shoulder => "shoulder",
        }
    }

    /// Same-side joint used as the fallback source when this one is unreliable.
    pub fn nearby(self) -> Self {
        match self {
            JointKind::Elbow => JointKind::Shoulder,
            JointKind::Shoulder => JointKind::Elbow,
        }
    }
}

impl FromStr for JointKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "elbow" => Ok(JointKind::Elbow),
            "shoulder" => Ok(JointKind::Shoulder),
            other => Err(Error::Config(format!(
                "unknown joint {other:?} (expected \"elbow\" or \"shoulder\")"
            ))),
        }
    }
}

/// Direction in which the mapped joint angle moves while the target muscle lengthens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lengthening {
    /// Angle increases during the eccentric phase (e.g. elbow extension in a curl).
    Increase,
    /// Angle decreases during the eccentric phase (e.g. elbow flexion in a press).
    Decrease,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CustomExercise {
    pub name: String,
    pub joint: JointKind,
    pub lengthening: Lengthening,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExerciseKind {
    BayesianCurl,
    CablePushdown,
    DumbbellCurl,
    DumbbellOverheadExtension,
    DumbbellRow,
    Flatpress,
    InclinePress,
    LatPulldown,
    Custom(CustomExercise),
}

impl ExerciseKind {
    pub const STUDY: [ExerciseKind; 8] = [
        ExerciseKind::BayesianCurl,
        ExerciseKind::CablePushdown,
        ExerciseKind::DumbbellCurl,
        ExerciseKind::DumbbellOverheadExtension,
        ExerciseKind::DumbbellRow,
        ExerciseKind::Flatpress,
        ExerciseKind::InclinePress,
        ExerciseKind::LatPulldown,
    ];

    pub fn custom(name: impl Into<String>, joint: JointKind, lengthening: Lengthening) -> Self {
        ExerciseKind::Custom(CustomExercise {
            name: name.into(),
            joint,
            lengthening,
        })
    }

    /// Identifier used in files (`DumbbellCurl`, custom names verbatim).
    pub fn name(&self) -> &str {
        match self {
            ExerciseKind::BayesianCurl => "BayesianCurl",
            ExerciseKind::CablePushdown => "CablePushdown",
            ExerciseKind::DumbbellCurl => "DumbbellCurl",
            ExerciseKind::DumbbellOverheadExtension => "DumbbellOverheadExtension",
            ExerciseKind::DumbbellRow => "DumbbellRow",
            ExerciseKind::Flatpress => "Flatpress",
            ExerciseKind::InclinePress => "InclinePress",
            ExerciseKind::LatPulldown => "LatPulldown",
            ExerciseKind::Custom(c) => &c.name,
        }
    }

    /// Human-readable label for report tables.
    pub fn label(&self) -> &str {
        match self {
            ExerciseKind::BayesianCurl => "Bayesian Curl",
            ExerciseKind::CablePushdown => "Cable Pushdown",
            ExerciseKind::DumbbellCurl => "Dumbbell Curl",
            ExerciseKind::DumbbellOverheadExtension => "Dumbbell Overhead Extension",
            ExerciseKind::DumbbellRow => "Dumbbell Row",
            ExerciseKind::Flatpress => "Flatpress",
            ExerciseKind::InclinePress => "Incline Press",
            ExerciseKind::LatPulldown => "Lat Pulldown",
            ExerciseKind::Custom(c) => &c.name,
        }
    }

    /// Default focal joint: shoulder for the pulldown, elbow for everything else.
    pub fn default_joint(&self) -> JointKind {
        match self {
            ExerciseKind::LatPulldown => JointKind::Shoulder,
            ExerciseKind::Custom(c) => c.joint,
            _ => JointKind::Elbow,
        }
    }

    /// Direction of the mapped angle while the working muscle lengthens.
    pub fn lengthening(&self) -> Lengthening {
        match self {
            ExerciseKind::BayesianCurl | ExerciseKind::DumbbellCurl | ExerciseKind::DumbbellRow | ExerciseKind::LatPulldown => {
                Lengthening::Increase
            }
            ExerciseKind::CablePushdown
            | ExerciseKind::DumbbellOverheadExtension
            | ExerciseKind::Flatpress
            | ExerciseKind::InclinePress => Lengthening::Decrease,
            ExerciseKind::Custom(c) => c.lengthening,
        }
    }
}

impl Serialize for ExerciseKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ExerciseKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for ExerciseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn normalize_name(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl FromStr for ExerciseKind {
    type Err = Error;

    /// Accepts `DumbbellCurl`, `dumbbell_curl` or `Dumbbell Curl`; anything else
    /// becomes a custom exercise mapped to the elbow with increasing lengthening.
    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        if trimmed.is_empty() {
            return Err(Error::Format("empty exercise name".into()));
        }
        let key = normalize_name(trimmed);
        for kind in ExerciseKind::STUDY {
            if normalize_name(kind.name()) == key {
                return Ok(kind);
            }
        }
        if key == "flatbenchpress" || key == "flatpress" {
            return Ok(ExerciseKind::Flatpress);
        }
        Ok(ExerciseKind::custom(trimmed, JointKind::Elbow, Lengthening::Increase))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark<T> {
    pub x: T,
    pub y: T,
    pub visibility: T,
}

impl<T: Real> Landmark<T> {
    pub fn new(x: T, y: T, visibility: T) -> Self {
        Self { x, y, visibility }
    }

    pub fn hidden() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame<T> {
    pub frame_index: u64,
    pub timestamp: T,
    pub landmarks: [Landmark<T>; LANDMARK_COUNT],
}

impl<T: Real> LandmarkFrame<T> {
    pub fn new(frame_index: u64, timestamp: T, landmarks: [Landmark<T>; LANDMARK_COUNT]) -> Self {
        Self {
            frame_index,
            timestamp,
            landmarks,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.timestamp.is_finite() {
            return Err(Error::Validation(format!("frame {}: non-finite timestamp", self.frame_index)));
        }
        for (idx, lm) in self.landmarks.iter().enumerate() {
            if !(lm.x.is_finite() && lm.y.is_finite()) {
                return Err(Error::Validation(format!(
                    "frame {}: landmark {idx} has non-finite coordinates",
                    self.frame_index
                )));
            }
            if !(lm.visibility >= T::zero() && lm.visibility <= T::one()) {
                return Err(Error::Validation(format!(
                    "frame {}: landmark {idx} visibility {} outside [0, 1]",
                    self.frame_index, lm.visibility
                )));
            }
        }
        Ok(())
    }
}

/// Descriptive metadata carried in the landmark file header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoMeta {
    pub video_id: String,
    pub participant_id: String,
    pub exercise: ExerciseKind,
    pub rom_condition: RomCondition,
}

/// Validated per-video landmark time series.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSeries<T> {
    meta: VideoMeta,
    fps: T,
    frames: Vec<LandmarkFrame<T>>,
}

impl<T: Real> LandmarkSeries<T> {
    /// Validates and sorts the frames by timestamp.
    pub fn new(meta: VideoMeta, fps: T, mut frames: Vec<LandmarkFrame<T>>) -> Result<Self> {
        if !(fps.is_finite() && fps > T::zero()) {
            return Err(Error::Validation(format!("fps must be positive, got {fps}")));
        }
        if frames.is_empty() {
            return Err(Error::Validation("landmark series has no frames".into()));
        }
        for f in &frames {
            f.validate()?;
        }
        frames.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).expect("finite"));
        for w in frames.windows(2) {
            if w[1].timestamp <= w[0].timestamp {
                return Err(Error::Validation(format!(
                    "timestamps not strictly increasing at frame {} (t = {})",
                    w[1].frame_index, w[1].timestamp
                )));
            }
        }
        if frames.len() >= 2 {
            let mut deltas: Vec<T> = frames.windows(2).map(|w| w[1].timestamp - w[0].timestamp).collect();
            deltas.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let median = deltas[deltas.len() / 2];
            let implied = T::one() / median;
            if (implied - fps).abs() > T::cst(0.1) * fps {
                return Err(Error::Validation(format!(
                    "fps {fps} inconsistent with median frame interval {median} s"
                )));
            }
        }
        Ok(Self { meta, fps, frames })
    }

    pub fn meta(&self) -> &VideoMeta {
        &self.meta
    }

    pub fn video_id(&self) -> &str {
        &self.meta.video_id
    }

    pub fn participant_id(&self) -> &str {
        &self.meta.participant_id
    }

    pub fn exercise(&self) -> &ExerciseKind {
        &self.meta.exercise
    }

    pub fn rom_condition(&self) -> RomCondition {
        self.meta.rom_condition
    }

    pub fn fps(&self) -> T {
        self.fps
    }

    pub fn frames(&self) -> &[LandmarkFrame<T>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn into_parts(self) -> (VideoMeta, T, Vec<LandmarkFrame<T>>) {
        (self.meta, self.fps, self.frames)
    }
}
