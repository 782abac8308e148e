//! Joint angles from landmark triples, visibility gating and signal selection.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{landmark, BodySide, ExerciseKind, JointKind, LandmarkFrame, LandmarkSeries};
use crate::num::{percentile_sorted, sorted_copy, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }
}

/// Inner angle at `b` formed by the rays towards `a` and `c`, in degrees.
///
/// The cosine is clamped to [-1, 1] before `acos`, so near-collinear input
/// never produces NaN.
pub fn joint_angle<T: Real>(a: Point2<T>, b: Point2<T>, c: Point2<T>) -> Result<T> {
    let (ux, uy) = (a.x - b.x, a.y - b.y);
    let (vx, vy) = (c.x - b.x, c.y - b.y);
    let nu = ux.hypot(uy);
    let nv = vx.hypot(vy);
    if !(nu > T::zero() && nv > T::zero()) || !(nu.is_finite() && nv.is_finite()) {
        return Err(Error::DegenerateGeometry);
    }
    let cos = ((ux * vx + uy * vy) / (nu * nv)).max(-T::one()).min(T::one());
    Ok(cos.acos().to_degrees())
}

/// Three landmarks whose middle point is the articulating joint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct JointTriple {
    pub proximal: usize,
    pub center: usize,
    pub distal: usize,
    pub side: BodySide,
    pub kind: JointKind,
    pub name: String,
}

impl JointTriple {
    /// shoulder - elbow - wrist
    pub fn elbow(side: BodySide) -> Self {
        let (p, c, d) = match side {
            BodySide::Left => (landmark::LEFT_SHOULDER, landmark::LEFT_ELBOW, landmark::LEFT_WRIST),
            BodySide::Right => (landmark::RIGHT_SHOULDER, landmark::RIGHT_ELBOW, landmark::RIGHT_WRIST),
        };
        Self::sided(p, c, d, side, JointKind::Elbow)
    }

    /// hip - shoulder - elbow
    pub fn shoulder(side: BodySide) -> Self {
        let (p, c, d) = match side {
            BodySide::Left => (landmark::LEFT_HIP, landmark::LEFT_SHOULDER, landmark::LEFT_ELBOW),
            BodySide::Right => (landmark::RIGHT_HIP, landmark::RIGHT_SHOULDER, landmark::RIGHT_ELBOW),
        };
        Self::sided(p, c, d, side, JointKind::Shoulder)
    }

    pub fn of(kind: JointKind, side: BodySide) -> Self {
        match kind {
            JointKind::Elbow => Self::elbow(side),
            JointKind::Shoulder => Self::shoulder(side),
        }
    }

    fn sided(proximal: usize, center: usize, distal: usize, side: BodySide, kind: JointKind) -> Self {
        Self {
            proximal,
            center,
            distal,
            side,
            kind,
            name: format!("{}_{}", side.as_str(), kind.as_str()),
        }
    }

    /// Minimum visibility of the three landmarks in `frame`.
    pub fn min_visibility<T: Real>(&self, frame: &LandmarkFrame<T>) -> T {
        let lm = &frame.landmarks;
        lm[self.proximal]
            .visibility
            .min(lm[self.center].visibility)
            .min(lm[self.distal].visibility)
    }

    /// Angle in `frame` if every landmark clears `threshold` and the geometry is sound.
    pub fn angle_in<T: Real>(&self, frame: &LandmarkFrame<T>, threshold: T) -> Option<T> {
        if self.min_visibility(frame) < threshold {
            return None;
        }
        let lm = &frame.landmarks;
        let p = |i: usize| Point2::new(lm[i].x, lm[i].y);
        joint_angle(p(self.proximal), p(self.center), p(self.distal)).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleSample<T> {
    pub timestamp: T,
    /// `None` when the sample is invalid (occluded or degenerate).
    pub angle: Option<T>,
}

impl<T: Real> AngleSample<T> {
    pub fn valid(t: T, angle: T) -> Self {
        Self {
            timestamp: t,
            angle: Some(angle),
        }
    }

    pub fn invalid(t: T) -> Self {
        Self { timestamp: t, angle: None }
    }

    pub fn is_valid(&self) -> bool {
        self.angle.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SourceMode {
    Mapped,
    Dominant,
    FallbackScaled,
    FallbackBlended,
}

impl SourceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceMode::Mapped => "mapped",
            SourceMode::Dominant => "dominant",
            SourceMode::FallbackScaled => "fallback_scaled",
            SourceMode::FallbackBlended => "fallback_blended",
        }
    }
}

/// Joint-angle trajectory of one video with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSeries<T> {
    samples: Vec<AngleSample<T>>,
    joint: JointTriple,
    coverage: T,
    source_mode: SourceMode,
    fps: T,
}

impl<T: Real> AngleSeries<T> {
    /// Panics if timestamps are not strictly increasing.
    pub fn new(samples: Vec<AngleSample<T>>, joint: JointTriple, source_mode: SourceMode, fps: T) -> Self {
        assert!(
            samples.windows(2).all(|w| w[1].timestamp > w[0].timestamp),
            "angle samples must have strictly increasing timestamps"
        );
        let coverage = coverage_of(&samples);
        Self {
            samples,
            joint,
            coverage,
            source_mode,
            fps,
        }
    }

    /// Uniformly sampled, fully valid series starting at t = 0.
    pub fn from_values(values: &[T], fps: T, joint: JointTriple) -> Self {
        let dt = T::one() / fps;
        let samples = values
            .iter()
            .enumerate()
            .map(|(i, &v)| AngleSample::valid(T::from_usize_lossy(i) * dt, v))
            .collect();
        Self::new(samples, joint, SourceMode::Mapped, fps)
    }

    pub fn samples(&self) -> &[AngleSample<T>] {
        &self.samples
    }

    pub fn joint(&self) -> &JointTriple {
        &self.joint
    }

    pub fn side(&self) -> BodySide {
        self.joint.side
    }

    pub fn coverage(&self) -> T {
        self.coverage
    }

    pub fn source_mode(&self) -> SourceMode {
        self.source_mode
    }

    pub fn fps(&self) -> T {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_valid()).count()
    }

    pub fn valid_values(&self) -> Vec<T> {
        self.samples.iter().filter_map(|s| s.angle).collect()
    }

    /// Same provenance, new samples (timestamps must stay strictly increasing).
    pub fn with_samples(&self, samples: Vec<AngleSample<T>>) -> Self {
        Self::new(samples, self.joint.clone(), self.source_mode, self.fps)
    }

    pub fn with_provenance(self, joint: JointTriple, source_mode: SourceMode) -> Self {
        Self {
            joint,
            source_mode,
            ..self
        }
    }

    /// P95 - P5 of valid samples; zero when fewer than two are valid.
    pub fn raw_amplitude(&self) -> T {
        let v = sorted_copy(self.valid_values());
        if v.len() < 2 {
            return T::zero();
        }
        percentile_sorted(&v, T::cst(95.0)) - percentile_sorted(&v, T::cst(5.0))
    }
}

fn coverage_of<T: Real>(samples: &[AngleSample<T>]) -> T {
    if samples.is_empty() {
        return T::zero();
    }
    let valid = samples.iter().filter(|s| s.is_valid()).count();
    T::from_usize_lossy(valid) / T::from_usize_lossy(samples.len())
}

/// One sample per frame; valid iff all three landmarks clear `visibility_threshold`.
pub fn angle_series<T: Real>(series: &LandmarkSeries<T>, joint: &JointTriple, visibility_threshold: T) -> AngleSeries<T> {
    let samples = series
        .frames()
        .iter()
        .map(|f| AngleSample {
            timestamp: f.timestamp,
            angle: joint.angle_in(f, visibility_threshold),
        })
        .collect();
    AngleSeries::new(samples, joint.clone(), SourceMode::Mapped, series.fps())
}

/// Exercise name to focal joint overrides, on top of the built-in mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JointMap {
    overrides: BTreeMap<String, JointKind>,
}

impl JointMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, exercise: &ExerciseKind, joint: JointKind) {
        self.overrides.insert(exercise.name().to_string(), joint);
    }

    pub fn joint_for(&self, exercise: &ExerciseKind) -> JointKind {
        self.overrides
            .get(exercise.name())
            .copied()
            .unwrap_or_else(|| exercise.default_joint())
    }

    /// Parses `Exercise = "elbow"` lines (TOML key-value syntax).
    pub fn parse(text: &str) -> Result<Self> {
        let table: BTreeMap<String, String> = toml::from_str(text).map_err(|e| Error::Config(format!("joint map: {e}")))?;
        let mut map = Self::new();
        for (name, joint) in table {
            let exercise: ExerciseKind = name.parse()?;
            map.insert(&exercise, joint.parse()?);
        }
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig<T> {
    pub visibility_threshold: T,
    /// Mapped signal is used when its best side reaches this coverage.
    pub mapped_min_coverage: T,
    /// Videos whose best candidate falls below this coverage are unusable.
    pub usable_min_coverage: T,
}

impl<T: Real> Default for SelectionConfig<T> {
    fn default() -> Self {
        Self {
            visibility_threshold: T::cst(0.5),
            mapped_min_coverage: T::cst(0.6),
            usable_min_coverage: T::cst(0.1),
        }
    }
}

/// Coverage desc, then raw amplitude desc, then Left before Right.
fn candidate_order<T: Real>(a: &AngleSeries<T>, b: &AngleSeries<T>) -> Ordering {
    b.coverage()
        .partial_cmp(&a.coverage())
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.raw_amplitude().partial_cmp(&a.raw_amplitude()).unwrap_or(Ordering::Equal))
        .then_with(|| a.side().cmp(&b.side()))
}

/// Picks the exercise-mapped angle, or the best-covered candidate when the
/// mapped joint is incomplete on both sides. The body side of the video is
/// the side of the returned series.
pub fn select_signal<T: Real>(
    series: &LandmarkSeries<T>,
    exercise: &ExerciseKind,
    joints: &JointMap,
    cfg: &SelectionConfig<T>,
) -> Result<AngleSeries<T>> {
    let mapped_kind = joints.joint_for(exercise);
    let mut mapped: Vec<AngleSeries<T>> = [BodySide::Left, BodySide::Right]
        .into_iter()
        .map(|side| angle_series(series, &JointTriple::of(mapped_kind, side), cfg.visibility_threshold))
        .collect();
    mapped.sort_by(candidate_order);
    if mapped[0].coverage() >= cfg.mapped_min_coverage {
        return Ok(mapped.swap_remove(0));
    }

    let mut all: Vec<AngleSeries<T>> = [JointKind::Elbow, JointKind::Shoulder]
        .into_iter()
        .flat_map(|kind| [BodySide::Left, BodySide::Right].map(|side| JointTriple::of(kind, side)))
        .map(|j| angle_series(series, &j, cfg.visibility_threshold))
        .collect();
    all.sort_by(candidate_order);
    let best = all.swap_remove(0);
    if best.coverage() < cfg.usable_min_coverage {
        return Err(Error::UnusableVideo {
            video_id: series.video_id().to_string(),
            best_coverage: best.coverage().as_f64(),
            min_coverage: cfg.usable_min_coverage.as_f64(),
        });
    }
    let joint = best.joint().clone();
    Ok(best.with_provenance(joint, SourceMode::Dominant))
}
