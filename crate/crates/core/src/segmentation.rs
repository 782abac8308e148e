//! Repetition detection on conditioned joint-angle series.
//!
//! Repetitions run trough to trough. Troughs are local minima that survive a
//! minimum-spacing filter (deeper troughs win) and a topographic prominence
//! filter, with both thresholds adapted to the clip's amplitude and cadence.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{angle_series, AngleSample, AngleSeries, JointTriple, SelectionConfig, SourceMode};
use crate::model::{BodySide, LandmarkSeries, Lengthening};
use crate::num::{percentile_sorted, sorted_copy, Real};
use crate::signal::{condition, SmoothingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig<T> {
    /// Floor on the spacing between accepted troughs, seconds.
    pub min_inter_trough: T,
    /// Shortest admissible concentric or eccentric phase, seconds.
    pub min_phase_duration: T,
    /// Degrees.
    pub min_rom: T,
    pub prominence_low: T,
    pub prominence_high: T,
    /// Lag range searched by the cadence estimator, seconds.
    pub cadence_min: T,
    pub cadence_max: T,
    /// Prominence threshold as a fraction of the clip's P95-P5 amplitude.
    pub amplitude_fraction: T,
    /// Cadence confidence needed before the spacing adapts to the period.
    pub cadence_confidence: T,
    /// Primary signals below this coverage go through the fallback search.
    pub fallback_below_coverage: T,
}

impl<T: Real> Default for DetectionConfig<T> {
    fn default() -> Self {
        Self {
            min_inter_trough: T::cst(2.0),
            min_phase_duration: T::cst(0.3),
            min_rom: T::cst(10.0),
            prominence_low: T::cst(5.0),
            prominence_high: T::cst(10.0),
            cadence_min: T::cst(0.5),
            cadence_max: T::cst(15.0),
            amplitude_fraction: T::cst(0.2),
            cadence_confidence: T::cst(0.5),
            fallback_below_coverage: T::cst(0.6),
        }
    }
}

impl<T: Real> DetectionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("min_inter_trough", self.min_inter_trough),
            ("min_phase_duration", self.min_phase_duration),
            ("min_rom", self.min_rom),
            ("prominence_low", self.prominence_low),
            ("prominence_high", self.prominence_high),
            ("cadence_min", self.cadence_min),
            ("cadence_max", self.cadence_max),
            ("amplitude_fraction", self.amplitude_fraction),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.prominence_low > self.prominence_high {
            return Err(Error::Config("prominence_low exceeds prominence_high".into()));
        }
        if self.cadence_min >= self.cadence_max {
            return Err(Error::Config("cadence_min must be below cadence_max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CadenceEstimate<T> {
    pub period: T,
    pub confidence: T,
}

/// Thresholds after adaptation to one clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedThresholds<T> {
    pub prominence: T,
    pub min_inter_trough: T,
    pub min_rom: T,
    pub min_phase_duration: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Trough<T> {
    /// Index into the series' samples.
    pub index: usize,
    pub time: T,
    pub angle: T,
    pub prominence: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Repetition<T> {
    pub start_time: T,
    pub end_time: T,
    pub start_angle: T,
    pub end_angle: T,
    pub peak_angle: T,
    pub trough_angle: T,
    pub rom: T,
    pub duration: T,
    pub concentric_duration: T,
    pub eccentric_duration: T,
    pub split_time: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection<T> {
    pub cadence: CadenceEstimate<T>,
    pub thresholds: ResolvedThresholds<T>,
    pub troughs: Vec<Trough<T>>,
    pub repetitions: Vec<Repetition<T>>,
}

impl<T: Real> Detection<T> {
    /// Median spacing of accepted troughs, if there are at least two.
    pub fn median_trough_interval(&self) -> Option<T> {
        if self.troughs.len() < 2 {
            return None;
        }
        let gaps = sorted_copy(self.troughs.windows(2).map(|w| w[1].time - w[0].time));
        Some(percentile_sorted(&gaps, T::cst(50.0)))
    }
}

const MIN_CADENCE_SIGNAL_S: f64 = 4.0;
/// Local autocorrelation maxima this close to the best one count as equally good;
/// the shortest such lag wins, so harmonics of the true period are not picked.
const HARMONIC_TOLERANCE: f64 = 0.9;

/// Autocorrelation cadence estimate over valid sample pairs.
///
/// At each lag the normalized correlation `Σ x x' / sqrt(Σ x² Σ x'²)` of the
/// mean-removed signal is taken over pairs where both samples are valid. The
/// period is the shortest lag whose local maximum reaches 90% of the best
/// local maximum in the search window.
pub fn estimate_cadence<T: Real>(series: &AngleSeries<T>, cfg: &DetectionConfig<T>) -> CadenceEstimate<T> {
    let none = CadenceEstimate {
        period: (cfg.cadence_min + cfg.cadence_max) / T::cst(2.0),
        confidence: T::zero(),
    };
    let fps = series.fps();
    let n = series.len();
    let valid = series.valid_count();
    if n < 3 || T::from_usize_lossy(valid) / fps < T::cst(MIN_CADENCE_SIGNAL_S) {
        return none;
    }
    let mean = series.valid_values().into_iter().sum::<T>() / T::from_usize_lossy(valid);
    let x: Vec<Option<T>> = series.samples().iter().map(|s| s.angle.map(|a| a - mean)).collect();

    // lag 1 cannot be a local maximum since r(0) = 1
    let lag_lo = (cfg.cadence_min * fps).ceil().to_usize().unwrap_or(2).max(2);
    let max_by_span = (2 * n) / 3;
    let lag_hi = (cfg.cadence_max * fps).floor().to_usize().unwrap_or(0).min(max_by_span);
    if lag_hi < lag_lo + 2 {
        return none;
    }
    // one lag of margin on each side so window endpoints can be tested as maxima
    let first = lag_lo - 1;
    let last = (lag_hi + 1).min(n - 1);
    let mut r = vec![T::zero(); last + 1];
    for lag in first..=last {
        let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
        for i in 0..n - lag {
            if let (Some(a), Some(b)) = (x[i], x[i + lag]) {
                sxy += a * b;
                sxx += a * a;
                syy += b * b;
            }
        }
        let denom = (sxx * syy).sqrt();
        r[lag] = if denom > T::zero() { sxy / denom } else { T::zero() };
    }
    let peaks: Vec<usize> = (lag_lo..=lag_hi)
        .filter(|&l| l < last && r[l] > r[l - 1] && r[l] >= r[l + 1] && r[l] > T::zero())
        .collect();
    let Some(best) = peaks
        .iter()
        .map(|&l| r[l])
        .fold(None, |m: Option<T>, v| Some(m.map_or(v, |m| m.max(v))))
    else {
        return none;
    };
    let cut = best * T::cst(HARMONIC_TOLERANCE);
    let lag = peaks.into_iter().find(|&l| r[l] >= cut).expect("best peak exists");
    CadenceEstimate {
        period: T::from_usize_lossy(lag) / fps,
        confidence: r[lag].max(T::zero()).min(T::one()),
    }
}

/// Prominence and spacing thresholds for one clip.
pub fn adaptive_thresholds<T: Real>(
    series: &AngleSeries<T>,
    cadence: &CadenceEstimate<T>,
    cfg: &DetectionConfig<T>,
) -> ResolvedThresholds<T> {
    resolve_thresholds(series.raw_amplitude(), cadence, cfg)
}

/// [`adaptive_thresholds`] given a precomputed P95-P5 amplitude.
pub fn resolve_thresholds<T: Real>(amplitude: T, cadence: &CadenceEstimate<T>, cfg: &DetectionConfig<T>) -> ResolvedThresholds<T> {
    let prominence = (cfg.amplitude_fraction * amplitude)
        .max(cfg.prominence_low)
        .min(cfg.prominence_high);
    let min_inter_trough = if cadence.confidence >= cfg.cadence_confidence {
        cfg.min_inter_trough.max(T::cst(0.5) * cadence.period)
    } else {
        cfg.min_inter_trough
    };
    ResolvedThresholds {
        prominence,
        min_inter_trough,
        min_rom: cfg.min_rom,
        min_phase_duration: cfg.min_phase_duration,
    }
}

/// Cadence estimate, threshold adaptation and detection in one call.
pub fn detect_repetitions<T: Real>(series: &AngleSeries<T>, cfg: &DetectionConfig<T>, lengthening: Lengthening) -> Detection<T> {
    let cadence = estimate_cadence(series, cfg);
    let thresholds = adaptive_thresholds(series, &cadence, cfg);
    let (troughs, repetitions) = detect_with(series, &thresholds, lengthening);
    Detection {
        cadence,
        thresholds,
        troughs,
        repetitions,
    }
}

// Relative slack when comparing times against thresholds, so grid rounding of
// timestamps never flips a decision made at exactly the threshold.
fn time_slack<T: Real>(x: T) -> T {
    x * T::cst(1e-9) + T::cst(1e-9)
}

/// Detection with fixed thresholds. Returns the accepted troughs and the
/// repetitions that pass the ROM and phase-duration checks.
pub fn detect_with<T: Real>(
    series: &AngleSeries<T>,
    th: &ResolvedThresholds<T>,
    lengthening: Lengthening,
) -> (Vec<Trough<T>>, Vec<Repetition<T>>) {
    let troughs = find_troughs(series, th.prominence, th.min_inter_trough);
    let samples = series.samples();
    let mut reps = Vec::new();
    for pair in troughs.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let window = &samples[a.index..=b.index];
        if window.iter().any(|s| !s.is_valid()) {
            continue;
        }
        let (mut peak_i, mut peak) = (0, window[0].angle.unwrap());
        let mut low = peak;
        for (i, s) in window.iter().enumerate() {
            let v = s.angle.unwrap();
            if v > peak {
                peak = v;
                peak_i = i;
            }
            low = low.min(v);
        }
        let rom = peak - low;
        if rom < th.min_rom {
            continue;
        }
        let start = refined_time(samples, a.index);
        let end = refined_time(samples, b.index);
        let split = refined_time(samples, a.index + peak_i);
        let rising = split - start;
        let falling = end - split;
        let floor = th.min_phase_duration - time_slack(th.min_phase_duration);
        if rising < floor || falling < floor {
            continue;
        }
        let (eccentric, concentric) = match lengthening {
            Lengthening::Increase => (rising, falling),
            Lengthening::Decrease => (falling, rising),
        };
        reps.push(Repetition {
            start_time: start,
            end_time: end,
            start_angle: a.angle,
            end_angle: b.angle,
            peak_angle: peak,
            trough_angle: low,
            rom,
            duration: end - start,
            concentric_duration: concentric,
            eccentric_duration: eccentric,
            split_time: split,
        });
    }
    (troughs, reps)
}

/// Time of the extremum at sample `i`, refined by the vertex of the parabola
/// through it and its neighbours. Stays on the sample when a neighbour is
/// missing or the three points are collinear.
fn refined_time<T: Real>(samples: &[AngleSample<T>], i: usize) -> T {
    let t = samples[i].timestamp;
    if i == 0 || i + 1 >= samples.len() {
        return t;
    }
    let (Some(l), Some(c), Some(r)) = (samples[i - 1].angle, samples[i].angle, samples[i + 1].angle) else {
        return t;
    };
    let curv = l - T::cst(2.0) * c + r;
    if curv == T::zero() {
        return t;
    }
    let offset = (T::cst(0.5) * (l - r) / curv).max(T::cst(-0.5)).min(T::cst(0.5));
    let step = if offset >= T::zero() {
        samples[i + 1].timestamp - t
    } else {
        t - samples[i - 1].timestamp
    };
    t + offset * step
}

/// Local minima of the valid samples, thinned so accepted troughs are at
/// least `min_spacing` seconds apart (deeper first, earlier on ties), then
/// kept if their prominence reaches `min_prominence`.
///
/// Minima are searched within each contiguous valid run; a flat bottom
/// counts once, at its middle sample.
pub fn find_troughs<T: Real>(series: &AngleSeries<T>, min_prominence: T, min_spacing: T) -> Vec<Trough<T>> {
    let samples = series.samples();
    let mut candidates = Vec::new();
    for (start, end) in crate::signal::valid_runs(&samples.iter().map(|s| s.angle).collect::<Vec<_>>()) {
        let neg: Vec<T> = samples[start..end].iter().map(|s| -s.angle.unwrap()).collect();
        for i in local_maxima(&neg) {
            let idx = start + i;
            candidates.push(Trough {
                index: idx,
                time: samples[idx].timestamp,
                angle: samples[idx].angle.unwrap(),
                prominence: prominence(&neg, i),
            });
        }
    }

    // spacing filter, deepest first
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| {
        candidates[i]
            .angle
            .partial_cmp(&candidates[j].angle)
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut keep = vec![true; candidates.len()];
    let spacing = min_spacing - time_slack(min_spacing);
    for &i in &order {
        if !keep[i] {
            continue;
        }
        let t = candidates[i].time;
        let mut j = i;
        while j > 0 && t - candidates[j - 1].time < spacing {
            j -= 1;
            keep[j] = false;
        }
        let mut j = i + 1;
        while j < candidates.len() && candidates[j].time - t < spacing {
            keep[j] = false;
            j += 1;
        }
    }
    candidates
        .into_iter()
        .zip(keep)
        .filter(|(c, k)| *k && c.prominence >= min_prominence)
        .map(|(c, _)| c)
        .collect()
}

/// Interior local maxima; plateaus report their middle index (lower middle on ties).
fn local_maxima<T: Real>(x: &[T]) -> Vec<usize> {
    let mut out = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead + 1 < n && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                out.push((i + ahead - 1) / 2);
                i = ahead;
            }
        }
        i += 1;
    }
    out
}

/// Topographic prominence of the maximum at `peak`: its height above the
/// higher of the two lowest points met before reaching higher ground (or the
/// ends of the signal) on either side.
pub fn prominence<T: Real>(x: &[T], peak: usize) -> T {
    let h = x[peak];
    let mut left_min = h;
    let mut i = peak;
    while i > 0 {
        i -= 1;
        if x[i] > h {
            break;
        }
        left_min = left_min.min(x[i]);
    }
    let mut right_min = h;
    let mut i = peak;
    while i + 1 < x.len() {
        i += 1;
        if x[i] > h {
            break;
        }
        right_min = right_min.min(x[i]);
    }
    h - left_min.max(right_min)
}

/// Signal selected for segmentation, already conditioned, with its detection.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedSignal<T> {
    pub series: AngleSeries<T>,
    pub detection: Detection<T>,
}

/// Chooses between the primary signal and two surrogates built from the
/// nearby same-side joint when the primary coverage is low.
///
/// The scaled surrogate maps the nearby angle onto the focal joint's P5-P95
/// span (sign-flipped if the two angles move in opposite directions). The
/// blended surrogate averages focal and scaled nearby angles frame by frame,
/// weighting each by its landmarks' minimum visibility. Among candidates that
/// produce repetitions, the one whose median trough spacing best matches its
/// autocorrelation period wins; candidates within 0.10 of the best are
/// ranked by coverage, then repetition count, then primary, scaled, blended.
pub fn fallback_signal<T: Real>(
    landmarks: &LandmarkSeries<T>,
    primary: &AngleSeries<T>,
    smoothing: &SmoothingConfig<T>,
    detection: &DetectionConfig<T>,
    selection: &SelectionConfig<T>,
    lengthening: Lengthening,
) -> Result<SegmentedSignal<T>> {
    let run = |s: &AngleSeries<T>| -> Result<SegmentedSignal<T>> {
        let series = condition(s, smoothing)?;
        let detection = detect_repetitions(&series, detection, lengthening);
        Ok(SegmentedSignal { series, detection })
    };
    if primary.coverage() >= detection.fallback_below_coverage {
        return run(primary);
    }

    let mut candidates = vec![run(primary)?];
    let nearby_joint = JointTriple::of(primary.joint().kind.nearby(), primary.side());
    let nearby = angle_series(landmarks, &nearby_joint, selection.visibility_threshold);
    if let Some(scaled) = scaled_surrogate(primary, &nearby) {
        let blended = blended_surrogate(landmarks, primary, &scaled, &nearby_joint);
        candidates.push(run(&scaled)?);
        candidates.push(run(&blended)?);
    }

    let scores: Vec<Option<T>> = candidates.iter().map(plausibility).collect();
    let Some(best) = scores.iter().flatten().copied().reduce(|a, b| a.min(b)) else {
        return Err(Error::SegmentationFailure(landmarks.video_id().to_string()));
    };
    let tie = best + T::cst(0.10);
    let chosen = (0..candidates.len())
        .filter(|&i| scores[i].is_some_and(|s| s <= tie))
        .min_by(|&i, &j| {
            let (a, b) = (&candidates[i], &candidates[j]);
            b.series
                .coverage()
                .partial_cmp(&a.series.coverage())
                .unwrap_or(Ordering::Equal)
                .then(b.detection.repetitions.len().cmp(&a.detection.repetitions.len()))
                .then(i.cmp(&j))
        })
        .expect("at least one scored candidate");
    Ok(candidates.swap_remove(chosen))
}

/// `|median trough spacing - period| / period`; `None` without repetitions.
/// Candidates with a single repetition use its duration as the spacing.
fn plausibility<T: Real>(c: &SegmentedSignal<T>) -> Option<T> {
    let d = &c.detection;
    if d.repetitions.is_empty() {
        return None;
    }
    if d.cadence.confidence <= T::zero() {
        return Some(T::infinity());
    }
    let spacing = d.median_trough_interval().unwrap_or(d.repetitions[0].duration);
    Some((spacing - d.cadence.period).abs() / d.cadence.period)
}

fn co_valid_spans<T: Real>(focal: &AngleSeries<T>, nearby: &AngleSeries<T>) -> Option<(T, T, T, T, T)> {
    let pairs: Vec<(T, T)> = focal
        .samples()
        .iter()
        .zip(nearby.samples())
        .filter_map(|(f, n)| Some((f.angle?, n.angle?)))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let f = sorted_copy(pairs.iter().map(|p| p.0));
    let n = sorted_copy(pairs.iter().map(|p| p.1));
    let (f5, f95) = (percentile_sorted(&f, T::cst(5.0)), percentile_sorted(&f, T::cst(95.0)));
    let (n5, n95) = (percentile_sorted(&n, T::cst(5.0)), percentile_sorted(&n, T::cst(95.0)));
    let len = T::from_usize_lossy(pairs.len());
    let (mf, mn) = (
        pairs.iter().map(|p| p.0).sum::<T>() / len,
        pairs.iter().map(|p| p.1).sum::<T>() / len,
    );
    let cov = pairs.iter().map(|p| (p.0 - mf) * (p.1 - mn)).sum::<T>();
    Some((f5, f95, n5, n95, cov))
}

/// Nearby angle mapped affinely onto the focal joint's P5-P95 range over
/// co-valid frames. `None` when there is no usable overlap.
pub fn scaled_surrogate<T: Real>(focal: &AngleSeries<T>, nearby: &AngleSeries<T>) -> Option<AngleSeries<T>> {
    let (f5, f95, n5, n95, cov) = co_valid_spans(focal, nearby)?;
    let nspan = n95 - n5;
    if !(nspan > T::zero()) {
        return None;
    }
    let ratio = (f95 - f5) / nspan;
    let map = |v: T| {
        if cov < T::zero() {
            f95 - (v - n5) * ratio
        } else {
            f5 + (v - n5) * ratio
        }
    };
    let samples = nearby
        .samples()
        .iter()
        .map(|s| AngleSample {
            timestamp: s.timestamp,
            angle: s.angle.map(map),
        })
        .collect();
    let joint = nearby.joint().clone();
    Some(AngleSeries::new(samples, joint, SourceMode::FallbackScaled, nearby.fps()))
}

/// Visibility-weighted per-frame mix of the focal and scaled nearby angles.
pub fn blended_surrogate<T: Real>(
    landmarks: &LandmarkSeries<T>,
    focal: &AngleSeries<T>,
    scaled_nearby: &AngleSeries<T>,
    nearby_joint: &JointTriple,
) -> AngleSeries<T> {
    let samples = landmarks
        .frames()
        .iter()
        .zip(focal.samples().iter().zip(scaled_nearby.samples()))
        .map(|(frame, (f, n))| {
            let wf = f.angle.map_or(T::zero(), |_| focal.joint().min_visibility(frame));
            let wn = n.angle.map_or(T::zero(), |_| nearby_joint.min_visibility(frame));
            let total = wf + wn;
            let angle = if total > T::zero() {
                Some((wf * f.angle.unwrap_or(T::zero()) + wn * n.angle.unwrap_or(T::zero())) / total)
            } else {
                None
            };
            AngleSample {
                timestamp: f.timestamp,
                angle,
            }
        })
        .collect();
    AngleSeries::new(samples, focal.joint().clone(), SourceMode::FallbackBlended, focal.fps())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoOutcome {
    pub video_id: String,
    pub side: BodySide,
    pub rep_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub n_videos: usize,
    pub side_accuracy: f64,
    pub mean_abs_deviation: f64,
    pub within_two_fraction: f64,
}

/// Compares predicted sides and repetition counts with annotations.
/// Every id must appear on both sides of the join.
pub fn evaluate_against_annotations(predictions: &[VideoOutcome], annotations: &[VideoOutcome]) -> Result<EvaluationReport> {
    let truth: BTreeMap<&str, &VideoOutcome> = annotations.iter().map(|a| (a.video_id.as_str(), a)).collect();
    let pred: BTreeMap<&str, &VideoOutcome> = predictions.iter().map(|p| (p.video_id.as_str(), p)).collect();
    let mut unmatched: Vec<String> = pred
        .keys()
        .filter(|k| !truth.contains_key(*k))
        .chain(truth.keys().filter(|k| !pred.contains_key(*k)))
        .map(|k| k.to_string())
        .collect();
    if !unmatched.is_empty() || pred.is_empty() {
        unmatched.sort();
        return Err(Error::Join(unmatched));
    }
    let n = pred.len() as f64;
    let (mut side_ok, mut dev, mut within) = (0usize, 0.0, 0usize);
    for (id, p) in &pred {
        let t = truth[id];
        side_ok += usize::from(p.side == t.side);
        let d = p.rep_count.abs_diff(t.rep_count);
        dev += d as f64;
        within += usize::from(d <= 2);
    }
    Ok(EvaluationReport {
        n_videos: pred.len(),
        side_accuracy: side_ok as f64 / n,
        mean_abs_deviation: dev / n,
        within_two_fraction: within as f64 / n,
    })
}
