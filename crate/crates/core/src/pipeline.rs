//! Landmarks to angle signal to repetitions to set summaries, per video.

use std::collections::BTreeMap;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::kinematics::{select_signal, AngleSeries, JointMap};
use crate::model::{BodySide, LandmarkSeries, Sex};
use crate::segmentation::{fallback_signal, SegmentedSignal, VideoOutcome};
use crate::set_metrics::{aggregate_all, summarize_video, trim_repetitions, SetSummary};

#[derive(Debug, Clone, PartialEq)]
pub struct VideoAnalysis {
    pub video_id: String,
    /// Selected raw signal before conditioning.
    pub raw: AngleSeries<f64>,
    pub segmented: SegmentedSignal<f64>,
}

impl VideoAnalysis {
    pub fn side(&self) -> BodySide {
        self.segmented.series.side()
    }

    pub fn outcome(&self) -> VideoOutcome {
        VideoOutcome {
            video_id: self.video_id.clone(),
            side: self.side(),
            rep_count: self.segmented.detection.repetitions.len(),
        }
    }
}

/// Signal selection, conditioning and repetition detection for one video.
pub fn analyze_video(landmarks: &LandmarkSeries<f64>, cfg: &PipelineConfig, joints: &JointMap) -> Result<VideoAnalysis> {
    let exercise = landmarks.exercise();
    let selection = cfg.signal.selection();
    let raw = select_signal(landmarks, exercise, joints, &selection)?;
    let segmented = fallback_signal(
        landmarks,
        &raw,
        &cfg.signal.smoothing(),
        &cfg.segmentation,
        &selection,
        exercise.lengthening(),
    )?;
    Ok(VideoAnalysis {
        video_id: landmarks.video_id().to_string(),
        raw,
        segmented,
    })
}

/// Angle series only: the selected signal after gap filling and smoothing.
pub fn conditioned_angles(landmarks: &LandmarkSeries<f64>, cfg: &PipelineConfig, joints: &JointMap) -> Result<AngleSeries<f64>> {
    let raw = select_signal(landmarks, landmarks.exercise(), joints, &cfg.signal.selection())?;
    crate::signal::condition(&raw, &cfg.signal.smoothing())
}

/// Set summaries of one analysed video (trimmed reps, every measured outcome).
pub fn video_summaries(
    landmarks: &LandmarkSeries<f64>,
    analysis: &VideoAnalysis,
    participants: Option<&BTreeMap<String, Sex>>,
) -> Result<Vec<SetSummary<f64>>> {
    let pid = landmarks.participant_id();
    let sex = match participants {
        Some(map) => Some(
            *map.get(pid)
                .ok_or_else(|| Error::Build(format!("participant {pid:?} missing from metadata")))?,
        ),
        None => None,
    };
    summarize_video(
        pid,
        landmarks.exercise(),
        landmarks.rom_condition(),
        sex,
        analysis.side(),
        &analysis.segmented.detection.repetitions,
    )
}

/// Repetitions that enter the summaries, with the index of the first one.
pub fn summarized_repetitions(analysis: &VideoAnalysis) -> (usize, Vec<crate::segmentation::Repetition<f64>>) {
    let reps = trim_repetitions(&analysis.segmented.detection.repetitions);
    (usize::from(!reps.is_empty()), reps)
}

/// Per-video failures are collected rather than aborting the batch.
#[derive(Debug, Default)]
pub struct BatchSummaries {
    pub summaries: Vec<SetSummary<f64>>,
    pub analyses: Vec<VideoAnalysis>,
    pub failures: Vec<(String, Error)>,
}

/// Runs every video and pools summaries per participant, exercise, condition
/// and outcome. Videos are processed in input order.
pub fn summarize_batch(
    videos: &[LandmarkSeries<f64>],
    cfg: &PipelineConfig,
    joints: &JointMap,
    participants: Option<&BTreeMap<String, Sex>>,
) -> Result<BatchSummaries> {
    let mut out = BatchSummaries::default();
    let mut per_video = Vec::new();
    for v in videos {
        match analyze_video(v, cfg, joints).and_then(|a| video_summaries(v, &a, participants).map(|s| (a, s))) {
            Ok((a, s)) => {
                out.analyses.push(a);
                per_video.extend(s);
            }
            Err(e) => out.failures.push((v.video_id().to_string(), e)),
        }
    }
    out.summaries = aggregate_all(&per_video)?;
    Ok(out)
}
