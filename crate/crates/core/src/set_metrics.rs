//! Per-set summaries of detected repetitions and the meta-regression design table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::{MetaDataset, MetaRow};
use crate::model::{BodySide, ExerciseKind, RomCondition, Sex};
use crate::num::Real;
use crate::segmentation::Repetition;
use crate::stats::mean_sd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    RepDuration,
    EccentricDuration,
    ConcentricDuration,
    RangeOfMotion,
    /// Log of the mean ROM; built only by [`build_log_rom_dataset`].
    LogMeanRom,
}

impl OutcomeKind {
    /// The four per-repetition outcomes.
    pub const MEASURED: [OutcomeKind; 4] = [
        OutcomeKind::RepDuration,
        OutcomeKind::EccentricDuration,
        OutcomeKind::ConcentricDuration,
        OutcomeKind::RangeOfMotion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::RepDuration => "rep_duration",
            OutcomeKind::EccentricDuration => "eccentric_duration",
            OutcomeKind::ConcentricDuration => "concentric_duration",
            OutcomeKind::RangeOfMotion => "range_of_motion",
            OutcomeKind::LogMeanRom => "log_mean_rom",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            OutcomeKind::RangeOfMotion => "deg",
            OutcomeKind::LogMeanRom => "log deg",
            _ => "s",
        }
    }

    /// Value of this outcome for one repetition.
    pub fn of<T: Real>(self, rep: &Repetition<T>) -> Result<T> {
        match self {
            OutcomeKind::RepDuration => Ok(rep.duration),
            OutcomeKind::EccentricDuration => Ok(rep.eccentric_duration),
            OutcomeKind::ConcentricDuration => Ok(rep.concentric_duration),
            OutcomeKind::RangeOfMotion => Ok(rep.rom),
            OutcomeKind::LogMeanRom => Err(Error::Validation(
                "log mean ROM is a set-level outcome, not a per-repetition value".into(),
            )),
        }
    }
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutcomeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        match key.as_str() {
            "repduration" | "duration" => Ok(OutcomeKind::RepDuration),
            "eccentricduration" | "eccentric" => Ok(OutcomeKind::EccentricDuration),
            "concentricduration" | "concentric" => Ok(OutcomeKind::ConcentricDuration),
            "rangeofmotion" | "rom" => Ok(OutcomeKind::RangeOfMotion),
            "logmeanrom" | "logrom" => Ok(OutcomeKind::LogMeanRom),
            _ => Err(Error::Format(format!("unknown outcome {s:?}"))),
        }
    }
}

/// Summary of one outcome over one set (or several pooled sets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSummary<T> {
    pub participant_id: String,
    pub exercise: ExerciseKind,
    pub rom_condition: RomCondition,
    /// Taken from participant metadata; required by [`build_dataset`].
    pub sex: Option<Sex>,
    pub outcome: OutcomeKind,
    pub mean: T,
    pub sd: T,
    pub k: usize,
    pub side_left_fraction: T,
}

impl<T: Real> SetSummary<T> {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InsufficientReps { k: self.k });
        }
        if !self.mean.is_finite() || !(self.sd >= T::zero()) || !self.sd.is_finite() {
            return Err(Error::Validation(format!(
                "summary for {}/{}/{}: mean must be finite and sd non-negative",
                self.participant_id, self.exercise, self.rom_condition
            )));
        }
        if !(self.side_left_fraction >= T::zero() && self.side_left_fraction <= T::one()) {
            return Err(Error::Validation("side_left_fraction outside [0, 1]".into()));
        }
        Ok(())
    }

    fn key(&self) -> (&str, &ExerciseKind, RomCondition, OutcomeKind) {
        (&self.participant_id, &self.exercise, self.rom_condition, self.outcome)
    }
}

/// Minimum detected repetitions for a video to contribute (two survive trimming).
pub const MIN_DETECTED_REPS: usize = 4;

/// Drops the first and last repetition; empty when fewer than three.
pub fn trim_repetitions<T: Clone>(reps: &[T]) -> Vec<T> {
    if reps.len() < 3 {
        return Vec::new();
    }
    reps[1..reps.len() - 1].to_vec()
}

/// Mean, sample sd and count of one outcome over already trimmed reps.
pub fn summarize_set<T: Real>(reps: &[Repetition<T>], outcome: OutcomeKind) -> Result<(T, T, usize)> {
    if reps.len() < 2 {
        return Err(Error::InsufficientReps { k: reps.len() });
    }
    let values = reps.iter().map(|r| outcome.of(r)).collect::<Result<Vec<T>>>()?;
    let (m, s) = mean_sd(&values);
    Ok((m, s, values.len()))
}

/// Summaries of every measured outcome for one video/set. The detected
/// repetitions are trimmed here.
pub fn summarize_video<T: Real>(
    participant_id: &str,
    exercise: &ExerciseKind,
    rom_condition: RomCondition,
    sex: Option<Sex>,
    side: BodySide,
    detected: &[Repetition<T>],
) -> Result<Vec<SetSummary<T>>> {
    if detected.len() < MIN_DETECTED_REPS {
        return Err(Error::InsufficientReps {
            k: detected.len().saturating_sub(2),
        });
    }
    let reps = trim_repetitions(detected);
    let left = if side == BodySide::Left { T::one() } else { T::zero() };
    OutcomeKind::MEASURED
        .iter()
        .map(|&outcome| {
            let (mean, sd, k) = summarize_set(&reps, outcome)?;
            Ok(SetSummary {
                participant_id: participant_id.to_string(),
                exercise: exercise.clone(),
                rom_condition,
                sex,
                outcome,
                mean,
                sd,
                k,
                side_left_fraction: left,
            })
        })
        .collect()
}

/// Pools records of the same participant, exercise, condition and outcome
/// as if their repetitions were concatenated.
pub fn aggregate_participant<T: Real>(records: &[SetSummary<T>]) -> Result<SetSummary<T>> {
    let first = records
        .first()
        .ok_or_else(|| Error::Aggregation("no records to aggregate".into()))?;
    if records.iter().any(|r| r.key() != first.key()) {
        return Err(Error::Aggregation(format!(
            "mixed keys in aggregation group of {}/{}/{}",
            first.participant_id, first.exercise, first.rom_condition
        )));
    }
    if records.len() == 1 {
        return Ok(first.clone());
    }
    let sex = records.iter().find_map(|r| r.sex);
    if records.iter().any(|r| r.sex.is_some() && r.sex != sex) {
        return Err(Error::Aggregation(format!(
            "conflicting sex for participant {}",
            first.participant_id
        )));
    }
    let total: usize = records.iter().map(|r| r.k).sum();
    let kt = T::from_usize_lossy(total);
    let mean = records.iter().map(|r| T::from_usize_lossy(r.k) * r.mean).sum::<T>() / kt;
    let ss: T = records
        .iter()
        .map(|r| {
            let k = T::from_usize_lossy(r.k);
            let d = r.mean - mean;
            (k - T::one()) * r.sd * r.sd + k * d * d
        })
        .sum();
    let sd = if total > 1 { (ss / (kt - T::one())).sqrt() } else { T::zero() };
    let left = records.iter().map(|r| T::from_usize_lossy(r.k) * r.side_left_fraction).sum::<T>() / kt;
    Ok(SetSummary {
        mean,
        sd,
        k: total,
        sex,
        side_left_fraction: left,
        ..first.clone()
    })
}

/// Aggregates every key with more than one record, preserving first-seen order.
pub fn aggregate_all<T: Real>(summaries: &[SetSummary<T>]) -> Result<Vec<SetSummary<T>>> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<(String, String, RomCondition, OutcomeKind), Vec<SetSummary<T>>> = BTreeMap::new();
    for s in summaries {
        let key = (s.participant_id.clone(), s.exercise.name().to_string(), s.rom_condition, s.outcome);
        let g = groups.entry(key.clone()).or_default();
        if g.is_empty() {
            order.push(key);
        }
        g.push(s.clone());
    }
    order.iter().map(|k| aggregate_participant(&groups[k])).collect()
}

/// Floor on the sampling-variance numerator for zero-sd sets: (0.1 unit)².
pub const ZERO_SD_FLOOR: f64 = 0.1;

/// Design table for one outcome: `σ² = s²/k`, zero-sd sets floored at
/// `0.01/k` and flagged. Fails on duplicate keys or missing sex.
pub fn build_dataset<T: Real>(summaries: &[SetSummary<T>]) -> Result<MetaDataset<T>> {
    build_rows(summaries, |s| {
        let k = T::from_usize_lossy(s.k);
        if s.sd > T::zero() {
            Ok((s.mean, s.sd * s.sd / k, false))
        } else {
            Ok((s.mean, T::cst(ZERO_SD_FLOOR * ZERO_SD_FLOOR) / k, true))
        }
    })
}

/// Design table on `log(R̄)` from range-of-motion summaries, with the
/// delta-method variance `s²/(k·R̄²)`; the zero-sd floor is applied on the
/// degree scale before transforming.
pub fn build_log_rom_dataset<T: Real>(summaries: &[SetSummary<T>]) -> Result<MetaDataset<T>> {
    build_rows(summaries, |s| {
        if s.outcome != OutcomeKind::RangeOfMotion {
            return Err(Error::Validation(format!(
                "log-ROM dataset needs range_of_motion summaries, got {}",
                s.outcome
            )));
        }
        if !(s.mean > T::zero()) {
            return Err(Error::Domain(format!(
                "mean ROM {} <= 0 for {}/{}/{}",
                s.mean, s.participant_id, s.exercise, s.rom_condition
            )));
        }
        let k = T::from_usize_lossy(s.k);
        let (sd, floored) = if s.sd > T::zero() {
            (s.sd, false)
        } else {
            (T::cst(ZERO_SD_FLOOR), true)
        };
        Ok((s.mean.ln(), sd * sd / (k * s.mean * s.mean), floored))
    })
}

fn build_rows<T: Real>(summaries: &[SetSummary<T>], f: impl Fn(&SetSummary<T>) -> Result<(T, T, bool)>) -> Result<MetaDataset<T>> {
    let mut seen = BTreeMap::new();
    let mut rows = Vec::with_capacity(summaries.len());
    for s in summaries {
        s.validate()?;
        let key = (s.participant_id.clone(), s.exercise.name().to_string(), s.rom_condition, s.outcome);
        if seen.insert(key, ()).is_some() {
            return Err(Error::Build(format!(
                "duplicate summary for {}/{}/{}/{}; aggregate first",
                s.participant_id, s.exercise, s.rom_condition, s.outcome
            )));
        }
        let sex = s
            .sex
            .ok_or_else(|| Error::Build(format!("participant {} has no sex in the metadata", s.participant_id)))?;
        let (y, sigma2, floored) = f(s)?;
        rows.push(MetaRow {
            participant: s.participant_id.clone(),
            exercise: s.exercise.name().to_string(),
            partial: s.rom_condition.is_partial(),
            female: sex == Sex::F,
            y,
            sigma2,
            floored,
        });
    }
    let outcomes: std::collections::BTreeSet<_> = summaries.iter().map(|s| s.outcome).collect();
    if outcomes.len() > 1 {
        return Err(Error::Build("summaries mix several outcomes; build one dataset per outcome".into()));
    }
    MetaDataset::new(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSd<T> {
    pub mean: T,
    pub sd: T,
}

/// One row of the descriptive table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescriptiveRow<T> {
    pub exercise: String,
    pub rom_condition: RomCondition,
    /// Pooled over all repetitions of the cell.
    pub outcomes: BTreeMap<OutcomeKind, MeanSd<T>>,
    pub sets: usize,
    pub mean_reps_per_set: T,
    /// Share of sets filmed from the left side.
    pub left_side_proportion: T,
}

/// Rep-weighted means and pooled sds per exercise and condition.
pub fn descriptive_table<T: Real>(summaries: &[SetSummary<T>]) -> Result<Vec<DescriptiveRow<T>>> {
    let mut cells: BTreeMap<(String, RomCondition), BTreeMap<OutcomeKind, Vec<SetSummary<T>>>> = BTreeMap::new();
    for s in summaries {
        cells
            .entry((s.exercise.name().to_string(), s.rom_condition))
            .or_default()
            .entry(s.outcome)
            .or_default()
            .push(s.clone());
    }
    let mut out = Vec::with_capacity(cells.len());
    for ((exercise, cond), by_outcome) in cells {
        let mut outcomes = BTreeMap::new();
        for (outcome, recs) in &by_outcome {
            // pool as one participant so the key check passes
            let relabeled: Vec<SetSummary<T>> = recs
                .iter()
                .map(|r| SetSummary {
                    participant_id: String::new(),
                    sex: None,
                    ..r.clone()
                })
                .collect();
            let pooled = aggregate_participant(&relabeled)?;
            outcomes.insert(
                *outcome,
                MeanSd {
                    mean: pooled.mean,
                    sd: pooled.sd,
                },
            );
        }
        let reference = by_outcome.values().next().expect("non-empty cell");
        let n = T::from_usize_lossy(reference.len());
        out.push(DescriptiveRow {
            exercise,
            rom_condition: cond,
            outcomes,
            sets: reference.len(),
            mean_reps_per_set: reference.iter().map(|r| T::from_usize_lossy(r.k)).sum::<T>() / n,
            left_side_proportion: reference.iter().map(|r| r.side_left_fraction).sum::<T>() / n,
        });
    }
    Ok(out)
}
