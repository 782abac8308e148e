use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::Real;

/// One (participant, exercise, condition) observation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetaRow<T> {
    pub participant: String,
    pub exercise: String,
    /// `true` for the partial-ROM condition.
    pub partial: bool,
    pub female: bool,
    pub y: T,
    /// Known sampling variance.
    pub sigma2: T,
    /// Set when `sigma2` came from the zero-variance floor.
    pub floored: bool,
}

impl<T: Real> MetaRow<T> {
    pub fn weight(&self) -> T {
        T::one() / self.sigma2
    }
}

/// Design table for the crossed meta-regression.
///
/// Rows are stored in canonical order (participant, exercise, condition), so
/// any permutation of the same rows yields an identical dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetaDataset<T> {
    rows: Vec<MetaRow<T>>,
    participants: Vec<String>,
    exercises: Vec<String>,
    participant_index: Vec<usize>,
    exercise_index: Vec<usize>,
}

impl<T: Real> MetaDataset<T> {
    pub fn new(mut rows: Vec<MetaRow<T>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("meta dataset has no rows".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if !r.y.is_finite() {
                return Err(Error::Validation(format!("row {i}: outcome is not finite")));
            }
            if !(r.sigma2 > T::zero()) || !r.sigma2.is_finite() {
                return Err(Error::Validation(format!("row {i}: sampling variance must be positive and finite")));
            }
        }
        rows.sort_by(|a, b| (&a.participant, &a.exercise, a.partial).cmp(&(&b.participant, &b.exercise, b.partial)));
        for w in rows.windows(2) {
            if (&w[0].participant, &w[0].exercise, w[0].partial) == (&w[1].participant, &w[1].exercise, w[1].partial) {
                return Err(Error::Build(format!(
                    "duplicate row for participant {}, exercise {}, {}",
                    w[0].participant,
                    w[0].exercise,
                    if w[0].partial { "pROM" } else { "fROM" }
                )));
            }
        }
        let mut sex: BTreeMap<&str, bool> = BTreeMap::new();
        for r in &rows {
            if let Some(&f) = sex.get(r.participant.as_str()) {
                if f != r.female {
                    return Err(Error::Validation(format!(
                        "participant {} has inconsistent sex across rows",
                        r.participant
                    )));
                }
            }
            sex.insert(&r.participant, r.female);
        }
        let participants: Vec<String> = rows
            .iter()
            .map(|r| r.participant.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let exercises: Vec<String> = rows
            .iter()
            .map(|r| r.exercise.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pmap: BTreeMap<&str, usize> = participants.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let emap: BTreeMap<&str, usize> = exercises.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let participant_index = rows.iter().map(|r| pmap[r.participant.as_str()]).collect();
        let exercise_index = rows.iter().map(|r| emap[r.exercise.as_str()]).collect();
        Ok(Self {
            rows,
            participants,
            exercises,
            participant_index,
            exercise_index,
        })
    }

    pub fn rows(&self) -> &[MetaRow<T>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn participants(&self) -> &[String] {
        &self.participants
    }

    pub fn exercises(&self) -> &[String] {
        &self.exercises
    }

    /// Dense participant index of each row.
    pub fn participant_index(&self) -> &[usize] {
        &self.participant_index
    }

    /// Dense exercise index of each row.
    pub fn exercise_index(&self) -> &[usize] {
        &self.exercise_index
    }

    pub fn y(&self) -> Vec<T> {
        self.rows.iter().map(|r| r.y).collect()
    }

    /// Same design, new outcomes (in canonical row order).
    pub fn with_y(&self, y: &[T]) -> Self {
        assert_eq!(y.len(), self.rows.len());
        let mut out = self.clone();
        for (r, &v) in out.rows.iter_mut().zip(y) {
            r.y = v;
        }
        out
    }

    /// Mean sampling variance over rows of one condition.
    pub fn mean_sigma2(&self, partial: bool) -> T {
        let v: Vec<T> = self.rows.iter().filter(|r| r.partial == partial).map(|r| r.sigma2).collect();
        if v.is_empty() {
            return T::zero();
        }
        v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len())
    }
}
