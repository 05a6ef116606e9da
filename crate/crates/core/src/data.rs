//! Longitudinal datasets: subjects with repeated `(time, outcome)` measurements.

use std::collections::HashSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{BablrError, Result};

/// Repeated measurements for one subject, sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub times: Vec<f64>,
    pub outcomes: Vec<f64>,
}

impl SubjectRecord {
    pub fn new(id: impl Into<String>, times: Vec<f64>, outcomes: Vec<f64>) -> Self {
        Self { id: id.into(), times, outcomes }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// A single observation removed from a dataset for out-of-sample checks.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutObservation {
    pub subject_id: String,
    pub time: f64,
    pub outcome: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LongitudinalDataset {
    subjects: Vec<SubjectRecord>,
}

impl LongitudinalDataset {
    /// Validates and wraps a list of subjects.
    ///
    /// Subjects with fewer than three observations are accepted with a warning.
    pub fn new(subjects: Vec<SubjectRecord>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(BablrError::InvalidData("empty dataset".into()));
        }
        let mut seen = HashSet::with_capacity(subjects.len());
        for s in &subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(BablrError::InvalidData(format!("duplicate subject id `{}`", s.id)));
            }
            if s.times.len() != s.outcomes.len() {
                return Err(BablrError::InvalidData(format!(
                    "subject `{}` has {} times but {} outcomes",
                    s.id,
                    s.times.len(),
                    s.outcomes.len()
                )));
            }
            if s.is_empty() {
                return Err(BablrError::InvalidData(format!("subject `{}` has no observations", s.id)));
            }
            if s.times.iter().chain(&s.outcomes).any(|v| !v.is_finite()) {
                return Err(BablrError::InvalidData(format!("subject `{}` has non-finite values", s.id)));
            }
            if s.times.windows(2).any(|w| w[1] < w[0]) {
                return Err(BablrError::InvalidData(format!(
                    "subject `{}` has decreasing observation times",
                    s.id
                )));
            }
            if s.len() < 3 {
                log::warn!("subject `{}` has only {} observation(s)", s.id, s.len());
            }
        }
        Ok(Self { subjects })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_observations(&self) -> usize {
        self.subjects.iter().map(SubjectRecord::len).sum()
    }

    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.subjects.iter().position(|s| s.id == id)
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }

    /// Same subjects with every observation removed. Useful for evaluating
    /// the prior part of the posterior on a fixed parameter layout.
    pub fn without_observations(&self) -> Self {
        Self {
            subjects: self
                .subjects
                .iter()
                .map(|s| SubjectRecord::new(s.id.clone(), Vec::new(), Vec::new()))
                .collect(),
        }
    }

    /// Removes the last observation of a random `fraction` of the subjects that
    /// have at least `min_remaining + 1` observations.
    pub fn hold_out_last(
        &self,
        fraction: f64,
        min_remaining: usize,
        seed: u64,
    ) -> Result<(Self, Vec<HeldOutObservation>)> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(BablrError::InvalidArgument(format!(
                "holdout fraction {fraction} outside [0, 1]"
            )));
        }
        let eligible: Vec<usize> = (0..self.subjects.len())
            .filter(|&i| self.subjects[i].len() > min_remaining.max(1))
            .collect();
        let n_pick = (fraction * self.subjects.len() as f64).round() as usize;
        let n_pick = n_pick.min(eligible.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen: Vec<usize> = index::sample(&mut rng, eligible.len(), n_pick)
            .into_iter()
            .map(|k| eligible[k])
            .collect();
        chosen.sort_unstable();

        let mut subjects = self.subjects.clone();
        let mut heldout = Vec::with_capacity(chosen.len());
        for &i in &chosen {
            let s = &mut subjects[i];
            let time = s.times.pop().expect("eligible subject has observations");
            let outcome = s.outcomes.pop().expect("eligible subject has observations");
            heldout.push(HeldOutObservation { subject_id: s.id.clone(), time, outcome });
        }
        Ok((Self { subjects }, heldout))
    }
}
