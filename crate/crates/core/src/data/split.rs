use serde::{Deserialize, Serialize};

use super::{FeatureFrame, FeatureMatrix};
use crate::error::{dim_err, Error, Result};

/// A contiguous block of wall-clock hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub hours: u64,
    /// Labeled spans keep only rows with a reference value; unlabeled spans
    /// keep every row and drop the labels.
    pub labeled: bool,
}

/// Cuts `frame` into consecutive time spans starting at its first timestamp.
/// Rows are never reordered. Fails, without returning any split, when the
/// frame does not cover the requested hours.
pub fn chronological_split(frame: &FeatureFrame, spans: &[Span]) -> Result<Vec<FeatureMatrix>> {
    let (Some(&first), Some(&last)) = (frame.timestamps.first(), frame.timestamps.last()) else {
        return Err(Error::Data("cannot split an empty frame".into()));
    };
    let total: u64 = spans.iter().map(|s| s.hours).sum();
    let covered = ((last - first) / 3600 + 1) as u64;
    if total > covered {
        return Err(Error::Data(format!(
            "splits need {total} hours but the frame covers {covered}"
        )));
    }
    let mut out = Vec::with_capacity(spans.len());
    let mut start = first;
    let mut row = 0;
    for span in spans {
        let end = start + span.hours as i64 * 3600;
        let mut idx = Vec::new();
        while row < frame.len() && frame.timestamps[row] < end {
            if !span.labeled || frame.labels[row].is_some() {
                idx.push(row);
            }
            row += 1;
        }
        let y = span.labeled.then(|| idx.iter().map(|&i| frame.labels[i].unwrap()).collect());
        let mut m = FeatureMatrix::new(
            frame.names.clone(),
            idx.iter().map(|&i| frame.timestamps[i]).collect(),
            frame.x.select_rows(&idx),
            y,
        )?;
        m.uncalibrated = frame.uncalibrated.as_ref().map(|u| idx.iter().map(|&i| u[i]).collect());
        out.push(m);
        start = end;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDurations {
    pub train_hours: u64,
    pub val_hours: u64,
    pub test_hours: u64,
}

impl Default for SourceDurations {
    /// 52 / 14 / 14 days.
    fn default() -> Self {
        Self { train_hours: 52 * 24, val_hours: 14 * 24, test_hours: 14 * 24 }
    }
}

/// Target-location durations, in order: labeled, unlabeled, validation, test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetDurations {
    pub labeled_hours: u64,
    pub unlabeled_hours: u64,
    pub val_hours: u64,
    pub test_hours: u64,
}

impl TargetDurations {
    /// Unlabeled/validation/test durations of target locations 1..=10 of the
    /// Mumbai co-location study, with a 2-day labeled block.
    pub fn study_location(loc: usize) -> Option<Self> {
        let d = |days: u64, hours: u64| days * 24 + hours;
        let (u, v, t) = match loc {
            1 | 2 | 3 | 5 | 8 => (d(38, 0), d(7, 0), d(25, 0)),
            4 => (d(38, 0), d(7, 0), d(16, 15)),
            6 => (d(25, 0), d(7, 0), d(10, 8)),
            7 => (d(16, 15), d(5, 0), d(10, 0)),
            9 => (d(22, 0), d(4, 15), d(11, 2)),
            10 => (d(38, 0), d(7, 0), d(7, 15)),
            _ => return None,
        };
        Some(Self { labeled_hours: 48, unlabeled_hours: u, val_hours: v, test_hours: t })
    }
}

/// All splits for one source and one target location.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub source_train: FeatureMatrix,
    pub source_val: FeatureMatrix,
    pub source_test: FeatureMatrix,
    pub target_labeled: FeatureMatrix,
    pub target_unlabeled: FeatureMatrix,
    pub target_val: FeatureMatrix,
    pub target_test: FeatureMatrix,
}

impl SplitBundle {
    pub fn from_frames(
        source: &FeatureFrame,
        sd: &SourceDurations,
        target: &FeatureFrame,
        td: &TargetDurations,
    ) -> Result<Self> {
        let lab = |hours| Span { hours, labeled: true };
        let s = chronological_split(source, &[lab(sd.train_hours), lab(sd.val_hours), lab(sd.test_hours)])?;
        let t = chronological_split(
            target,
            &[
                lab(td.labeled_hours),
                Span { hours: td.unlabeled_hours, labeled: false },
                lab(td.val_hours),
                lab(td.test_hours),
            ],
        )?;
        let mut s = s.into_iter();
        let mut t = t.into_iter();
        let bundle = Self {
            source_train: s.next().unwrap(),
            source_val: s.next().unwrap(),
            source_test: s.next().unwrap(),
            target_labeled: t.next().unwrap(),
            target_unlabeled: t.next().unwrap(),
            target_val: t.next().unwrap(),
            target_test: t.next().unwrap(),
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn dim(&self) -> usize {
        self.source_train.dim()
    }

    pub fn parts(&self) -> [(&'static str, &FeatureMatrix); 7] {
        [
            ("source_train", &self.source_train),
            ("source_val", &self.source_val),
            ("source_test", &self.source_test),
            ("target_labeled", &self.target_labeled),
            ("target_unlabeled", &self.target_unlabeled),
            ("target_val", &self.target_val),
            ("target_test", &self.target_test),
        ]
    }

    /// Checks widths and which splits carry labels.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for (name, part) in self.parts() {
            if part.dim() != d {
                return dim_err(format!("{name} has {} features, source_train {d}", part.dim()));
            }
            let want_labels = name != "target_unlabeled";
            if part.y.is_some() != want_labels {
                return Err(Error::Data(format!(
                    "{name} should {}carry labels",
                    if want_labels { "" } else { "not " }
                )));
            }
        }
        Ok(())
    }
}
