use std::fmt;

use serde::{Deserialize, Serialize};

use super::metrics::{auc, balanced_accuracy, calibrate};
use super::BenchError;
use crate::dataset::ImageType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BinaryTask {
    PristineVsFully,
    PristineVsPartially,
    PristineVsAny,
    PartiallyVsFully,
}

impl BinaryTask {
    pub const ALL: [BinaryTask; 4] = [
        BinaryTask::PristineVsFully,
        BinaryTask::PristineVsPartially,
        BinaryTask::PristineVsAny,
        BinaryTask::PartiallyVsFully,
    ];

    /// `Some(true)` for the positive class, `None` when the image type is
    /// not part of the task.
    pub fn label(self, t: ImageType) -> Option<bool> {
        use ImageType::*;
        match (self, t) {
            (BinaryTask::PartiallyVsFully, Pristine) => None,
            (BinaryTask::PartiallyVsFully, t) => Some(t == PartiallyManipulated),
            (_, Pristine) => Some(false),
            (BinaryTask::PristineVsFully, t) => (t == FullySynthetic).then_some(true),
            (BinaryTask::PristineVsPartially, t) => (t == PartiallyManipulated).then_some(true),
            (BinaryTask::PristineVsAny, _) => Some(true),
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            BinaryTask::PristineVsFully => "Pristine v.s. Fully",
            BinaryTask::PristineVsPartially => "Pristine v.s. Partially",
            BinaryTask::PristineVsAny => "Pristine v.s. Any",
            BinaryTask::PartiallyVsFully => "Partially v.s. Fully",
        }
    }
}

impl fmt::Display for BinaryTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryResult {
    pub auc: f64,
    pub acc_original: f64,
    pub acc_calibrated: f64,
    pub original_threshold: f64,
    pub calibrated_threshold: f64,
    pub positives: usize,
    pub negatives: usize,
}

pub fn binary_task_eval(scores: &[f64], labels: &[bool], original_threshold: f64) -> Result<BinaryResult, BenchError> {
    if !original_threshold.is_finite() {
        return Err(BenchError::NonFinite { index: usize::MAX, value: original_threshold });
    }
    let (calibrated_threshold, acc_calibrated) = calibrate(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    Ok(BinaryResult {
        auc: auc(scores, labels)?,
        acc_original: balanced_accuracy(scores, labels, original_threshold)?,
        acc_calibrated,
        original_threshold,
        calibrated_threshold,
        positives,
        negatives: labels.len() - positives,
    })
}

/// Scores and labels of the items taking part in `task`.
pub fn task_subset(task: BinaryTask, scores: &[f64], types: &[ImageType]) -> (Vec<f64>, Vec<bool>) {
    scores
        .iter()
        .zip(types)
        .filter_map(|(&s, &t)| task.label(t).map(|l| (s, l)))
        .unzip()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Pristine unless the detector fires; then the splicer separates
    /// partial from fully synthetic.
    DetectorFirst,
    /// Partial if the splicer fires; otherwise the detector separates fully
    /// synthetic from pristine.
    SplicerFirst,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::DetectorFirst, Strategy::SplicerFirst];
}

pub fn decide(strategy: Strategy, detector_fires: bool, splicer_fires: bool) -> ImageType {
    match (strategy, detector_fires, splicer_fires) {
        (Strategy::DetectorFirst, false, _) => ImageType::Pristine,
        (Strategy::DetectorFirst, true, true) => ImageType::PartiallyManipulated,
        (Strategy::DetectorFirst, true, false) => ImageType::FullySynthetic,
        (Strategy::SplicerFirst, _, true) => ImageType::PartiallyManipulated,
        (Strategy::SplicerFirst, true, false) => ImageType::FullySynthetic,
        (Strategy::SplicerFirst, false, false) => ImageType::Pristine,
    }
}

fn class_index(t: ImageType) -> usize {
    match t {
        ImageType::Pristine => 0,
        ImageType::FullySynthetic => 1,
        ImageType::PartiallyManipulated => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeWayResult {
    pub strategy: Strategy,
    pub detector_threshold: f64,
    pub splicer_threshold: f64,
    /// Rows are true classes, columns predictions, both ordered pristine,
    /// fully synthetic, partially manipulated.
    pub confusion: [[usize; 3]; 3],
    /// `None` for classes absent from the data.
    pub per_class_accuracy: [Option<f64>; 3],
    /// Mean over the classes present.
    pub mean_accuracy: f64,
    #[serde(skip)]
    pub predictions: Vec<ImageType>,
}

pub fn hierarchical_3way(
    strategy: Strategy,
    detector_scores: &[f64],
    splicer_scores: &[f64],
    truth: &[ImageType],
    detector_threshold: Option<f64>,
    splicer_threshold: Option<f64>,
) -> Result<ThreeWayResult, BenchError> {
    let (Some(dt), Some(st)) = (detector_threshold, splicer_threshold) else {
        return Err(BenchError::MissingThreshold);
    };
    if detector_scores.len() != truth.len() || splicer_scores.len() != truth.len() {
        return Err(BenchError::Shape(format!(
            "{} detector scores, {} splicer scores, {} items",
            detector_scores.len(),
            splicer_scores.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(BenchError::SingleClass { positives: 0, negatives: 0 });
    }
    let predictions: Vec<ImageType> = detector_scores
        .iter()
        .zip(splicer_scores)
        .map(|(&d, &s)| decide(strategy, d >= dt, s >= st))
        .collect();
    let mut confusion = [[0usize; 3]; 3];
    for (&t, &p) in truth.iter().zip(&predictions) {
        confusion[class_index(t)][class_index(p)] += 1;
    }
    let per_class_accuracy: [Option<f64>; 3] = std::array::from_fn(|c| {
        let support: usize = confusion[c].iter().sum();
        (support > 0).then(|| confusion[c][c] as f64 / support as f64)
    });
    let present: Vec<f64> = per_class_accuracy.iter().flatten().copied().collect();
    Ok(ThreeWayResult {
        strategy,
        detector_threshold: dt,
        splicer_threshold: st,
        confusion,
        per_class_accuracy,
        mean_accuracy: present.iter().sum::<f64>() / present.len() as f64,
        predictions,
    })
}
