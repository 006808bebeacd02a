//! Evaluation harness for third-party detectors and localizers over a
//! dataset manifest: four binary tasks with threshold calibration, two
//! cascaded three-way classifiers and size-bucketed localization MCC.
//!
//! Accuracies are balanced (mean of per-class accuracies). Localization MCC
//! is computed per image and averaged within size buckets unless pooled
//! aggregation is requested.

mod adapters;
mod localize;
pub mod metrics;
mod report;
mod tasks;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetManifest, ImageType, Split, TypeCounts};
use crate::image::sha256_hex;
use crate::maskgen::SizeClass;

pub use adapters::{
    bench_items, reference_detectors, reference_localizers, AdapterRole, BenchItem, DetectorAdapter, Heatmap,
    LocalizerAdapter, OracleDetector, OracleLocalizer, RandomDetector, RandomLocalizer, ResidualEnergyDetector,
    ResidualLocalizer,
};
pub use localize::{
    check_heatmap, localization_eval, localization_scores, Aggregation, BucketRow, LocalizationResult,
    LocalizationScores, ThresholdMode, THRESHOLD_STEP,
};
pub use metrics::{auc, balanced_accuracy, calibrate, twice_u, Confusion};
pub use tasks::{binary_task_eval, decide, hierarchical_3way, task_subset, BinaryResult, BinaryTask, Strategy, ThreeWayResult};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("both classes required ({positives} positives, {negatives} negatives)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("value {value} at index {index} is not finite or out of range")]
    NonFinite { index: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("three-way classification needs a threshold for both adapters")]
    MissingThreshold,
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome<T> {
    Evaluated { result: T },
    Skipped { reason: String },
    Failed { error: String },
}

impl<T> Outcome<T> {
    pub fn result(&self) -> Option<&T> {
        match self {
            Outcome::Evaluated { result } => Some(result),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterFailure {
    pub adapter: String,
    pub item: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub adapter: String,
    pub role: AdapterRole,
    pub task: BinaryTask,
    pub outcome: Outcome<BinaryResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeWayEntry {
    pub detector: String,
    pub splicer: String,
    pub strategy: Strategy,
    pub outcome: Outcome<ThreeWayResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationEntry {
    pub localizer: String,
    pub calibrated: Outcome<LocalizationResult>,
    pub fixed: Outcome<LocalizationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSection {
    pub skipped: Option<String>,
    pub entries: Vec<LocalizationEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub schema_version: u32,
    pub manifest_digest: String,
    pub split: Split,
    pub counts: TypeCounts,
    pub accuracy_averaging: String,
    pub mcc_aggregation: Aggregation,
    pub three_way_thresholds: String,
    pub size_classes: Vec<SizeClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub binary: Vec<TaskEntry>,
    pub three_way: Vec<ThreeWayEntry>,
    pub localization: LocalizationSection,
    pub errors: Vec<AdapterFailure>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn binary_result(&self, adapter: &str, task: BinaryTask) -> Option<&BinaryResult> {
        self.binary.iter().find(|e| e.adapter == adapter && e.task == task).and_then(|e| e.outcome.result())
    }

    pub fn render_text(&self) -> String {
        report::render(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub aggregation: Aggregation,
    /// Calibrate the three-way thresholds on the evaluated data instead of
    /// using each adapter's original threshold.
    pub calibrate_three_way: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { aggregation: Aggregation::PerImage, calibrate_three_way: true }
    }
}

struct Scored<'a> {
    adapter: &'a dyn DetectorAdapter,
    scores: Option<Vec<f64>>,
}

fn score_adapter<'a>(adapter: &'a dyn DetectorAdapter, items: &[BenchItem], errors: &mut Vec<AdapterFailure>) -> Scored<'a> {
    let mut scores = Vec::with_capacity(items.len());
    let mut failed = false;
    for (it, r) in items.iter().zip(adapter.score_all(items)) {
        match r {
            Ok(s) if s.is_finite() => scores.push(s),
            Ok(s) => {
                failed = true;
                errors.push(AdapterFailure {
                    adapter: adapter.name().into(),
                    item: Some(it.id().into()),
                    detail: format!("non-finite score {s}"),
                });
            }
            Err(e) => {
                failed = true;
                errors.push(AdapterFailure { adapter: adapter.name().into(), item: Some(it.id().into()), detail: e });
            }
        }
    }
    Scored { adapter, scores: (!failed).then_some(scores) }
}

fn missing_class_reason(task: BinaryTask, labels: &[bool]) -> Option<String> {
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    (p == 0 || n == 0).then(|| format!("{task}: {p} positive and {n} negative images"))
}

pub fn run_binary_tasks(scored: &[(&dyn DetectorAdapter, Option<&[f64]>)], types: &[ImageType]) -> Vec<TaskEntry> {
    let mut out = Vec::new();
    for &(adapter, scores) in scored {
        for &task in adapter.role().tasks() {
            let outcome = match scores {
                None => Outcome::Failed { error: format!("{} could not score every image", adapter.name()) },
                Some(scores) => {
                    let (s, l) = task_subset(task, scores, types);
                    match missing_class_reason(task, &l) {
                        Some(reason) => Outcome::Skipped { reason },
                        None => match binary_task_eval(&s, &l, adapter.original_threshold()) {
                            Ok(result) => Outcome::Evaluated { result },
                            Err(e) => Outcome::Failed { error: e.to_string() },
                        },
                    }
                }
            };
            out.push(TaskEntry { adapter: adapter.name().into(), role: adapter.role(), task, outcome });
        }
    }
    out
}

fn three_way_thresholds(
    det: (&dyn DetectorAdapter, &[f64]),
    spl: (&dyn DetectorAdapter, &[f64]),
    types: &[ImageType],
    calibrated: bool,
) -> Result<(f64, f64), String> {
    if !calibrated {
        return Ok((det.0.original_threshold(), spl.0.original_threshold()));
    }
    let synthetic: Vec<bool> = types.iter().map(|&t| t != ImageType::Pristine).collect();
    let spliced: Vec<bool> = types.iter().map(|&t| t == ImageType::PartiallyManipulated).collect();
    let d = calibrate(det.1, &synthetic).map_err(|e| format!("detector calibration: {e}"))?;
    let s = calibrate(spl.1, &spliced).map_err(|e| format!("splicer calibration: {e}"))?;
    Ok((d.0, s.0))
}

pub fn evaluate(
    manifest: &DatasetManifest,
    data_root: &Path,
    detectors: &[Box<dyn DetectorAdapter>],
    localizers: &[Box<dyn LocalizerAdapter>],
    cfg: &EvalConfig,
) -> EvalReport {
    let items = bench_items(manifest, data_root);
    let types: Vec<ImageType> = items.iter().map(|i| i.record.image_type).collect();
    let mut errors = Vec::new();

    let scored: Vec<Scored> = detectors.iter().map(|d| score_adapter(d.as_ref(), &items, &mut errors)).collect();
    let view: Vec<(&dyn DetectorAdapter, Option<&[f64]>)> =
        scored.iter().map(|s| (s.adapter, s.scores.as_deref())).collect();
    let binary = run_binary_tasks(&view, &types);

    let mut three_way = Vec::new();
    for det in scored.iter().filter(|s| s.adapter.role().detects()) {
        for spl in scored.iter().filter(|s| s.adapter.role().splices()) {
            for strategy in Strategy::ALL {
                let outcome = match (&det.scores, &spl.scores) {
                    (Some(ds), Some(ss)) if !types.is_empty() => {
                        match three_way_thresholds((det.adapter, ds), (spl.adapter, ss), &types, cfg.calibrate_three_way) {
                            Ok((dt, st)) => match hierarchical_3way(strategy, ds, ss, &types, Some(dt), Some(st)) {
                                Ok(result) => Outcome::Evaluated { result },
                                Err(e) => Outcome::Failed { error: e.to_string() },
                            },
                            Err(reason) => Outcome::Skipped { reason },
                        }
                    }
                    (Some(_), Some(_)) => Outcome::Skipped { reason: "manifest has no images".into() },
                    _ => Outcome::Failed { error: "adapter could not score every image".into() },
                };
                three_way.push(ThreeWayEntry {
                    detector: det.adapter.name().into(),
                    splicer: spl.adapter.name().into(),
                    strategy,
                    outcome,
                });
            }
        }
    }

    let partial: Vec<BenchItem> = items.iter().filter(|i| i.mask_path.is_some()).cloned().collect();
    let localization = if localizers.is_empty() {
        LocalizationSection { skipped: Some("no localizer given".into()), entries: vec![] }
    } else if partial.is_empty() {
        LocalizationSection { skipped: Some("no partially manipulated images".into()), entries: vec![] }
    } else {
        let masks: Result<Vec<_>, BenchError> =
            partial.iter().map(|i| i.load_mask().map(|m| m.expect("partial items carry masks"))).collect();
        match masks {
            Err(e) => LocalizationSection { skipped: Some(format!("cannot load masks: {e}")), entries: vec![] },
            Ok(masks) => {
                let classes: Vec<SizeClass> =
                    partial.iter().map(|i| i.record.size_class.unwrap_or(SizeClass::XSmall)).collect();
                let entries = localizers
                    .iter()
                    .map(|loc| localize_one(loc.as_ref(), &partial, &masks, &classes, cfg.aggregation, &mut errors))
                    .collect();
                LocalizationSection { skipped: None, entries }
            }
        }
    };

    EvalReport {
        meta: ReportMeta {
            schema_version: REPORT_SCHEMA_VERSION,
            manifest_digest: manifest.digest(),
            split: manifest.header.split,
            counts: manifest.counts(),
            accuracy_averaging: "macro".into(),
            mcc_aggregation: cfg.aggregation,
            three_way_thresholds: if cfg.calibrate_three_way { "calibrated" } else { "original" }.into(),
            size_classes: SizeClass::ALL.to_vec(),
        },
        binary,
        three_way,
        localization,
        errors,
    }
}

fn localize_one(
    loc: &dyn LocalizerAdapter,
    items: &[BenchItem],
    masks: &[crate::image::Bitmap],
    classes: &[SizeClass],
    aggregation: Aggregation,
    errors: &mut Vec<AdapterFailure>,
) -> LocalizationEntry {
    let mut heatmaps = Vec::with_capacity(items.len());
    let mut failure = None;
    for ((it, r), m) in items.iter().zip(loc.heatmap_all(items)).zip(masks) {
        let r = r.and_then(|h| check_heatmap(&h, m).map(|_| h).map_err(|e| e.to_string()));
        match r {
            Ok(h) => heatmaps.push(h),
            Err(e) => {
                errors.push(AdapterFailure { adapter: loc.name().into(), item: Some(it.id().into()), detail: e.clone() });
                failure.get_or_insert(e);
            }
        }
    }
    let run = |mode| match &failure {
        Some(e) => Outcome::Failed { error: e.clone() },
        None => match localization_eval(&heatmaps, masks, classes, mode, aggregation) {
            Ok(result) => Outcome::Evaluated { result },
            Err(e) => Outcome::Failed { error: e.to_string() },
        },
    };
    LocalizationEntry {
        localizer: loc.name().into(),
        calibrated: run(ThresholdMode::Calibrated),
        fixed: run(ThresholdMode::Fixed(loc.fixed_threshold())),
    }
}
