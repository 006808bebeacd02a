use serde::{Deserialize, Serialize};

use super::adapters::Heatmap;
use super::metrics::Confusion;
use super::BenchError;
use crate::image::Bitmap;
use crate::maskgen::SizeClass;

/// Step of the threshold grid searched during calibration.
pub const THRESHOLD_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// MCC per image, averaged within each bucket.
    #[default]
    PerImage,
    /// Pixel counts pooled within each bucket, one MCC per bucket.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Calibrated,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub size_class: SizeClass,
    pub images: usize,
    pub mcc: Option<f64>,
    /// Images (or pooled buckets) whose MCC was undefined and counted as 0.
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationScores {
    pub rows: Vec<BucketRow>,
    pub overall: f64,
    pub images: usize,
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub mode: ThresholdMode,
    pub aggregation: Aggregation,
    pub threshold: f64,
    /// Whether scoring `1 - heatmap` gave the better overall MCC.
    pub inverted: bool,
    pub scores: LocalizationScores,
    /// Same threshold without polarity correction.
    pub uninverted: LocalizationScores,
}

pub fn check_heatmap(h: &Heatmap, mask: &Bitmap) -> Result<(), BenchError> {
    if (h.width, h.height) != (mask.width, mask.height) || h.values.len() != mask.len() {
        return Err(BenchError::Shape(format!(
            "heatmap {}x{} ({} values) vs mask {}x{}",
            h.width,
            h.height,
            h.values.len(),
            mask.width,
            mask.height
        )));
    }
    if let Some(i) = h.values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(BenchError::NonFinite { index: i, value: h.values[i] });
    }
    Ok(())
}

pub fn localization_scores(
    heatmaps: &[Heatmap],
    masks: &[Bitmap],
    classes: &[SizeClass],
    threshold: f64,
    inverted: bool,
    aggregation: Aggregation,
) -> LocalizationScores {
    let confusions: Vec<Confusion> =
        heatmaps.iter().zip(masks).map(|(h, m)| Confusion::from_masks(&h.binarize(threshold, inverted), &m.bits)).collect();
    let mut degenerate = 0;
    let rows: Vec<BucketRow> = SizeClass::ALL
        .iter()
        .map(|&sc| {
            let members: Vec<&Confusion> =
                confusions.iter().zip(classes).filter(|(_, &c)| c == sc).map(|(c, _)| c).collect();
            let mut row = BucketRow { size_class: sc, images: members.len(), mcc: None, degenerate: 0 };
            if members.is_empty() {
                return row;
            }
            row.mcc = Some(match aggregation {
                Aggregation::PerImage => {
                    let sum: f64 = members
                        .iter()
                        .map(|c| {
                            c.mcc().unwrap_or_else(|| {
                                row.degenerate += 1;
                                0.0
                            })
                        })
                        .sum();
                    sum / members.len() as f64
                }
                Aggregation::Pooled => {
                    let mut pooled = Confusion::default();
                    members.iter().for_each(|c| pooled.add(c));
                    pooled.mcc().unwrap_or_else(|| {
                        row.degenerate += 1;
                        0.0
                    })
                }
            });
            degenerate += row.degenerate;
            row
        })
        .collect();
    let overall = match aggregation {
        Aggregation::PerImage => {
            confusions.iter().map(|c| c.mcc().unwrap_or(0.0)).sum::<f64>() / confusions.len().max(1) as f64
        }
        Aggregation::Pooled => {
            let mut pooled = Confusion::default();
            confusions.iter().for_each(|c| pooled.add(c));
            pooled.mcc().unwrap_or(0.0)
        }
    };
    LocalizationScores { rows, overall, images: confusions.len(), degenerate }
}

/// Binarizes heatmaps at a fixed or calibrated threshold under both
/// polarities and keeps the better one. Calibration sweeps 0, 0.05, .., 1
/// for the best overall MCC; ties keep the smaller threshold and the
/// uninverted polarity.
pub fn localization_eval(
    heatmaps: &[Heatmap],
    masks: &[Bitmap],
    classes: &[SizeClass],
    mode: ThresholdMode,
    aggregation: Aggregation,
) -> Result<LocalizationResult, BenchError> {
    if heatmaps.len() != masks.len() || masks.len() != classes.len() {
        return Err(BenchError::Shape(format!(
            "{} heatmaps, {} masks, {} size classes",
            heatmaps.len(),
            masks.len(),
            classes.len()
        )));
    }
    if masks.is_empty() {
        return Err(BenchError::SingleClass { positives: 0, negatives: 0 });
    }
    for (h, m) in heatmaps.iter().zip(masks) {
        check_heatmap(h, m)?;
    }
    let thresholds: Vec<f64> = match mode {
        ThresholdMode::Fixed(t) => vec![t],
        ThresholdMode::Calibrated => {
            let steps = (1.0 / THRESHOLD_STEP).round() as usize;
            (0..=steps).map(|k| k as f64 * THRESHOLD_STEP).collect()
        }
    };
    let mut best: Option<(f64, bool, LocalizationScores)> = None;
    for &t in &thresholds {
        for inverted in [false, true] {
            let s = localization_scores(heatmaps, masks, classes, t, inverted, aggregation);
            if best.as_ref().is_none_or(|b| s.overall > b.2.overall) {
                best = Some((t, inverted, s));
            }
        }
    }
    let (threshold, inverted, scores) = best.expect("at least one threshold");
    Ok(LocalizationResult {
        mode,
        aggregation,
        threshold,
        inverted,
        uninverted: localization_scores(heatmaps, masks, classes, threshold, false, aggregation),
        scores,
    })
}
