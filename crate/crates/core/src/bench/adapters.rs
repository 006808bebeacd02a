//! Adapter interfaces plus four reference implementations. The reference
//! adapters exist to exercise the harness; none of them says anything about
//! real forensic performance.

use std::fmt;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BenchError, BinaryTask};
use crate::dataset::{split_dir, DatasetManifest, ImageType, ManipulationRecord};
use crate::image::{load_mask_png, load_rgb_png, luma, Bitmap};
use crate::pipelines::derive_seed;

/// One manifest record with its files resolved.
#[derive(Debug, Clone)]
pub struct BenchItem {
    pub record: ManipulationRecord,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
}

impl BenchItem {
    pub fn id(&self) -> &str {
        &self.record.id
    }

    pub fn load_image(&self) -> Result<RgbImage, BenchError> {
        load_rgb_png(&self.image_path).map_err(|e| BenchError::Io(format!("{}: {e}", self.image_path.display())))
    }

    pub fn load_mask(&self) -> Result<Option<Bitmap>, BenchError> {
        self.mask_path
            .as_ref()
            .map(|p| load_mask_png(p).map_err(|e| BenchError::Io(format!("{}: {e}", p.display()))))
            .transpose()
    }
}

/// Items of a manifest, ordered by record id.
pub fn bench_items(manifest: &DatasetManifest, data_root: &Path) -> Vec<BenchItem> {
    let dir = split_dir(data_root, manifest.header.split);
    let mut items: Vec<BenchItem> = manifest
        .records
        .iter()
        .map(|r| BenchItem {
            record: r.clone(),
            image_path: dir.join(&r.image),
            mask_path: r.mask.as_ref().map(|m| dir.join(m)),
        })
        .collect();
    items.sort_by(|a, b| a.record.id.cmp(&b.record.id));
    items
}

/// Which binary tasks an adapter answers: synthetic-image detectors take
/// the three pristine tasks, splice detectors the two partial ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterRole {
    Detector,
    Splicer,
    Both,
}

impl AdapterRole {
    pub fn tasks(self) -> &'static [BinaryTask] {
        match self {
            AdapterRole::Detector => &[BinaryTask::PristineVsFully, BinaryTask::PristineVsPartially, BinaryTask::PristineVsAny],
            AdapterRole::Splicer => &[BinaryTask::PristineVsPartially, BinaryTask::PartiallyVsFully],
            AdapterRole::Both => &BinaryTask::ALL,
        }
    }

    pub fn detects(self) -> bool {
        self != AdapterRole::Splicer
    }

    pub fn splices(self) -> bool {
        self != AdapterRole::Detector
    }
}

impl fmt::Display for AdapterRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdapterRole::Detector => "detector",
            AdapterRole::Splicer => "splicer",
            AdapterRole::Both => "both",
        })
    }
}

/// Image-level scorer; higher means more likely synthetic or spliced.
pub trait DetectorAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn role(&self) -> AdapterRole;
    fn original_threshold(&self) -> f64;
    fn score(&self, item: &BenchItem) -> Result<f64, String>;

    /// Scores in item order. Implementations may batch.
    fn score_all(&self, items: &[BenchItem]) -> Vec<Result<f64, String>> {
        items.par_iter().map(|it| self.score(it)).collect()
    }
}

/// Per-pixel manipulation likelihood in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn from_mask(mask: &Bitmap) -> Self {
        Self {
            width: mask.width,
            height: mask.height,
            values: mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn binarize(&self, threshold: f64, inverted: bool) -> Vec<bool> {
        self.values.iter().map(|&v| if inverted { 1.0 - v } else { v } >= threshold).collect()
    }
}

pub trait LocalizerAdapter: Send + Sync {
    fn name(&self) -> &str;
    /// Threshold used for the uncalibrated results.
    fn fixed_threshold(&self) -> f64;
    fn heatmap(&self, item: &BenchItem) -> Result<Heatmap, String>;

    fn heatmap_all(&self, items: &[BenchItem]) -> Vec<Result<Heatmap, String>> {
        items.par_iter().map(|it| self.heatmap(it)).collect()
    }
}

/// Reads the ground truth from the record. Detector role scores any
/// synthetic content 1, splicer role scores spliced images 1, and the
/// combined role ranks pristine < fully < partially so all four tasks
/// separate.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    name: String,
    role: AdapterRole,
    negate: bool,
}

impl OracleDetector {
    pub fn new(role: AdapterRole) -> Self {
        Self { name: format!("oracle-{role}"), role, negate: false }
    }

    /// Negated oracle scores: AUC 0 wherever the oracle reaches 1.
    pub fn anti(role: AdapterRole) -> Self {
        Self { name: format!("anti-oracle-{role}"), role, negate: true }
    }
}

impl DetectorAdapter for OracleDetector {
    fn name(&self) -> &str {
        &self.name
    }

    fn role(&self) -> AdapterRole {
        self.role
    }

    fn original_threshold(&self) -> f64 {
        if self.negate {
            -0.5
        } else {
            0.5
        }
    }

    fn score(&self, item: &BenchItem) -> Result<f64, String> {
        let t = item.record.image_type;
        let s = match self.role {
            AdapterRole::Detector => (t != ImageType::Pristine) as u8 as f64,
            AdapterRole::Splicer => (t == ImageType::PartiallyManipulated) as u8 as f64,
            AdapterRole::Both => match t {
                ImageType::Pristine => 0.0,
                ImageType::FullySynthetic => 1.0,
                ImageType::PartiallyManipulated => 2.0,
            },
        };
        Ok(if self.negate { -s } else { s })
    }
}

/// Mean squared Laplacian of luma. A crude high-frequency statistic,
/// deterministic and nothing more.
#[derive(Debug, Clone)]
pub struct ResidualEnergyDetector {
    pub threshold: f64,
}

impl Default for ResidualEnergyDetector {
    fn default() -> Self {
        Self { threshold: 0.005 }
    }
}

fn laplacian(img: &RgbImage) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let l: Vec<f64> = img.pixels().map(|p| luma(p) / 255.0).collect();
    let at = |x: isize, y: isize| l[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            4.0 * at(x, y) - at(x - 1, y) - at(x + 1, y) - at(x, y - 1) - at(x, y + 1)
        })
        .collect()
}

impl DetectorAdapter for ResidualEnergyDetector {
    fn name(&self) -> &str {
        "residual-energy"
    }

    fn role(&self) -> AdapterRole {
        AdapterRole::Detector
    }

    fn original_threshold(&self) -> f64 {
        self.threshold
    }

    fn score(&self, item: &BenchItem) -> Result<f64, String> {
        let img = item.load_image().map_err(|e| e.to_string())?;
        let r = laplacian(&img);
        Ok(r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64)
    }
}

/// Uniform scores keyed by record id, independent of evaluation order.
#[derive(Debug, Clone)]
pub struct RandomDetector {
    name: String,
    role: AdapterRole,
    seed: u64,
}

impl RandomDetector {
    pub fn new(role: AdapterRole, seed: u64) -> Self {
        Self { name: format!("random-{role}-{seed}"), role, seed }
    }
}

impl DetectorAdapter for RandomDetector {
    fn name(&self) -> &str {
        &self.name
    }

    fn role(&self) -> AdapterRole {
        self.role
    }

    fn original_threshold(&self) -> f64 {
        0.5
    }

    fn score(&self, item: &BenchItem) -> Result<f64, String> {
        Ok(ChaCha8Rng::seed_from_u64(derive_seed(self.seed, item.id())).random())
    }
}

/// Ground-truth mask (zeros for unmasked images), optionally inverted.
#[derive(Debug, Clone)]
pub struct OracleLocalizer {
    pub inverted: bool,
}

impl LocalizerAdapter for OracleLocalizer {
    fn name(&self) -> &str {
        if self.inverted {
            "anti-oracle-mask"
        } else {
            "oracle-mask"
        }
    }

    fn fixed_threshold(&self) -> f64 {
        0.5
    }

    fn heatmap(&self, item: &BenchItem) -> Result<Heatmap, String> {
        let mask = match item.load_mask().map_err(|e| e.to_string())? {
            Some(m) => m,
            None => {
                let img = item.load_image().map_err(|e| e.to_string())?;
                Bitmap::new(img.width() as usize, img.height() as usize)
            }
        };
        let mut h = Heatmap::from_mask(&mask);
        if self.inverted {
            h.values.iter_mut().for_each(|v| *v = 1.0 - *v);
        }
        Ok(h)
    }
}

/// Local residual energy normalized by its maximum.
#[derive(Debug, Clone)]
pub struct ResidualLocalizer {
    pub radius: usize,
    pub threshold: f64,
}

impl Default for ResidualLocalizer {
    fn default() -> Self {
        Self { radius: 2, threshold: 0.5 }
    }
}

impl LocalizerAdapter for ResidualLocalizer {
    fn name(&self) -> &str {
        "residual-energy-map"
    }

    fn fixed_threshold(&self) -> f64 {
        self.threshold
    }

    fn heatmap(&self, item: &BenchItem) -> Result<Heatmap, String> {
        let img = item.load_image().map_err(|e| e.to_string())?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let e: Vec<f64> = laplacian(&img).iter().map(|v| v * v).collect();
        let r = self.radius as isize;
        let mut values: Vec<f64> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                let mut s = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (xx, yy) = ((x + dx).clamp(0, w as isize - 1), (y + dy).clamp(0, h as isize - 1));
                        s += e[yy as usize * w + xx as usize];
                    }
                }
                s
            })
            .collect();
        let max = values.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            values.iter_mut().for_each(|v| *v /= max);
        }
        Ok(Heatmap { width: w, height: h, values })
    }
}

/// Uniform noise heatmaps keyed by record id.
#[derive(Debug, Clone)]
pub struct RandomLocalizer {
    pub seed: u64,
}

impl LocalizerAdapter for RandomLocalizer {
    fn name(&self) -> &str {
        "random-map"
    }

    fn fixed_threshold(&self) -> f64 {
        0.5
    }

    fn heatmap(&self, item: &BenchItem) -> Result<Heatmap, String> {
        let (w, h) = match item.load_mask().map_err(|e| e.to_string())? {
            Some(m) => (m.width, m.height),
            None => {
                let img = item.load_image().map_err(|e| e.to_string())?;
                (img.width() as usize, img.height() as usize)
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, item.id()));
        Ok(Heatmap { width: w, height: h, values: (0..w * h).map(|_| rng.random()).collect() })
    }
}

/// Oracle, anti-oracle, residual-energy and random detectors.
pub fn reference_detectors() -> Vec<Box<dyn DetectorAdapter>> {
    vec![
        Box::new(OracleDetector::new(AdapterRole::Both)),
        Box::new(OracleDetector::anti(AdapterRole::Both)),
        Box::new(ResidualEnergyDetector::default()),
        Box::new(RandomDetector::new(AdapterRole::Both, 0)),
    ]
}

pub fn reference_localizers() -> Vec<Box<dyn LocalizerAdapter>> {
    vec![
        Box::new(OracleLocalizer { inverted: false }),
        Box::new(OracleLocalizer { inverted: true }),
        Box::new(ResidualLocalizer::default()),
        Box::new(RandomLocalizer { seed: 0 }),
    ]
}
