//! Manipulation-region masks: random smooth blobs and GrabCut segmentations,
//! both capped at 20% of the image, plus the size buckets used to stratify
//! localization results.
//!
//! Size buckets (fraction of image area, right-closed):
//!
//! | class   | range          |
//! |---------|----------------|
//! | X-Small | (0, 0.02]      |
//! | Small   | (0.02, 0.05]   |
//! | Medium  | (0.05, 0.10]   |
//! | Large   | (0.10, 0.20]   |

mod bezier;
mod grabcut;
mod maxflow;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{load_mask_png, save_mask_png, write_atomic, Bitmap};

pub use bezier::bezier_mask;
pub use grabcut::{cap_by_confidence, grabcut_mask, grabcut_segment, GrabCutParams, Segmentation, Trimap};
pub use maxflow::MaxFlow;

/// Largest manipulated share of an image.
pub const MAX_AREA_FRACTION: f64 = 0.20;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("target fraction {0} outside (0, 0.20]")]
    TargetOutOfRange(f64),
    #[error("area fraction {0} outside (0, 0.20]")]
    FractionOutOfRange(f64),
    #[error("could not reach area fraction {target} within tolerance after {iterations} scaling steps (closest {closest})")]
    Unreachable { target: f64, closest: f64, iterations: usize },
    #[error("footprint seed is empty")]
    EmptyFootprint,
    #[error("segmentation converged to an empty region")]
    EmptySegmentation,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("mask too small: {0} pixels per side")]
    TooSmall(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeClass {
    #[serde(rename = "X-Small")]
    XSmall,
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 4] = [SizeClass::XSmall, SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    /// Half-open `(lower, upper]` fraction bounds.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            SizeClass::XSmall => (0.0, 0.02),
            SizeClass::Small => (0.02, 0.05),
            SizeClass::Medium => (0.05, 0.10),
            SizeClass::Large => (0.10, 0.20),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeClass::XSmall => "X-Small",
            SizeClass::Small => "Small",
            SizeClass::Medium => "Medium",
            SizeClass::Large => "Large",
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn size_class(area_fraction: f64) -> Result<SizeClass, MaskError> {
    if !(area_fraction > 0.0 && area_fraction <= MAX_AREA_FRACTION) {
        return Err(MaskError::FractionOutOfRange(area_fraction));
    }
    Ok(SizeClass::ALL
        .into_iter()
        .find(|c| area_fraction <= c.bounds().1)
        .expect("fraction within the last bucket"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskGenerator {
    Bezier,
    GrabCut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub bitmap: Bitmap,
    pub area_fraction: f64,
    pub size_class: SizeClass,
    pub generator: MaskGenerator,
    pub seed: u64,
}

/// Sidecar written next to a mask PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub generator: MaskGenerator,
    pub seed: u64,
    pub area_fraction: f64,
    pub size_class: SizeClass,
}

impl Mask {
    pub fn from_bitmap(bitmap: Bitmap, generator: MaskGenerator, seed: u64) -> Result<Self, MaskError> {
        let area_fraction = bitmap.fraction();
        let size_class = size_class(area_fraction)?;
        Ok(Self { bitmap, area_fraction, size_class, generator, seed })
    }

    pub fn record(&self) -> MaskRecord {
        MaskRecord {
            generator: self.generator,
            seed: self.seed,
            area_fraction: self.area_fraction,
            size_class: self.size_class,
        }
    }

    /// Writes `<path>` (8-bit gray, 255 = manipulated) and `<path>.json`.
    pub fn save(&self, png_path: &Path) -> Result<(), MaskError> {
        save_mask_png(png_path, &self.bitmap)?;
        let json = serde_json::to_vec_pretty(&self.record()).expect("record serializes");
        write_atomic(&sidecar_path(png_path), &json)?;
        Ok(())
    }

    pub fn load(png_path: &Path) -> Result<Self, MaskError> {
        let bitmap = load_mask_png(png_path)?;
        let rec: MaskRecord = serde_json::from_slice(&std::fs::read(sidecar_path(png_path))?)
            .map_err(|e| MaskError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
        Self::from_bitmap(bitmap, rec.generator, rec.seed)
    }
}

pub fn sidecar_path(png_path: &Path) -> std::path::PathBuf {
    let mut s = png_path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// 4-connected components, labelled in scan order; returns (labels, sizes).
pub fn connected_components(bitmap: &Bitmap) -> (Vec<usize>, Vec<usize>) {
    const NONE: usize = usize::MAX;
    let (w, h) = (bitmap.width, bitmap.height);
    let mut labels = vec![NONE; w * h];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !bitmap.bits[start] || labels[start] != NONE {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        labels[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if bitmap.bits[j] && labels[j] == NONE {
                    labels[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keeps the largest 4-connected component (earliest in scan order on ties).
pub fn largest_component(bitmap: &Bitmap) -> Bitmap {
    let (labels, sizes) = connected_components(bitmap);
    let Some(best) = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
    else {
        return bitmap.clone();
    };
    Bitmap {
        width: bitmap.width,
        height: bitmap.height,
        bits: labels.iter().map(|&l| l == best).collect(),
    }
}
