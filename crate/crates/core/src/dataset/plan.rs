use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grabcut_only, DatasetError, ImageType, Split};
use crate::ingest::SourceTag;
use crate::maskgen::{MaskGenerator, SizeClass};
use crate::pipelines::{derive_seed, BasemapMode, ManipulationClass};

/// Smallest target area for blob masks.
const MIN_TARGET_FRACTION: f64 = 0.01;

/// Random decisions for one record, fixed before any generation runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordPlan {
    pub id: String,
    /// Index into the reference pool.
    pub reference: usize,
    pub image_type: ImageType,
    pub basemap_mode: Option<BasemapMode>,
    pub manip_class: Option<ManipulationClass>,
    pub mask_generator: Option<MaskGenerator>,
    /// Blob masks only; GrabCut regions take the size the segmentation gives.
    pub target_fraction: Option<f64>,
    pub seed: u64,
}

/// Draws `n` distinct references, then per reference: pristine with
/// probability `p_pristine`, otherwise a fair coin between fully synthetic
/// (uniform basemap mode) and partially manipulated (uniform manipulation
/// class, uniform size bucket).
pub fn plan_split(
    sources: &[SourceTag],
    split: Split,
    n: usize,
    p_pristine: f64,
    seed: u64,
) -> Result<Vec<RecordPlan>, DatasetError> {
    if !(0.0..=1.0).contains(&p_pristine) {
        return Err(DatasetError::Config(format!("p_pristine {p_pristine} outside [0, 1]")));
    }
    if sources.is_empty() {
        return Err(DatasetError::EmptyPool);
    }
    if n > sources.len() {
        return Err(DatasetError::PoolTooSmall { requested: n, available: sources.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs = sample(&mut rng, sources.len(), n);
    Ok(refs
        .iter()
        .enumerate()
        .map(|(i, reference)| {
            let rec_seed = derive_seed(seed, &format!("record-{i}"));
            let mut rng = ChaCha8Rng::seed_from_u64(rec_seed);
            let mut plan = RecordPlan {
                id: format!("{split}-{i:06}"),
                reference,
                image_type: ImageType::Pristine,
                basemap_mode: None,
                manip_class: None,
                mask_generator: None,
                target_fraction: None,
                seed: rec_seed,
            };
            if rng.random::<f64>() < p_pristine {
                return plan;
            }
            if rng.random_bool(0.5) {
                plan.image_type = ImageType::FullySynthetic;
                plan.basemap_mode = Some(BasemapMode::ALL[rng.random_range(0..3)]);
            } else {
                plan.image_type = ImageType::PartiallyManipulated;
                plan.manip_class = Some(ManipulationClass::ALL[rng.random_range(0..2)]);
                let generator = if grabcut_only(sources[reference]) || rng.random_bool(0.5) {
                    MaskGenerator::GrabCut
                } else {
                    MaskGenerator::Bezier
                };
                plan.mask_generator = Some(generator);
                if generator == MaskGenerator::Bezier {
                    let (lo, hi) = SizeClass::ALL[rng.random_range(0..4)].bounds();
                    let lo = lo.max(MIN_TARGET_FRACTION);
                    plan.target_fraction = Some(lo + (hi - lo) * rng.random::<f64>());
                }
            }
            plan
        })
        .collect())
}
