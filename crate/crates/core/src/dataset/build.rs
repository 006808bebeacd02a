use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use image::RgbImage;
use log::info;
use rayon::prelude::*;

use super::{
    manifest_path, plan_split, shared_cities, split_dir, DatasetError, DatasetManifest, ImageType, ManipulationRecord,
    ModelEntry, PoolEntry, RecordPlan, Split, SplitPolicy, DEFAULT_P_PRISTINE,
};
use crate::image::{save_rgb_png, write_atomic, Bitmap};
use crate::ingest::{Layer, LayerPalette, SourceTag};
use crate::maskgen::{bezier_mask, grabcut_mask, Mask, MaskError, MaskGenerator};
use crate::pipelines::{derive_seed, generate_fully_synthetic, two_stage_manipulate, BasemapMode, GenerativeModel, SynthOptions};
use crate::scalar::Scalar;

const MASK_ATTEMPTS: usize = 8;

/// Image model plus the basemap model used for generated basemaps and
/// two-stage manipulation.
#[derive(Debug, Clone)]
pub struct ModelBundle<F> {
    pub image: GenerativeModel<F>,
    pub basemap: GenerativeModel<F>,
}

pub type ModelRoster<F> = BTreeMap<SourceTag, ModelBundle<F>>;

#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    pub split: Split,
    pub n: usize,
    pub p_pristine: f64,
    pub seed: u64,
    pub cfg_scale: f64,
    /// Replace an existing split directory instead of failing.
    pub overwrite: bool,
}

impl BuildConfig {
    pub fn new(split: Split, n: usize, seed: u64) -> Self {
        Self { split, n, p_pristine: DEFAULT_P_PRISTINE, seed, cfg_scale: 1.0, overwrite: false }
    }
}

pub fn build_split<F: Scalar>(
    data_root: &Path,
    pool: &[PoolEntry],
    models: &ModelRoster<F>,
    cfg: &BuildConfig,
) -> Result<DatasetManifest, DatasetError> {
    let policy = SplitPolicy::for_split(cfg.split);
    for source in models.keys() {
        policy.check(*source, "model")?;
    }
    for e in pool {
        policy.check(e.pair.source, &format!("reference {}", e.id))?;
    }
    let sources: Vec<SourceTag> = pool.iter().map(|e| e.pair.source).collect();
    let plans = plan_split(&sources, cfg.split, cfg.n, cfg.p_pristine, cfg.seed)?;

    let roster: Vec<String> =
        plans.iter().map(|p| pool[p.reference].pair.city.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let other = manifest_path(data_root, cfg.split.other());
    if other.exists() {
        let other_roster = DatasetManifest::load(&other)?.header.city_roster;
        let cities = shared_cities(&roster, &other_roster);
        if !cities.is_empty() {
            return Err(DatasetError::Leakage { other: cfg.split.other(), cities });
        }
    }
    for p in plans.iter().filter(|p| p.image_type != ImageType::Pristine) {
        let source = pool[p.reference].pair.source;
        if !models.contains_key(&source) {
            return Err(DatasetError::MissingModel(source));
        }
    }

    let dir = split_dir(data_root, cfg.split);
    if dir.exists() {
        if !cfg.overwrite {
            return Err(DatasetError::Exists(dir));
        }
        fs::remove_dir_all(&dir)?;
    }
    for sub in ["images", "basemaps", "masks", "meta"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    info!("building {} split: {} records into {}", cfg.split, plans.len(), dir.display());

    let results: Vec<Result<ManipulationRecord, DatasetError>> =
        plans.par_iter().map(|p| realize(p, &pool[p.reference], models, &dir, cfg.cfg_scale)).collect();
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let model_roster = models
        .iter()
        .map(|(source, b)| ModelEntry {
            source: *source,
            image_model: b.image.id.clone(),
            image_digest: b.image.param_digest(),
            basemap_model: b.basemap.id.clone(),
            basemap_digest: b.basemap.param_digest(),
        })
        .collect();
    let manifest = DatasetManifest::new(cfg.split, cfg.seed, cfg.p_pristine, model_roster, records);
    manifest.save(&manifest_path(data_root, cfg.split))?;
    Ok(manifest)
}

/// Building layer of a basemap, used to seed GrabCut.
pub(crate) fn footprints(basemap: &RgbImage) -> Bitmap {
    let building = LayerPalette::default().color(Layer::Buildings);
    Bitmap {
        width: basemap.width() as usize,
        height: basemap.height() as usize,
        bits: basemap.pixels().map(|p| *p == building).collect(),
    }
}

fn make_mask(plan: &RecordPlan, entry: &PoolEntry) -> Result<Mask, DatasetError> {
    let fp = footprints(&entry.pair.basemap);
    let seeds = if fp.none_set() { None } else { Some(&fp) };
    let mut last = None;
    for attempt in 0..MASK_ATTEMPTS {
        let seed = derive_seed(plan.seed, &format!("mask-{attempt}"));
        let r = match plan.mask_generator {
            Some(MaskGenerator::Bezier) => {
                bezier_mask(entry.pair.size(), plan.target_fraction.expect("blob plans carry a target"), seed)
            }
            _ => grabcut_mask(&entry.pair.satellite, seeds, seed),
        };
        match r {
            Ok(m) => return Ok(m),
            Err(e @ (MaskError::Unreachable { .. } | MaskError::EmptySegmentation)) => last = Some(e),
            Err(e) => return Err(DatasetError::Mask { id: plan.id.clone(), source: e }),
        }
    }
    Err(DatasetError::Mask { id: plan.id.clone(), source: last.expect("at least one attempt") })
}

fn realize<F: Scalar>(
    plan: &RecordPlan,
    entry: &PoolEntry,
    models: &ModelRoster<F>,
    dir: &Path,
    cfg_scale: f64,
) -> Result<ManipulationRecord, DatasetError> {
    let pair = &entry.pair;
    let id = &plan.id;
    let image_rel = format!("images/{id}.png");
    let basemap_rel = format!("basemaps/{id}.png");
    let mut rec = ManipulationRecord {
        id: id.clone(),
        image_type: plan.image_type,
        image: image_rel.clone(),
        basemap: Some(basemap_rel.clone()),
        basemap_mode: None,
        city: pair.city.clone(),
        source: pair.source,
        reference: entry.id.clone(),
        manip_class: None,
        mask: None,
        mask_generator: None,
        area_fraction: None,
        size_class: None,
        image_model: None,
        basemap_model: None,
        seed: plan.seed,
        image_seed: None,
        basemap_seed: None,
        mask_seed: None,
    };
    let wrap = |e| DatasetError::Record { id: id.clone(), source: e };
    let (image, basemap) = match plan.image_type {
        ImageType::Pristine => (pair.satellite.clone(), Some(pair.basemap.clone())),
        ImageType::FullySynthetic => {
            let bundle = &models[&pair.source];
            let mode = plan.basemap_mode.expect("fully synthetic plans carry a mode");
            let opts = SynthOptions { cfg_scale, color_match: true };
            let out = generate_fully_synthetic(&bundle.image, Some(&bundle.basemap), mode, &pair.city, Some(pair), plan.seed, &opts)
                .map_err(wrap)?;
            rec.basemap_mode = Some(mode);
            rec.image_model = Some(bundle.image.id.clone());
            rec.image_seed = Some(out.provenance.image_seed);
            rec.basemap_seed = out.provenance.basemap_seed;
            rec.basemap_model = out.provenance.basemap_model.clone();
            let basemap = match mode {
                BasemapMode::Truth => Some(pair.basemap.clone()),
                BasemapMode::Generated => out.generated_basemap,
                BasemapMode::None => None,
            };
            (out.image, basemap)
        }
        ImageType::PartiallyManipulated => {
            let bundle = &models[&pair.source];
            let class = plan.manip_class.expect("partial plans carry a class");
            let mask = make_mask(plan, entry)?;
            let out = two_stage_manipulate(&bundle.basemap, &bundle.image, pair, &mask, class, &pair.city, plan.seed, cfg_scale)
                .map_err(wrap)?;
            let mask_rel = format!("masks/{id}.png");
            mask.save(&dir.join(&mask_rel)).map_err(|e| DatasetError::Mask { id: id.clone(), source: e })?;
            rec.manip_class = Some(class);
            rec.mask = Some(mask_rel);
            rec.mask_generator = Some(mask.generator);
            rec.area_fraction = Some(mask.area_fraction);
            rec.size_class = Some(mask.size_class);
            rec.mask_seed = Some(mask.seed);
            rec.image_model = Some(bundle.image.id.clone());
            rec.basemap_model = Some(bundle.basemap.id.clone());
            rec.image_seed = Some(out.provenance.image_seed);
            rec.basemap_seed = Some(out.provenance.basemap_seed);
            (out.image, Some(out.basemap))
        }
    };
    save_rgb_png(&dir.join(&image_rel), &image)?;
    match basemap {
        Some(b) => save_rgb_png(&dir.join(&basemap_rel), &b)?,
        None => rec.basemap = None,
    }
    let meta = serde_json::to_vec_pretty(&rec).expect("record serializes");
    write_atomic(&dir.join(format!("meta/{id}.json")), &meta)?;
    Ok(rec)
}
