use std::collections::BTreeMap;
use std::path::PathBuf;

use satsynth::dataset::{
    build_split, load_pool, manifest_path, split_dir, validate_manifest, BuildConfig, DatasetManifest, ModelBundle,
    Split, ValidationReport,
};
use satsynth::image::write_atomic;

use crate::config::{ModelKind, RunConfig};
use crate::data::{ensure_tiles, load_model, require_data_root};
use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    pub report: ValidationReport,
    pub report_path: PathBuf,
}

/// Builds the configured split, validates it and writes
/// `validation.json` next to the manifest. Validation failures are data
/// errors, reported after the file is written.
pub fn build(cfg: &RunConfig) -> Result<BuildOutcome, CliError> {
    let seed = cfg.require_seed("build-dataset")?;
    let root = require_data_root(cfg)?;
    let d = &cfg.dataset;
    let split = d.split;
    let cities = d.cities(split).to_vec();
    let sources = d.sources(split).to_vec();
    if cities.is_empty() {
        return Err(CliError::Config(format!("dataset.{}_cities is empty", split.name())));
    }
    if sources.is_empty() {
        return Err(CliError::Config(format!("dataset.{}_sources is empty", split.name())));
    }
    if let Some(c) = cities.iter().find(|c| !cfg.model.cities.contains(c)) {
        return Err(CliError::Config(format!("dataset city '{c}' is not in model.cities")));
    }
    let policy = satsynth::dataset::SplitPolicy::for_split(split);
    for s in &sources {
        policy.check(*s, "pool source")?;
    }
    let mut roster = BTreeMap::new();
    for &s in &sources {
        let (image, _) = load_model(cfg, ModelKind::Image, s)?;
        let (basemap, _) = load_model(cfg, ModelKind::Basemap, s)?;
        ensure_tiles(cfg, &cities, s, image.resolution())?;
        roster.insert(s, ModelBundle { image, basemap });
    }
    let pool = load_pool(root, &cities, &sources)?;
    let bc = BuildConfig {
        p_pristine: d.p_pristine,
        cfg_scale: d.cfg_scale,
        overwrite: d.overwrite,
        ..BuildConfig::new(split, d.n, seed)
    };
    let manifest = build_split(root, &pool, &roster, &bc)?;
    let report = validate_manifest(&manifest, root);
    let report_path = split_dir(root, split).join("validation.json");
    write_atomic(&report_path, &serde_json::to_vec_pretty(&report).expect("report serializes"))?;
    if !report.ok() {
        return Err(CliError::Data(format!(
            "{} validation violations, see {}",
            report.violations.len(),
            report_path.display()
        )));
    }
    Ok(BuildOutcome { manifest_path: manifest_path(root, split), manifest, report, report_path })
}

/// Loads and validates an existing split.
pub fn load_valid(cfg: &RunConfig, split: Split) -> Result<DatasetManifest, CliError> {
    let root = require_data_root(cfg)?;
    let path = manifest_path(root, split);
    if !path.exists() {
        return Err(CliError::Data(format!("{} not found; run `satsynth build-dataset` first", path.display())));
    }
    let manifest = DatasetManifest::load(&path)?;
    let report = validate_manifest(&manifest, root);
    if !report.ok() {
        let first = &report.violations[0];
        return Err(CliError::Data(format!(
            "{}: {} validation violations (first: {:?} {} {})",
            path.display(),
            report.violations.len(),
            first.kind,
            first.record.as_deref().unwrap_or("-"),
            first.detail
        )));
    }
    Ok(manifest)
}
