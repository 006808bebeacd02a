//! Forensic dataset assembly: per-split sampling of pristine, fully
//! synthetic and partially manipulated images from a pool of reference
//! tiles, written as
//!
//! ```text
//! dataset/<split>/manifest.jsonl
//! dataset/<split>/{images,basemaps,masks,meta}/<id>.*
//! ```
//!
//! The manifest is one header object followed by one record per line,
//! ordered by record id.

mod build;
mod plan;
mod validate;

use std::collections::BTreeSet;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{sha256_hex, write_atomic};
use crate::ingest::{IngestError, Provider, SourceTag, TilePair, TileStore};
use crate::maskgen::{MaskError, MaskGenerator, SizeClass};
use crate::pipelines::{BasemapMode, ManipulationClass, PipelineError};

pub use build::{build_split, BuildConfig, ModelBundle, ModelRoster};
pub use plan::{plan_split, RecordPlan};
pub use validate::{validate_manifest, ValidationReport, Violation, ViolationKind, SPOT_CHECK_COUNT};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_P_PRISTINE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("split policy violation: {0}")]
    Policy(String),
    #[error("invalid build configuration: {0}")]
    Config(String),
    #[error("reference pool is empty")]
    EmptyPool,
    #[error("requested {requested} records but the pool holds {available} references")]
    PoolTooSmall { requested: usize, available: usize },
    #[error("no model for source {0}")]
    MissingModel(SourceTag),
    #[error("cities shared with the {other} split: {cities:?}")]
    Leakage { other: Split, cities: Vec<String> },
    #[error("{0} already exists")]
    Exists(PathBuf),
    #[error("record {id}: {source}")]
    Record { id: String, source: PipelineError },
    #[error("record {id}: {source}")]
    Mask { id: String, source: MaskError },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn other(self) -> Split {
        match self {
            Split::Train => Split::Test,
            Split::Test => Split::Train,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(DatasetError::Config(format!("unknown split '{s}' (expected train or test)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ImageType {
    Pristine,
    FullySynthetic,
    PartiallyManipulated,
}

impl ImageType {
    pub const ALL: [ImageType; 3] = [ImageType::Pristine, ImageType::FullySynthetic, ImageType::PartiallyManipulated];
}

/// Sources whose references and models may appear in a split. Training data
/// comes from MB16 alone; the test split adds G17 and MB18. Procedural
/// stand-ins follow the same rule by zoom.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPolicy {
    pub split: Split,
    pub allowed: Vec<SourceTag>,
}

impl SplitPolicy {
    pub fn for_split(split: Split) -> Self {
        let allowed = match split {
            Split::Train => vec![SourceTag::MB16, SourceTag::procedural(16)],
            Split::Test => vec![
                SourceTag::MB16,
                SourceTag::G17,
                SourceTag::MB18,
                SourceTag::procedural(16),
                SourceTag::procedural(17),
                SourceTag::procedural(18),
            ],
        };
        Self { split, allowed }
    }

    pub fn check(&self, source: SourceTag, what: &str) -> Result<(), DatasetError> {
        if self.allowed.contains(&source) {
            Ok(())
        } else {
            Err(DatasetError::Policy(format!(
                "{what} from {source} is not allowed in the {} split (allowed: {})",
                self.split,
                self.allowed.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
            )))
        }
    }
}

/// MB18 manipulations use footprint-seeded GrabCut masks only.
pub fn grabcut_only(source: SourceTag) -> bool {
    source.zoom == 18 && matches!(source.provider, Provider::Mapbox | Provider::Procedural)
}

/// A reference tile and its location relative to the data root.
#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub id: String,
    pub pair: TilePair,
}

/// Loads every stored tile for the given cities and sources, sorted by id.
pub fn load_pool(data_root: &Path, cities: &[String], sources: &[SourceTag]) -> Result<Vec<PoolEntry>, DatasetError> {
    let store = TileStore::new(data_root);
    let mut pool = Vec::new();
    for city in cities {
        for &source in sources {
            for dir in store.list(city, source)? {
                let (pair, _) = TileStore::load_dir(&dir)?;
                let rel = dir.strip_prefix(data_root).unwrap_or(&dir);
                pool.push(PoolEntry { id: path_string(rel), pair });
            }
        }
    }
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(pool)
}

pub(crate) fn path_string(p: &Path) -> String {
    p.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// Ground truth for one dataset image. Paths are relative to the split
/// directory; `reference` is relative to the data root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationRecord {
    pub id: String,
    pub image_type: ImageType,
    pub image: String,
    pub basemap: Option<String>,
    pub basemap_mode: Option<BasemapMode>,
    pub city: String,
    pub source: SourceTag,
    pub reference: String,
    pub manip_class: Option<ManipulationClass>,
    pub mask: Option<String>,
    pub mask_generator: Option<MaskGenerator>,
    pub area_fraction: Option<f64>,
    pub size_class: Option<SizeClass>,
    pub image_model: Option<String>,
    pub basemap_model: Option<String>,
    pub seed: u64,
    pub image_seed: Option<u64>,
    pub basemap_seed: Option<u64>,
    pub mask_seed: Option<u64>,
}

impl ManipulationRecord {
    /// Field applicability by image type.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut want = |name: &str, present: bool, expected: bool| {
            if present != expected {
                out.push(format!(
                    "{name} must be {} for {:?}",
                    if expected { "present" } else { "absent" },
                    self.image_type
                ));
            }
        };
        let (full, partial) = match self.image_type {
            ImageType::Pristine => (false, false),
            ImageType::FullySynthetic => (true, false),
            ImageType::PartiallyManipulated => (false, true),
        };
        want("basemap_mode", self.basemap_mode.is_some(), full);
        want("manip_class", self.manip_class.is_some(), partial);
        want("mask", self.mask.is_some(), partial);
        want("mask_generator", self.mask_generator.is_some(), partial);
        want("area_fraction", self.area_fraction.is_some(), partial);
        want("size_class", self.size_class.is_some(), partial);
        want("mask_seed", self.mask_seed.is_some(), partial);
        want("image_model", self.image_model.is_some(), full || partial);
        want("image_seed", self.image_seed.is_some(), full || partial);
        want("basemap_model", self.basemap_model.is_some(), partial || self.basemap_mode == Some(BasemapMode::Generated));
        if let (Some(a), Some(c)) = (self.area_fraction, self.size_class) {
            match crate::maskgen::size_class(a) {
                Ok(expected) if expected == c => {}
                _ => out.push(format!("size_class {c} does not match area fraction {a}")),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCounts {
    pub pristine: usize,
    pub fully_synthetic: usize,
    pub partially_manipulated: usize,
    pub total: usize,
}

impl TypeCounts {
    pub fn of(records: &[ManipulationRecord]) -> Self {
        let count = |t| records.iter().filter(|r| r.image_type == t).count();
        Self {
            pristine: count(ImageType::Pristine),
            fully_synthetic: count(ImageType::FullySynthetic),
            partially_manipulated: count(ImageType::PartiallyManipulated),
            total: records.len(),
        }
    }

    pub fn consistent(&self) -> bool {
        self.pristine + self.fully_synthetic + self.partially_manipulated == self.total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub source: SourceTag,
    pub image_model: String,
    pub image_digest: String,
    pub basemap_model: String,
    pub basemap_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub split: Split,
    pub global_seed: u64,
    pub p_pristine: f64,
    pub city_roster: Vec<String>,
    pub model_roster: Vec<ModelEntry>,
    pub counts: TypeCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub records: Vec<ManipulationRecord>,
}

impl DatasetManifest {
    pub fn new(split: Split, global_seed: u64, p_pristine: f64, model_roster: Vec<ModelEntry>, mut records: Vec<ManipulationRecord>) -> Self {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let city_roster: BTreeSet<String> = records.iter().map(|r| r.city.clone()).collect();
        Self {
            header: ManifestHeader {
                schema_version: SCHEMA_VERSION,
                split,
                global_seed,
                p_pristine,
                city_roster: city_roster.into_iter().collect(),
                model_roster,
                counts: TypeCounts::of(&records),
            },
            records,
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = serde_json::to_string(&self.header).expect("header serializes");
        s.push('\n');
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DatasetError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| DatasetError::Manifest("missing header".into()))?;
        let header: ManifestHeader =
            serde_json::from_str(first).map_err(|e| DatasetError::Manifest(format!("header: {e}")))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(DatasetError::Manifest(format!(
                "schema version {} (supported: {SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let records = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| DatasetError::Manifest(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<ManipulationRecord>, _>>()?;
        Ok(Self { header, records })
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        write_atomic(path, self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn counts(&self) -> TypeCounts {
        TypeCounts::of(&self.records)
    }
}

pub fn split_dir(data_root: &Path, split: Split) -> PathBuf {
    data_root.join("dataset").join(split.name())
}

pub fn manifest_path(data_root: &Path, split: Split) -> PathBuf {
    split_dir(data_root, split).join("manifest.jsonl")
}

/// Cities present in both rosters.
pub fn shared_cities(a: &[String], b: &[String]) -> Vec<String> {
    let b: BTreeSet<&String> = b.iter().collect();
    a.iter().filter(|c| b.contains(c)).cloned().collect::<BTreeSet<_>>().into_iter().collect()
}
