use satsynth::ingest::{GeoCoordinate, SourceTag};
use satsynth::pipelines::ManipulationClass;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Sample,
    Inpaint,
    TwoStage,
    EditStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

/// Milliseconds since the Unix epoch at each status change.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub queued_ms: u64,
    pub started_ms: Option<u64>,
    pub finished_ms: Option<u64>,
}

/// Content digests of the produced artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobArtifacts {
    pub image: String,
    pub mask: Option<String>,
    pub basemap: Option<String>,
    /// Index of the stage appended by an edit job.
    pub stage_index: Option<usize>,
    pub empty_mask: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelDiagnostics {
    pub width: u32,
    pub height: u32,
    /// Pixels outside the palette.
    pub offending: usize,
    /// Up to the first 16 offending pixels as `[x, y, r, g, b]`.
    pub samples: Vec<[u32; 5]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobError {
    /// One of `decode`, `non_palette`, `shape`, `mask`, `generation`,
    /// `interrupted`, `internal`.
    pub category: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels: Option<PixelDiagnostics>,
}

impl JobError {
    pub fn new(category: &str, message: impl Into<String>) -> Self {
        Self { category: category.into(), message: message.into(), pixels: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub inputs_digest: String,
    pub timeline: Timeline,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifacts: Option<JobArtifacts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<JobError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub index: usize,
    pub job_id: String,
    pub seed: u64,
    pub basemap: String,
    pub mask: String,
    pub image: String,
}

/// Persisted session: the reference pair and every stage by digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub city: String,
    pub seed: u64,
    pub coord: GeoCoordinate,
    pub source: SourceTag,
    pub reference_image: String,
    pub reference_basemap: String,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionView<'a> {
    #[serde(flatten)]
    pub record: &'a SessionRecord,
    pub stage_count: usize,
    pub current_image: &'a str,
    pub current_basemap: &'a str,
}

impl<'a> SessionView<'a> {
    pub fn of(record: &'a SessionRecord) -> Self {
        let last = record.stages.last();
        Self {
            record,
            stage_count: record.stages.len(),
            current_image: last.map_or(&record.reference_image, |s| &s.image),
            current_basemap: last.map_or(&record.reference_basemap, |s| &s.basemap),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub city: String,
    /// Tile directory relative to the data root.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitEdit {
    /// Base64 PNG of the edited basemap.
    pub basemap_png: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JobRequest {
    Sample {
        city: String,
        seed: u64,
        #[serde(default)]
        basemap_png: Option<String>,
        #[serde(default)]
        cfg_scale: Option<f64>,
    },
    Inpaint {
        city: String,
        seed: u64,
        image_png: String,
        mask_png: String,
        #[serde(default)]
        basemap_png: Option<String>,
        #[serde(default)]
        cfg_scale: Option<f64>,
    },
    TwoStage {
        city: String,
        seed: u64,
        image_png: String,
        basemap_png: String,
        mask_png: String,
        manip_class: ManipulationClass,
        #[serde(default)]
        cfg_scale: Option<f64>,
    },
}

impl JobRequest {
    pub fn kind(&self) -> JobKind {
        match self {
            JobRequest::Sample { .. } => JobKind::Sample,
            JobRequest::Inpaint { .. } => JobKind::Inpaint,
            JobRequest::TwoStage { .. } => JobKind::TwoStage,
        }
    }

    pub fn city(&self) -> &str {
        match self {
            JobRequest::Sample { city, .. } | JobRequest::Inpaint { city, .. } | JobRequest::TwoStage { city, .. } => city,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub layer: satsynth::ingest::Layer,
    pub rgb: [u8; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub api_version: String,
    pub cities: Vec<String>,
    pub manipulation_classes: Vec<ManipulationClass>,
    pub palette_version: String,
    pub palette: Vec<PaletteEntry>,
    pub checkpoint_hash: String,
    pub resolution: usize,
    pub basemap_model: bool,
    pub edit_margin: usize,
    pub workers: usize,
}
