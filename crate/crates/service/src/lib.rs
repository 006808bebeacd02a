//! HTTP/JSON service for compound editing sessions and generation jobs.
//!
//! Routes (all under `/v1`):
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/meta` | cities, classes, palette, checkpoint hash |
//! | POST | `/sessions` | create an edit session |
//! | GET | `/sessions/{id}` | session with its stage list |
//! | POST | `/sessions/{id}/edits` | enqueue an edit step |
//! | POST | `/jobs` | enqueue a sample, inpaint or two-stage job |
//! | GET | `/jobs/{id}` | job status, timeline and artifact digests |
//! | GET | `/artifacts/{digest}` | raw PNG, or JSON with `?encoding=base64` |
//!
//! Edits of one session run one at a time in submission order. Jobs of all
//! kinds share a pool of `workers` compute slots.

mod jobs;
mod routes;
pub mod store;
pub mod types;

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use image::RgbImage;
use satsynth::image::sha256_hex;
use satsynth::ingest::{CityRegistry, TilePair};
use satsynth::pipelines::{EditSession, EditStage, GenerativeModel};
use thiserror::Error;
use tokio::sync::{mpsc, Semaphore};

pub use routes::router;
use store::Store;
use types::{Job, JobArtifacts, JobError, JobKind, JobStatus, SessionRecord, Timeline};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("store: {0}")]
    Io(#[from] io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("session {id} cannot be restored: {detail}")]
    Restore { id: String, detail: String },
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_root: PathBuf,
    /// Jobs computing at once across all sessions.
    pub workers: usize,
    pub edit_margin: usize,
    pub cfg_scale: f64,
}

impl ServiceConfig {
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        Self { data_root: data_root.into(), workers: 2, edit_margin: satsynth::pipelines::DEFAULT_EDIT_MARGIN, cfg_scale: 1.0 }
    }
}

/// Read-only checkpoint shared by all workers.
#[derive(Debug, Clone)]
pub struct Models {
    pub image: GenerativeModel<f32>,
    pub basemap: Option<GenerativeModel<f32>>,
    pub checkpoint_hash: String,
}

impl Models {
    /// Hash over both models' parameters.
    pub fn new(image: GenerativeModel<f32>, basemap: Option<GenerativeModel<f32>>) -> Self {
        let joined = format!("{}:{}", image.param_digest(), basemap.as_ref().map(|m| m.param_digest()).unwrap_or_default());
        Self { checkpoint_hash: sha256_hex(joined.as_bytes()), image, basemap }
    }
}

struct EditWork {
    job_id: String,
    basemap: RgbImage,
}

struct SessionSlot {
    session: Mutex<EditSession>,
    record: Mutex<SessionRecord>,
    queue: Mutex<Option<mpsc::UnboundedSender<EditWork>>>,
}

struct Inner {
    cfg: ServiceConfig,
    models: Models,
    store: Store,
    registry: CityRegistry,
    sessions: Mutex<HashMap<String, Arc<SessionSlot>>>,
    jobs: Mutex<HashMap<String, Job>>,
    permits: Arc<Semaphore>,
}

#[derive(Clone)]
pub struct Service(Arc<Inner>);

pub(crate) fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl Service {
    /// Opens (or creates) the store under `data_root/service` and restores
    /// sessions and jobs. Jobs left queued or running by a previous process
    /// are marked failed with category `interrupted`, unless their stage was
    /// already recorded.
    pub fn open(cfg: ServiceConfig, models: Models) -> Result<Self, ServiceError> {
        if cfg.workers == 0 {
            return Err(ServiceError::Config("workers must be at least 1".into()));
        }
        let store = Store::open(&cfg.data_root)?;
        let mut sessions = HashMap::new();
        let records = store.load_sessions()?;
        for rec in &records {
            let slot = restore_session(&store, rec)?;
            sessions.insert(rec.id.clone(), Arc::new(slot));
        }
        let mut jobs = HashMap::new();
        for mut job in store.load_jobs()? {
            if !job.status.is_terminal() {
                let stage = records
                    .iter()
                    .filter(|r| job.session_id.as_deref() == Some(&r.id))
                    .flat_map(|r| &r.stages)
                    .find(|s| s.job_id == job.id);
                job.timeline.finished_ms = Some(now_ms());
                match stage {
                    Some(s) => {
                        job.status = JobStatus::Done;
                        job.artifacts = Some(JobArtifacts {
                            image: s.image.clone(),
                            mask: Some(s.mask.clone()),
                            basemap: Some(s.basemap.clone()),
                            stage_index: Some(s.index),
                            empty_mask: Some(store.load_mask(&s.mask)?.none_set()),
                        });
                    }
                    None => {
                        job.status = JobStatus::Failed;
                        job.error = Some(JobError::new("interrupted", "service stopped before the job finished"));
                    }
                }
                store.save_job(&job)?;
            }
            jobs.insert(job.id.clone(), job);
        }
        log::info!("service store {}: {} sessions, {} jobs", store.root().display(), sessions.len(), jobs.len());
        Ok(Self(Arc::new(Inner {
            permits: Arc::new(Semaphore::new(cfg.workers)),
            cfg,
            models,
            store,
            registry: CityRegistry::builtin(),
            sessions: Mutex::new(sessions),
            jobs: Mutex::new(jobs),
        })))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.cfg
    }

    pub fn models(&self) -> &Models {
        &self.0.models
    }

    pub fn job(&self, id: &str) -> Option<Job> {
        self.0.jobs.lock().expect("jobs lock").get(id).cloned()
    }

    pub fn session(&self, id: &str) -> Option<SessionRecord> {
        self.slot(id).map(|s| s.record.lock().expect("record lock").clone())
    }

    fn slot(&self, id: &str) -> Option<Arc<SessionSlot>> {
        self.0.sessions.lock().expect("sessions lock").get(id).cloned()
    }

    fn new_job(&self, kind: JobKind, session_id: Option<String>, inputs_digest: String) -> Job {
        Job {
            id: uuid::Uuid::new_v4().simple().to_string(),
            kind,
            status: JobStatus::Queued,
            session_id,
            inputs_digest,
            timeline: Timeline { queued_ms: now_ms(), ..Timeline::default() },
            artifacts: None,
            error: None,
        }
    }

    /// Records a job and persists it. Status only moves forward.
    fn put_job(&self, job: Job) -> io::Result<()> {
        let mut jobs = self.0.jobs.lock().expect("jobs lock");
        if let Some(old) = jobs.get(&job.id) {
            assert!(old.status <= job.status, "job {} moved back from {:?} to {:?}", job.id, old.status, job.status);
        }
        self.0.store.save_job(&job)?;
        jobs.insert(job.id.clone(), job);
        Ok(())
    }

    fn update_job(&self, id: &str, f: impl FnOnce(&mut Job)) {
        let Some(mut job) = self.job(id) else { return };
        f(&mut job);
        if let Err(e) = self.put_job(job) {
            log::error!("persisting job {id}: {e}");
        }
    }

    fn mark_running(&self, id: &str) {
        self.update_job(id, |j| {
            j.status = JobStatus::Running;
            j.timeline.started_ms = Some(now_ms());
        });
    }

    fn finish(&self, id: &str, outcome: Result<JobArtifacts, JobError>) {
        self.update_job(id, |j| {
            j.timeline.finished_ms = Some(now_ms());
            match outcome {
                Ok(a) => {
                    j.status = JobStatus::Done;
                    j.artifacts = Some(a);
                }
                Err(e) => {
                    log::warn!("job {} failed: {} {}", j.id, e.category, e.message);
                    j.status = JobStatus::Failed;
                    j.error = Some(e);
                }
            }
        });
    }
}

fn restore_session(store: &Store, rec: &SessionRecord) -> Result<SessionSlot, ServiceError> {
    let err = |e: io::Error| ServiceError::Restore { id: rec.id.clone(), detail: e.to_string() };
    let reference = TilePair {
        satellite: store.load_rgb(&rec.reference_image).map_err(err)?,
        basemap: store.load_rgb(&rec.reference_basemap).map_err(err)?,
        coord: rec.coord,
        source: rec.source,
        city: rec.city.clone(),
    };
    let mut session = EditSession::new(&rec.id, reference, &rec.city, rec.seed);
    for s in &rec.stages {
        session.stages.push(EditStage {
            basemap: store.load_rgb(&s.basemap).map_err(err)?,
            mask: store.load_mask(&s.mask).map_err(err)?,
            image: store.load_rgb(&s.image).map_err(err)?,
            seed: s.seed,
        });
    }
    Ok(SessionSlot { session: Mutex::new(session), record: Mutex::new(rec.clone()), queue: Mutex::new(None) })
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(svc: Service, addr: SocketAddr) -> io::Result<()> {
    serve_on(svc, tokio::net::TcpListener::bind(addr).await?).await
}

/// Serves on an already bound listener.
pub async fn serve_on(svc: Service, listener: tokio::net::TcpListener) -> io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(svc)).await
}
