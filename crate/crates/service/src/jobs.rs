use std::sync::Arc;

use base64::Engine;
use image::RgbImage;
use satsynth::diffusion::{Conditioning, SampleOptions};
use satsynth::image::{decode_png_gray, decode_png_rgb, Bitmap, Image};
use satsynth::ingest::{procedural_tile, GeoCoordinate, LayerPalette, SourceTag, TilePair};
use satsynth::maskgen::Mask;
use satsynth::pipelines::{
    compound_edit_step, generate_fully_synthetic, inpaint, paste_masked, two_stage_manipulate, BasemapMode, EditOptions,
    ManipulationClass, PipelineError, SynthOptions,
};
use tokio::sync::mpsc;

use crate::types::{JobArtifacts, JobError, PixelDiagnostics, StageRecord};
use crate::{EditWork, Service, SessionSlot};

const DIAGNOSTIC_SAMPLES: usize = 16;

/// Decoded inputs of a `/jobs` request.
pub(crate) enum Work {
    Sample { city: String, seed: u64, basemap: Option<RgbImage>, cfg: f64 },
    Inpaint { city: String, seed: u64, image: RgbImage, mask: Bitmap, basemap: Option<RgbImage>, cfg: f64 },
    TwoStage { city: String, seed: u64, truth: TilePair, mask: Mask, class: ManipulationClass, cfg: f64 },
}

fn io_err(e: std::io::Error) -> JobError {
    JobError::new("internal", e.to_string())
}

pub(crate) fn pipeline_err(e: PipelineError) -> JobError {
    let category = match &e {
        PipelineError::NonPalette { .. } => "non_palette",
        PipelineError::Shape(_) => "shape",
        PipelineError::Mask(_) => "mask",
        PipelineError::UnknownCity { .. } => "unknown_city",
        _ => "generation",
    };
    JobError::new(category, e.to_string())
}

pub(crate) fn decode_base64_png(what: &str, payload: &str) -> Result<Vec<u8>, JobError> {
    let body = payload.split_once("base64,").map_or(payload, |(_, b)| b).trim();
    base64::engine::general_purpose::STANDARD
        .decode(body)
        .map_err(|e| JobError::new("decode", format!("{what}: invalid base64: {e}")))
}

pub(crate) fn decode_rgb(what: &str, payload: &str, size: (u32, u32)) -> Result<RgbImage, JobError> {
    let bytes = decode_base64_png(what, payload)?;
    let img = decode_png_rgb(&bytes).map_err(|e| JobError::new("decode", format!("{what}: not a PNG: {e}")))?;
    if img.dimensions() != size {
        return Err(JobError::new("shape", format!("{what} is {:?}, expected {size:?}", img.dimensions())));
    }
    Ok(img)
}

pub(crate) fn decode_mask(what: &str, payload: &str, size: (u32, u32)) -> Result<Bitmap, JobError> {
    let bytes = decode_base64_png(what, payload)?;
    let img = decode_png_gray(&bytes).map_err(|e| JobError::new("decode", format!("{what}: not a PNG: {e}")))?;
    if img.dimensions() != size {
        return Err(JobError::new("shape", format!("{what} is {:?}, expected {size:?}", img.dimensions())));
    }
    Ok(Bitmap::from_gray(&img))
}

/// Rejects basemaps with off-palette pixels, reporting where they are.
pub(crate) fn check_palette(what: &str, img: &RgbImage) -> Result<(), JobError> {
    let palette = LayerPalette::default();
    let bad: Vec<(u32, u32, [u8; 3])> =
        img.enumerate_pixels().filter(|(_, _, p)| !palette.contains(p)).map(|(x, y, p)| (x, y, p.0)).collect();
    if bad.is_empty() {
        return Ok(());
    }
    let samples =
        bad.iter().take(DIAGNOSTIC_SAMPLES).map(|&(x, y, c)| [x, y, c[0].into(), c[1].into(), c[2].into()]).collect();
    Err(JobError {
        category: "non_palette".into(),
        message: format!("{what} has {} pixels outside the palette", bad.len()),
        pixels: Some(PixelDiagnostics { width: img.width(), height: img.height(), offending: bad.len(), samples }),
    })
}

/// Procedural reference tile for a session without one.
pub(crate) fn procedural_reference(svc: &Service, city: &str, seed: u64, size: usize) -> Result<TilePair, PipelineError> {
    let coord = svc
        .0
        .registry
        .get(city)
        .and_then(|r| satsynth::ingest::sample_coordinates(r, 1, seed).ok())
        .and_then(|c| c.first().copied())
        .unwrap_or(GeoCoordinate { lat: 0.0, lon: 0.0 });
    let mut pair = procedural_tile(satsynth::pipelines::derive_seed(seed, "reference"), coord, size, 16)?;
    pair.city = city.to_string();
    Ok(pair)
}

impl Service {
    pub(crate) fn enqueue_edit(&self, slot: &Arc<SessionSlot>, job_id: String, basemap: RgbImage) {
        let mut q = slot.queue.lock().expect("queue lock");
        let tx = q.get_or_insert_with(|| {
            let (tx, rx) = mpsc::unbounded_channel();
            tokio::spawn(session_worker(self.clone(), slot.clone(), rx));
            tx
        });
        if tx.send(EditWork { job_id: job_id.clone(), basemap }).is_err() {
            self.finish(&job_id, Err(JobError::new("internal", "session worker stopped")));
        }
    }

    pub(crate) fn spawn_job(&self, job_id: String, work: Work) {
        let svc = self.clone();
        tokio::spawn(async move {
            let _permit = svc.0.permits.clone().acquire_owned().await.expect("semaphore open");
            svc.mark_running(&job_id);
            let worker = svc.clone();
            let outcome = tokio::task::spawn_blocking(move || worker.run(work))
                .await
                .unwrap_or_else(|e| Err(JobError::new("internal", format!("worker panicked: {e}"))));
            svc.finish(&job_id, outcome);
        });
    }

    fn run(&self, work: Work) -> Result<JobArtifacts, JobError> {
        let models = &self.0.models;
        let store = &self.0.store;
        match work {
            Work::Sample { city, seed, basemap, cfg } => {
                let reference = basemap.map(|b| TilePair {
                    satellite: b.clone(),
                    basemap: b,
                    coord: GeoCoordinate { lat: 0.0, lon: 0.0 },
                    source: SourceTag::procedural(16),
                    city: city.clone(),
                });
                let mode = match (&reference, &models.basemap) {
                    (Some(_), _) => BasemapMode::Truth,
                    (None, Some(_)) => BasemapMode::Generated,
                    (None, None) => BasemapMode::None,
                };
                let out = generate_fully_synthetic(
                    &models.image,
                    models.basemap.as_ref(),
                    mode,
                    &city,
                    reference.as_ref(),
                    seed,
                    &SynthOptions { cfg_scale: cfg, color_match: false },
                )
                .map_err(pipeline_err)?;
                let basemap = out.generated_basemap.as_ref().or(reference.as_ref().map(|r| &r.basemap));
                Ok(JobArtifacts {
                    image: store.put_rgb(&out.image).map_err(io_err)?,
                    mask: None,
                    basemap: basemap.map(|b| store.put_rgb(b)).transpose().map_err(io_err)?,
                    stage_index: None,
                    empty_mask: None,
                })
            }
            Work::Inpaint { city, seed, image, mask, basemap, cfg } => {
                let m = &models.image;
                let reference = Image::<f32>::from_rgb8(&image);
                let cond_map = basemap.as_ref().map(Image::<f32>::from_rgb8);
                let class = m.class_id(&city).map_err(pipeline_err)?;
                let cond = Conditioning::new(cond_map.as_ref().filter(|_| m.state.conditional()), Some(class));
                let out = inpaint(&m.state, &m.schedule, &reference, &cond, &mask, &SampleOptions::new(seed).cfg(cfg as f32))
                    .map_err(pipeline_err)?;
                let merged = paste_masked(&out.image.to_rgb8(), &image, &mask);
                Ok(JobArtifacts {
                    image: store.put_rgb(&merged).map_err(io_err)?,
                    mask: Some(store.put_mask(&mask).map_err(io_err)?),
                    basemap: basemap.as_ref().map(|b| store.put_rgb(b)).transpose().map_err(io_err)?,
                    stage_index: None,
                    empty_mask: Some(out.empty_mask),
                })
            }
            Work::TwoStage { city, seed, truth, mask, class, cfg } => {
                let bm = models.basemap.as_ref().ok_or_else(|| JobError::new("generation", "no basemap model loaded"))?;
                let out = two_stage_manipulate(bm, &models.image, &truth, &mask, class, &city, seed, cfg).map_err(pipeline_err)?;
                Ok(JobArtifacts {
                    image: store.put_rgb(&out.image).map_err(io_err)?,
                    mask: Some(store.put_mask(&mask.bitmap).map_err(io_err)?),
                    basemap: Some(store.put_rgb(&out.basemap).map_err(io_err)?),
                    stage_index: None,
                    empty_mask: Some(mask.bitmap.none_set()),
                })
            }
        }
    }

    /// Runs one edit step and records the stage. On any failure the session
    /// is left as it was.
    fn run_edit(&self, slot: &SessionSlot, job_id: &str, basemap: &RgbImage) -> Result<JobArtifacts, JobError> {
        let store = &self.0.store;
        let opts = EditOptions { margin: self.0.cfg.edit_margin, cfg_scale: self.0.cfg.cfg_scale };
        let mut session = slot.session.lock().expect("session lock");
        compound_edit_step(&mut session, &self.0.models.image, basemap, &opts).map_err(pipeline_err)?;
        let index = session.stages.len() - 1;
        let stored = (|| {
            let stage = &session.stages[index];
            Ok::<_, std::io::Error>(StageRecord {
                index,
                job_id: job_id.to_string(),
                seed: stage.seed,
                basemap: store.put_rgb(&stage.basemap)?,
                mask: store.put_mask(&stage.mask)?,
                image: store.put_rgb(&stage.image)?,
            })
        })();
        let empty = session.stages[index].mask.none_set();
        let rec = match stored {
            Ok(rec) => rec,
            Err(e) => {
                session.stages.pop();
                return Err(io_err(e));
            }
        };
        let mut record = slot.record.lock().expect("record lock");
        record.stages.push(rec.clone());
        if let Err(e) = store.save_session(&record) {
            record.stages.pop();
            session.stages.pop();
            return Err(io_err(e));
        }
        Ok(JobArtifacts {
            image: rec.image,
            mask: Some(rec.mask),
            basemap: Some(rec.basemap),
            stage_index: Some(index),
            empty_mask: Some(empty),
        })
    }
}

/// Drains one session's edit queue in order. The queue lives as long as the
/// session.
async fn session_worker(svc: Service, slot: Arc<SessionSlot>, mut rx: mpsc::UnboundedReceiver<EditWork>) {
    while let Some(work) = rx.recv().await {
        let _permit = svc.0.permits.clone().acquire_owned().await.expect("semaphore open");
        svc.mark_running(&work.job_id);
        let (worker, slot2, id) = (svc.clone(), slot.clone(), work.job_id.clone());
        let outcome = tokio::task::spawn_blocking(move || worker.run_edit(&slot2, &id, &work.basemap))
            .await
            .unwrap_or_else(|e| Err(JobError::new("internal", format!("worker panicked: {e}"))));
        svc.finish(&work.job_id, outcome);
    }
}
