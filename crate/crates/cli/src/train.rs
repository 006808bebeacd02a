use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use satsynth::diffusion::{
    append_metric, train, AdamConfig, Checkpoint, ModelState, NoiseSchedule, ScheduleKind, TrainExample, TrainMetric,
    TrainOptions,
};
use satsynth::image::Image;
use satsynth::ingest::LayerPalette;
use satsynth::pipelines::{derive_seed, disaster_pair, ManipulationClass};

use crate::config::{ModelKind, RunConfig};
use crate::data::{class_names, ensure_tiles, load_tiles, model_config, require_data_root};
use crate::error::CliError;

/// Window of the loss averages reported at start and end.
pub const LOSS_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub start_iteration: u64,
    pub iteration: u64,
    pub examples: usize,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
    pub param_digest: String,
    pub interrupted: bool,
}

fn examples(cfg: &RunConfig, resolution: usize) -> Result<Vec<TrainExample<f32>>, CliError> {
    let t = &cfg.train;
    let cities = &cfg.model.cities;
    match t.kind {
        ModelKind::Disaster => (0..cfg.data.tiles_per_city)
            .map(|i| {
                let (before, after) = disaster_pair(derive_seed(cfg.data.seed, &format!("disaster-{i}")), resolution)?;
                Ok(TrainExample {
                    image: Image::from_rgb8(&after),
                    basemap: Some(Image::from_rgb8(&before)),
                    class: Some(0),
                    aux_class: None,
                })
            })
            .collect(),
        kind => {
            ensure_tiles(cfg, cities, t.source, resolution)?;
            let palette = LayerPalette::default();
            let tiles = load_tiles(cfg, cities, t.source)?;
            tiles
                .iter()
                .map(|p| {
                    if p.size() != resolution {
                        return Err(CliError::Data(format!(
                            "tile {} of {} is {} px, the model expects {resolution}",
                            satsynth::ingest::TileStore::tile_id(&p.coord),
                            p.city,
                            p.size()
                        )));
                    }
                    let class = cities.iter().position(|c| *c == p.city).expect("tile listed under a roster city");
                    Ok(match kind {
                        ModelKind::Image => TrainExample {
                            image: Image::from_rgb8(&p.satellite),
                            basemap: Some(Image::from_rgb8(&p.basemap)),
                            class: Some(class),
                            aux_class: None,
                        },
                        _ => TrainExample {
                            image: Image::from_rgb8(&p.basemap),
                            basemap: None,
                            class: Some(class),
                            aux_class: Some(ManipulationClass::dominant(&p.basemap, &palette).aux_id()),
                        },
                    })
                })
                .collect()
        }
    }
}

/// Trains (or resumes) the model selected by `train.kind`, checkpointing
/// every `train.checkpoint_every` iterations and at the end. `fresh`
/// discards an existing checkpoint.
pub fn run(cfg: &RunConfig, fresh: bool, stop: &AtomicBool) -> Result<TrainSummary, CliError> {
    require_data_root(cfg)?;
    let t = &cfg.train;
    let dc = model_config(cfg, t.kind)?;
    let names = class_names(cfg, t.kind);
    let path = cfg.checkpoint_path(t.kind, t.source);
    let seed = cfg.seed();

    let mut state = if path.exists() && !fresh {
        let ck = Checkpoint::<f32>::load(&path, Some(&dc)).map_err(|e| {
            CliError::Config(format!("cannot resume {}: {e} (pass --fresh to start over)", path.display()))
        })?;
        if ck.header.schedule_steps != cfg.model.steps || ck.header.class_names != names {
            return Err(CliError::Config(format!(
                "cannot resume {}: it was trained with T={} and classes {:?}",
                path.display(),
                ck.header.schedule_steps,
                ck.header.class_names
            )));
        }
        log::info!("resuming {} at iteration {}", path.display(), ck.state.iteration);
        ck.state
    } else {
        ModelState::<f32>::new(dc.clone(), derive_seed(seed, "init"))?
    };
    let data = examples(cfg, dc.resolution)?;
    if data.is_empty() {
        return Err(CliError::Data(format!("no training examples for {} ({})", t.kind.name(), t.source)));
    }
    let schedule = NoiseSchedule::<f32>::build(cfg.model.steps, ScheduleKind::Linear)?;
    std::fs::create_dir_all(&cfg.paths.checkpoints)?;
    let metrics = path.with_extension("metrics.jsonl");
    if fresh && metrics.exists() {
        std::fs::remove_file(&metrics)?;
    }
    let start_iteration = state.iteration;
    let started = Instant::now();
    let mut losses: Vec<f64> = Vec::new();
    let mut metric_err = None;
    let mut interrupted = false;

    while state.iteration < t.iterations && !interrupted {
        let next = ((state.iteration / t.checkpoint_every) + 1) * t.checkpoint_every;
        let opts = TrainOptions {
            iterations: next.min(t.iterations),
            batch_size: t.batch_size,
            optimizer: AdamConfig::with_lr(t.learning_rate),
            flips: t.flips,
            seed,
        };
        train(&mut state, &schedule, &data, &opts, |it, loss| {
            let loss = f64::from(loss);
            losses.push(loss);
            if t.log_every > 0 && it % t.log_every == 0 {
                log::info!("iteration {it} loss {loss:.5}");
            }
            let m = TrainMetric { iteration: it, loss, wall_time_s: started.elapsed().as_secs_f64() };
            if let Err(e) = append_metric(&metrics, &m) {
                metric_err.get_or_insert(e);
            }
            if stop.load(Ordering::SeqCst) {
                interrupted = true;
            }
            !interrupted
        })?;
        Checkpoint::new(state.clone(), cfg.model.steps, names.clone()).save(&path)?;
        if let Some(e) = metric_err.take() {
            return Err(CliError::Data(format!("{}: {e}", metrics.display())));
        }
    }
    if !path.exists() {
        Checkpoint::new(state.clone(), cfg.model.steps, names.clone()).save(&path)?;
    }
    let mean = |s: &[f64]| (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64);
    let ck = Checkpoint::new(state, cfg.model.steps, names);
    Ok(TrainSummary {
        start_iteration,
        iteration: ck.state.iteration,
        examples: data.len(),
        first_loss: mean(&losses[..LOSS_WINDOW.min(losses.len())]),
        last_loss: mean(&losses[losses.len().saturating_sub(LOSS_WINDOW)..]),
        param_digest: ck.param_digest(),
        interrupted,
    })
}
