use std::path::Path;
use std::time::Duration;

use satsynth::diffusion::{Checkpoint, DiffusionConfig};
use satsynth::ingest::{
    fetch_pair, sample_coordinates, CityRegistry, GoogleStatic, HttpProvider, HttpTransport, LayerPalette,
    MapboxStatic, ProceduralProvider, Provider, ProviderClient, SourceTag, TilePair, TileStore,
};
use satsynth::pipelines::{derive_seed, GenerativeModel};

use crate::config::{ModelKind, ProviderChoice, RunConfig};
use crate::error::CliError;

pub fn require_data_root(cfg: &RunConfig) -> Result<&Path, CliError> {
    let root = cfg.paths.data_root.as_path();
    if !root.is_dir() {
        return Err(CliError::Data(format!("data root {} does not exist", root.display())));
    }
    Ok(root)
}

fn client(choice: ProviderChoice, source: SourceTag, seed: u64) -> Result<Option<Box<dyn ProviderClient>>, CliError> {
    let transport = || {
        HttpTransport::new(Duration::from_secs(30))
            .map(|t| Box::new(t) as Box<dyn satsynth::ingest::Transport>)
            .map_err(|e| CliError::Config(e.to_string()))
    };
    let c: Box<dyn ProviderClient> = match choice {
        ProviderChoice::Store => return Ok(None),
        ProviderChoice::Procedural => Box::new(ProceduralProvider { seed }),
        ProviderChoice::Mapbox => {
            Box::new(HttpProvider::new(MapboxStatic::from_env().map_err(|e| CliError::Config(e.to_string()))?, transport()?))
        }
        ProviderChoice::Google => {
            Box::new(HttpProvider::new(GoogleStatic::from_env().map_err(|e| CliError::Config(e.to_string()))?, transport()?))
        }
    };
    if !c.supports(source) {
        let hint = if source.provider == Provider::Procedural { "procedural" } else { "a matching provider" };
        return Err(CliError::Config(format!("provider {} cannot serve {source}; use {hint}", c.name())));
    }
    Ok(Some(c))
}

/// Makes sure the store holds `data.tiles_per_city` tiles of `source` for
/// each city, fetching the missing ones. Returns the number fetched.
pub fn ensure_tiles(cfg: &RunConfig, cities: &[String], source: SourceTag, size: usize) -> Result<usize, CliError> {
    let root = require_data_root(cfg)?;
    let registry = CityRegistry::builtin();
    let store = TileStore::new(root);
    let palette = LayerPalette::default();
    let client = client(cfg.data.provider, source, cfg.data.seed)?;
    let mut fetched = 0;
    for city in cities {
        let region = registry
            .get(city)
            .ok_or_else(|| CliError::Config(format!("unknown city '{city}' (known: {})", registry.names().join(", "))))?;
        let Some(client) = client.as_deref() else { continue };
        let seed = derive_seed(cfg.data.seed, &format!("tiles-{city}-{source}"));
        for coord in sample_coordinates(region, cfg.data.tiles_per_city, seed)? {
            if store.tile_dir(city, source, &coord).join("meta.json").exists() {
                continue;
            }
            let pair = fetch_pair(client, coord, source, city, size, &palette)?;
            store.save(&pair)?;
            fetched += 1;
        }
    }
    if fetched > 0 {
        log::info!("fetched {fetched} {source} tiles into {}", root.display());
    }
    Ok(fetched)
}

/// Stored tiles of `source` for `cities`, in city then tile-id order.
pub fn load_tiles(cfg: &RunConfig, cities: &[String], source: SourceTag) -> Result<Vec<TilePair>, CliError> {
    let store = TileStore::new(require_data_root(cfg)?);
    let mut out = Vec::new();
    for city in cities {
        for dir in store.list(city, source)? {
            out.push(TileStore::load_dir(&dir)?.0);
        }
    }
    Ok(out)
}

pub fn model_config(cfg: &RunConfig, kind: ModelKind) -> Result<DiffusionConfig, CliError> {
    let (in_channels, classes, aux) = match kind {
        ModelKind::Image => (6, cfg.model.cities.len(), 0),
        ModelKind::Basemap => (3, cfg.model.cities.len(), satsynth::pipelines::ManipulationClass::ALL.len()),
        ModelKind::Disaster => (6, 1, 0),
    };
    let dc = DiffusionConfig::preset(&cfg.model.preset, in_channels, classes)
        .ok_or_else(|| CliError::Config(format!("unknown preset '{}' (micro, toy, full)", cfg.model.preset)))?
        .with_aux_classes(aux);
    dc.validate()?;
    Ok(dc)
}

pub fn class_names(cfg: &RunConfig, kind: ModelKind) -> Vec<String> {
    match kind {
        ModelKind::Disaster => vec!["smoke".into()],
        _ => cfg.model.cities.clone(),
    }
}

/// Loads a trained model; a missing file is a data error.
pub fn load_model(cfg: &RunConfig, kind: ModelKind, source: SourceTag) -> Result<(GenerativeModel<f32>, String), CliError> {
    let path = cfg.checkpoint_path(kind, source);
    if !path.exists() {
        return Err(CliError::Data(format!("checkpoint {} not found; run `satsynth train` first", path.display())));
    }
    let ck = Checkpoint::<f32>::load(&path, None).map_err(|e| CliError::Data(e.to_string()))?;
    let digest = ck.digest();
    let id = format!("{}-{}", kind.name(), &digest[..12]);
    Ok((GenerativeModel::from_checkpoint(&id, ck)?, digest))
}

pub fn load_optional(
    cfg: &RunConfig,
    kind: ModelKind,
    source: SourceTag,
) -> Result<Option<(GenerativeModel<f32>, String)>, CliError> {
    if cfg.checkpoint_path(kind, source).exists() {
        load_model(cfg, kind, source).map(Some)
    } else {
        Ok(None)
    }
}
