//! `tiles/<city>/<source>/<lat>_<lon>/{sat.png,map.png,meta.json}`

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::palette::PALETTE_VERSION;
use super::{GeoCoordinate, IngestError, SourceTag, TilePair};
use crate::image::{load_rgb_png, save_rgb_png, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileMeta {
    pub coord: GeoCoordinate,
    pub source: SourceTag,
    pub city: String,
    /// Seconds since the Unix epoch.
    pub retrieved_at: u64,
    pub palette_version: String,
}

#[derive(Debug, Clone)]
pub struct TileStore {
    root: PathBuf,
}

impl TileStore {
    /// `data_root` holds the `tiles/` directory.
    pub fn new(data_root: &Path) -> Self {
        Self { root: data_root.join("tiles") }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn tile_id(coord: &GeoCoordinate) -> String {
        format!("{:.6}_{:.6}", coord.lat, coord.lon)
    }

    pub fn tile_dir(&self, city: &str, source: SourceTag, coord: &GeoCoordinate) -> PathBuf {
        self.root.join(city).join(source.to_string()).join(Self::tile_id(coord))
    }

    pub fn save(&self, pair: &TilePair) -> Result<PathBuf, IngestError> {
        let dir = self.tile_dir(&pair.city, pair.source, &pair.coord);
        fs::create_dir_all(&dir)?;
        save_rgb_png(&dir.join("sat.png"), &pair.satellite)?;
        save_rgb_png(&dir.join("map.png"), &pair.basemap)?;
        let meta = TileMeta {
            coord: pair.coord,
            source: pair.source,
            city: pair.city.clone(),
            retrieved_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            palette_version: PALETTE_VERSION.to_string(),
        };
        write_atomic(&dir.join("meta.json"), &serde_json::to_vec_pretty(&meta)?)?;
        Ok(dir)
    }

    pub fn load_dir(dir: &Path) -> Result<(TilePair, TileMeta), IngestError> {
        let meta: TileMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
        let pair = TilePair {
            satellite: load_rgb_png(&dir.join("sat.png"))?,
            basemap: load_rgb_png(&dir.join("map.png"))?,
            coord: meta.coord,
            source: meta.source,
            city: meta.city.clone(),
        };
        Ok((pair, meta))
    }

    pub fn load(&self, city: &str, source: SourceTag, coord: &GeoCoordinate) -> Result<TilePair, IngestError> {
        Ok(Self::load_dir(&self.tile_dir(city, source, coord))?.0)
    }

    /// Tile directories for a city and source, sorted by name.
    pub fn list(&self, city: &str, source: SourceTag) -> Result<Vec<PathBuf>, IngestError> {
        let dir = self.root.join(city).join(source.to_string());
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut out: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.join("meta.json").exists())
            .collect();
        out.sort();
        Ok(out)
    }
}
