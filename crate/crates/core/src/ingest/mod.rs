//! Pristine tile acquisition: coordinate sampling inside city bounds,
//! provider clients (commercial static-map APIs and an offline procedural
//! world), basemap palette simplification and the on-disk tile store.

mod palette;
mod procedural;
mod provider;
mod store;

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use palette::{palette_violations, simplify_basemap, Layer, LayerPalette, PALETTE_VERSION};
pub use procedural::{procedural_tile, world_layer, MIN_TILE_SIZE};
pub use provider::{
    fetch_pair, GoogleStatic, HttpProvider, HttpTransport, MapboxStatic, ProceduralProvider, ProviderClient, RateLimiter,
    RetryPolicy, StaticMapProvider, Transport, TransportError,
};
pub use store::{TileMeta, TileStore};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid coordinate ({lat}, {lon})")]
    Coordinate { lat: f64, lon: f64 },
    #[error("invalid region '{name}': {reason}")]
    Region { name: String, reason: String },
    #[error("{provider}: zoom {zoom} not supported (supported: {supported:?})")]
    UnsupportedZoom { provider: &'static str, zoom: u8, supported: Vec<u8> },
    #[error("{provider}: gave up after {attempts} attempts: {last}")]
    RetriesExhausted { provider: &'static str, attempts: u32, last: String },
    #[error("{provider}: authentication failed (HTTP {status})")]
    Auth { provider: &'static str, status: u16 },
    #[error("{provider}: missing credential, set {var}")]
    MissingCredential { provider: &'static str, var: &'static str },
    #[error("{provider}: request failed: {detail}")]
    Request { provider: &'static str, detail: String },
    #[error("{provider}: could not decode image: {detail}")]
    Decode { provider: &'static str, detail: String },
    #[error("source {requested} does not match provider {provider}")]
    WrongProvider { provider: &'static str, requested: SourceTag },
    #[error("tile size {0} below minimum {MIN_TILE_SIZE}")]
    TooSmall(usize),
    #[error("tile pair invalid: {0}")]
    InvalidPair(String),
    #[error("unknown city '{0}'")]
    UnknownCity(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoordinate {
    pub lat: f64,
    pub lon: f64,
}

/// Web-mercator square-tile edge in pixels.
const MERCATOR_TILE: f64 = 256.0;
/// Latitude limit of the web-mercator projection.
const MAX_MERCATOR_LAT: f64 = 85.051_128_779_806_59;

impl GeoCoordinate {
    pub fn new(lat: f64, lon: f64) -> Result<Self, IngestError> {
        let c = Self { lat, lon };
        if c.is_valid() {
            Ok(c)
        } else {
            Err(IngestError::Coordinate { lat, lon })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite() && self.lon.is_finite() && self.lat.abs() <= 90.0 && self.lon.abs() <= 180.0
    }

    /// Global web-mercator pixel position at `zoom`.
    pub fn world_pixel(&self, zoom: u8) -> (f64, f64) {
        let scale = MERCATOR_TILE * f64::from(1u32 << zoom.min(30));
        let lat = self.lat.clamp(-MAX_MERCATOR_LAT, MAX_MERCATOR_LAT).to_radians();
        let x = (self.lon + 180.0) / 360.0 * scale;
        let y = (1.0 - (lat.tan() + 1.0 / lat.cos()).ln() / PI) / 2.0 * scale;
        (x, y)
    }

    pub fn from_world_pixel(x: f64, y: f64, zoom: u8) -> Self {
        let scale = MERCATOR_TILE * f64::from(1u32 << zoom.min(30));
        let lon = x / scale * 360.0 - 180.0;
        let n = PI * (1.0 - 2.0 * y / scale);
        let lat = n.sinh().atan().to_degrees();
        Self { lat, lon }
    }

    /// Coordinate `dx`, `dy` pixels away at `zoom` (y grows southwards).
    pub fn offset_pixels(&self, dx: f64, dy: f64, zoom: u8) -> Self {
        let (x, y) = self.world_pixel(zoom);
        Self::from_world_pixel(x + dx, y + dy, zoom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Provider {
    #[serde(rename = "MB")]
    Mapbox,
    #[serde(rename = "G")]
    Google,
    #[serde(rename = "PROC")]
    Procedural,
}

impl Provider {
    pub fn code(self) -> &'static str {
        match self {
            Provider::Mapbox => "MB",
            Provider::Google => "G",
            Provider::Procedural => "PROC",
        }
    }
}

/// Provider plus zoom level, written `MB16`, `G17`, `PROC16`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SourceTag {
    pub provider: Provider,
    pub zoom: u8,
}

pub const REAL_PROVIDER_ZOOMS: [u8; 3] = [16, 17, 18];

impl SourceTag {
    pub const MB16: SourceTag = SourceTag { provider: Provider::Mapbox, zoom: 16 };
    pub const G17: SourceTag = SourceTag { provider: Provider::Google, zoom: 17 };
    pub const MB18: SourceTag = SourceTag { provider: Provider::Mapbox, zoom: 18 };

    pub fn new(provider: Provider, zoom: u8) -> Result<Self, IngestError> {
        let tag = Self { provider, zoom };
        if provider != Provider::Procedural && !REAL_PROVIDER_ZOOMS.contains(&zoom) {
            return Err(IngestError::UnsupportedZoom {
                provider: provider.code(),
                zoom,
                supported: REAL_PROVIDER_ZOOMS.to_vec(),
            });
        }
        Ok(tag)
    }

    pub fn procedural(zoom: u8) -> Self {
        Self { provider: Provider::Procedural, zoom }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.provider.code(), self.zoom)
    }
}

impl FromStr for SourceTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let split = s.find(|c: char| c.is_ascii_digit()).ok_or_else(|| format!("no zoom in '{s}'"))?;
        let provider = match &s[..split] {
            "MB" => Provider::Mapbox,
            "G" => Provider::Google,
            "PROC" => Provider::Procedural,
            other => return Err(format!("unknown provider '{other}'")),
        };
        let zoom: u8 = s[split..].parse().map_err(|e| format!("bad zoom in '{s}': {e}"))?;
        SourceTag::new(provider, zoom).map_err(|e| e.to_string())
    }
}

impl Serialize for SourceTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SourceTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityRegion {
    pub name: String,
    pub bounds: GeoBounds,
    #[serde(default)]
    pub point_region: bool,
    pub provider_support: BTreeSet<SourceTag>,
}

impl CityRegion {
    pub fn new(name: &str, bounds: GeoBounds, provider_support: impl IntoIterator<Item = SourceTag>) -> Self {
        Self {
            name: name.to_string(),
            bounds,
            point_region: false,
            provider_support: provider_support.into_iter().collect(),
        }
    }

    pub fn point(name: &str, at: GeoCoordinate, provider_support: impl IntoIterator<Item = SourceTag>) -> Self {
        Self {
            name: name.to_string(),
            bounds: GeoBounds { south: at.lat, west: at.lon, north: at.lat, east: at.lon },
            point_region: true,
            provider_support: provider_support.into_iter().collect(),
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let b = &self.bounds;
        let err = |reason: &str| IngestError::Region { name: self.name.clone(), reason: reason.into() };
        let corners_ok = GeoCoordinate { lat: b.south, lon: b.west }.is_valid()
            && GeoCoordinate { lat: b.north, lon: b.east }.is_valid();
        if !corners_ok {
            return Err(err("bounds outside the globe"));
        }
        if b.south > b.north || b.west > b.east {
            return Err(err("inverted bounds"));
        }
        let degenerate = b.south == b.north || b.west == b.east;
        if degenerate && !self.point_region {
            return Err(err("degenerate bounds on a region not flagged as a point"));
        }
        if self.point_region && (b.south != b.north || b.west != b.east) {
            return Err(err("point region with extent"));
        }
        Ok(())
    }
}

/// Uniform in latitude/longitude (not area-true) within the region bounds.
pub fn sample_coordinates(region: &CityRegion, n: usize, seed: u64) -> Result<Vec<GeoCoordinate>, IngestError> {
    region.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = region.bounds;
    Ok((0..n)
        .map(|_| {
            if region.point_region {
                GeoCoordinate { lat: b.south, lon: b.west }
            } else {
                GeoCoordinate { lat: rng.random_range(b.south..b.north), lon: rng.random_range(b.west..b.east) }
            }
        })
        .collect())
}

/// City registry with unique names.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CityRegistry {
    cities: Vec<CityRegion>,
}

impl CityRegistry {
    pub fn new(cities: Vec<CityRegion>) -> Result<Self, IngestError> {
        let mut reg = Self::default();
        for c in cities {
            reg.insert(c)?;
        }
        Ok(reg)
    }

    pub fn insert(&mut self, city: CityRegion) -> Result<(), IngestError> {
        city.validate()?;
        if self.get(&city.name).is_some() {
            return Err(IngestError::Region { name: city.name, reason: "duplicate name".into() });
        }
        self.cities.push(city);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&CityRegion> {
        self.cities.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.cities.iter().map(|c| c.name.clone()).collect()
    }

    pub fn cities(&self) -> &[CityRegion] {
        &self.cities
    }

    /// Small built-in roster (approximate city-center boxes).
    pub fn builtin() -> Self {
        let all = [SourceTag::MB16, SourceTag::G17, SourceTag::procedural(16)];
        let hi = [SourceTag::MB16, SourceTag::G17, SourceTag::MB18, SourceTag::procedural(16), SourceTag::procedural(18)];
        let city = |name, s, w, n, e, tags: &[SourceTag]| {
            CityRegion::new(name, GeoBounds { south: s, west: w, north: n, east: e }, tags.iter().copied())
        };
        Self::new(vec![
            city("brussels", 50.80, 4.30, 50.89, 4.43, &hi),
            city("lisbon", 38.69, -9.23, 38.79, -9.09, &all),
            city("nairobi", -1.33, 36.75, -1.23, 36.89, &all),
            city("osaka", 34.62, 135.43, 34.74, 135.56, &all),
            city("lima", -12.12, -77.08, -12.02, -76.96, &all),
            city("warsaw", 52.18, 20.93, 52.28, 21.08, &hi),
            city("hanoi", 20.98, 105.78, 21.07, 105.88, &all),
            city("tunis", 36.77, 10.14, 36.84, 10.23, &all),
        ])
        .expect("builtin roster is valid")
    }
}

/// Co-registered satellite image and style-simplified basemap.
#[derive(Debug, Clone, PartialEq)]
pub struct TilePair {
    pub satellite: RgbImage,
    pub basemap: RgbImage,
    pub coord: GeoCoordinate,
    pub source: SourceTag,
    pub city: String,
}

impl TilePair {
    pub fn validate(&self, palette: &LayerPalette) -> Result<(), IngestError> {
        if self.satellite.dimensions() != self.basemap.dimensions() {
            return Err(IngestError::InvalidPair(format!(
                "satellite {:?} vs basemap {:?}",
                self.satellite.dimensions(),
                self.basemap.dimensions()
            )));
        }
        let bad = palette_violations(&self.basemap, palette);
        if bad > 0 {
            return Err(IngestError::InvalidPair(format!("{bad} basemap pixels outside the palette")));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.satellite.width() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> CityRegion {
        CityRegion::new("box", GeoBounds { south: 10.0, west: 20.0, north: 11.0, east: 21.0 }, [SourceTag::MB16])
    }

    #[test]
    fn zero_count_is_empty() {
        assert!(sample_coordinates(&unit_box(), 0, 7).unwrap().is_empty());
    }

    #[test]
    fn point_region_repeats_the_point() {
        let r = CityRegion::point("p", GeoCoordinate::new(1.0, 2.0).unwrap(), [SourceTag::MB16]);
        let pts = sample_coordinates(&r, 3, 0).unwrap();
        assert_eq!(pts, vec![GeoCoordinate { lat: 1.0, lon: 2.0 }; 3]);
    }

    #[test]
    fn degenerate_unflagged_region_rejected() {
        let r = CityRegion::new("line", GeoBounds { south: 1.0, west: 2.0, north: 1.0, east: 3.0 }, []);
        assert!(matches!(sample_coordinates(&r, 1, 0), Err(IngestError::Region { .. })));
    }

    #[test]
    fn empirical_means_within_three_sigma() {
        let n = 10_000;
        let pts = sample_coordinates(&unit_box(), n, 11).unwrap();
        // uniform on a unit interval: variance 1/12
        let sigma = (1.0f64 / 12.0 / n as f64).sqrt();
        let lat = pts.iter().map(|p| p.lat).sum::<f64>() / n as f64;
        let lon = pts.iter().map(|p| p.lon).sum::<f64>() / n as f64;
        assert!((lat - 10.5).abs() < 3.0 * sigma, "{lat}");
        assert!((lon - 20.5).abs() < 3.0 * sigma, "{lon}");
    }

    #[test]
    fn grid_chi_square_uniformity() {
        let n = 10_000;
        let pts = sample_coordinates(&unit_box(), n, 5).unwrap();
        let mut counts = [0usize; 16];
        for p in &pts {
            let i = ((p.lat - 10.0) * 4.0).floor().min(3.0) as usize;
            let j = ((p.lon - 20.0) * 4.0).floor().min(3.0) as usize;
            counts[i * 4 + j] += 1;
        }
        let e = n as f64 / 16.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 15 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 37.697, "chi2 {chi2}");
    }

    #[test]
    fn source_tags_parse_and_print() {
        for s in ["MB16", "G17", "MB18", "PROC12"] {
            assert_eq!(s.parse::<SourceTag>().unwrap().to_string(), s);
        }
        assert!("MB12".parse::<SourceTag>().is_err());
        assert_eq!(serde_json::to_string(&SourceTag::G17).unwrap(), "\"G17\"");
    }

    #[test]
    fn mercator_roundtrip_and_offset() {
        let c = GeoCoordinate::new(50.85, 4.35).unwrap();
        let (x, y) = c.world_pixel(16);
        let back = GeoCoordinate::from_world_pixel(x, y, 16);
        assert!((back.lat - c.lat).abs() < 1e-9 && (back.lon - c.lon).abs() < 1e-9);
        let east = c.offset_pixels(256.0, 0.0, 16);
        let (x2, y2) = east.world_pixel(16);
        assert!((x2 - x - 256.0).abs() < 1e-6 && (y2 - y).abs() < 1e-6);
    }

    #[test]
    fn builtin_registry_names_unique() {
        let reg = CityRegistry::builtin();
        let mut names = reg.names();
        names.dedup();
        assert_eq!(names.len(), reg.cities().len());
        let mut dup = reg.clone();
        assert!(dup.insert(reg.cities()[0].clone()).is_err());
    }
}
