use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use image::RgbImage;

use super::palette::{simplify_basemap, LayerPalette};
use super::procedural::procedural_tile;
use super::{GeoCoordinate, IngestError, Provider, SourceTag, TilePair, REAL_PROVIDER_ZOOMS};

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    /// Non-success HTTP status.
    Status(u16),
    /// Connection, timeout or body error.
    Network(String),
}

impl TransportError {
    fn transient(&self) -> bool {
        match self {
            TransportError::Status(s) => *s == 429 || *s >= 500,
            TransportError::Network(_) => true,
        }
    }
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Status(s) => write!(f, "HTTP {s}"),
            TransportError::Network(e) => write!(f, "network: {e}"),
        }
    }
}

pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<Vec<u8>, TransportError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<Vec<u8>, TransportError> {
        let resp = self.client.get(url).send().map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(TransportError::Status(status.as_u16()));
        }
        resp.bytes().map(|b| b.to_vec()).map_err(|e| TransportError::Network(e.to_string()))
    }
}

/// Token bucket shared by all workers of a client.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    burst: f64,
    state: Mutex<(f64, f64)>,
    origin: Instant,
}

impl RateLimiter {
    pub fn new(rate_per_sec: f64, burst: f64) -> Self {
        Self { rate: rate_per_sec, burst, state: Mutex::new((burst, 0.0)), origin: Instant::now() }
    }

    /// Takes a token at time `now` (seconds on the limiter's clock) or
    /// returns how long to wait for one.
    pub fn try_acquire_at(&self, now: f64) -> Result<(), f64> {
        let mut st = self.state.lock().expect("rate limiter lock");
        let (tokens, last) = *st;
        let refilled = (tokens + (now - last).max(0.0) * self.rate).min(self.burst);
        if refilled >= 1.0 {
            *st = (refilled - 1.0, now.max(last));
            Ok(())
        } else {
            *st = (refilled, now.max(last));
            Err((1.0 - refilled) / self.rate)
        }
    }

    pub fn acquire(&self) {
        loop {
            let now = self.origin.elapsed().as_secs_f64();
            match self.try_acquire_at(now) {
                Ok(()) => return,
                Err(wait) => thread::sleep(Duration::from_secs_f64(wait)),
            }
        }
    }
}

impl Default for RateLimiter {
    fn default() -> Self {
        Self::new(10.0, 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 5, base_delay: Duration::from_millis(250), max_delay: Duration::from_secs(8) }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << attempt.min(20)).min(self.max_delay)
    }
}

pub trait ProviderClient: Send + Sync {
    fn name(&self) -> &'static str;
    fn supports(&self, source: SourceTag) -> bool;
    fn supported_zooms(&self) -> Vec<u8>;
    /// Satellite raster and unsimplified basemap raster.
    fn fetch_raw(&self, coord: GeoCoordinate, source: SourceTag, size: usize) -> Result<(RgbImage, RgbImage), IngestError>;
}

/// Fetches and normalizes one pair; the basemap comes back style-simplified.
pub fn fetch_pair(
    client: &dyn ProviderClient,
    coord: GeoCoordinate,
    source: SourceTag,
    city: &str,
    size: usize,
    palette: &LayerPalette,
) -> Result<TilePair, IngestError> {
    if !coord.is_valid() {
        return Err(IngestError::Coordinate { lat: coord.lat, lon: coord.lon });
    }
    if !client.supports(source) {
        if client.supported_zooms().contains(&source.zoom) {
            return Err(IngestError::WrongProvider { provider: client.name(), requested: source });
        }
        return Err(IngestError::UnsupportedZoom {
            provider: client.name(),
            zoom: source.zoom,
            supported: client.supported_zooms(),
        });
    }
    let (satellite, raw) = client.fetch_raw(coord, source, size)?;
    let pair = TilePair {
        basemap: simplify_basemap(&raw, palette),
        satellite,
        coord,
        source,
        city: city.to_string(),
    };
    pair.validate(palette)?;
    Ok(pair)
}

pub struct ProceduralProvider {
    pub seed: u64,
}

impl ProviderClient for ProceduralProvider {
    fn name(&self) -> &'static str {
        "procedural"
    }

    fn supports(&self, source: SourceTag) -> bool {
        source.provider == Provider::Procedural
    }

    fn supported_zooms(&self) -> Vec<u8> {
        (0..=22).collect()
    }

    fn fetch_raw(&self, coord: GeoCoordinate, source: SourceTag, size: usize) -> Result<(RgbImage, RgbImage), IngestError> {
        let t = procedural_tile(self.seed, coord, size, source.zoom)?;
        Ok((t.satellite, t.basemap))
    }
}

/// Static-map URL scheme of a commercial provider.
pub trait StaticMapProvider: Send + Sync {
    const NAME: &'static str;
    const PROVIDER: Provider;
    const CREDENTIAL_VAR: &'static str;
    fn satellite_url(&self, coord: GeoCoordinate, zoom: u8, size: usize) -> String;
    fn basemap_url(&self, coord: GeoCoordinate, zoom: u8, size: usize) -> String;
}

pub struct MapboxStatic {
    pub token: String,
    /// Style used for the basemap layer rendering.
    pub basemap_style: String,
}

impl MapboxStatic {
    pub fn from_env() -> Result<Self, IngestError> {
        let token = std::env::var(Self::CREDENTIAL_VAR)
            .map_err(|_| IngestError::MissingCredential { provider: Self::NAME, var: Self::CREDENTIAL_VAR })?;
        Ok(Self { token, basemap_style: "mapbox/streets-v12".into() })
    }
}

impl StaticMapProvider for MapboxStatic {
    const NAME: &'static str = "mapbox";
    const PROVIDER: Provider = Provider::Mapbox;
    const CREDENTIAL_VAR: &'static str = "MAPBOX_TOKEN";

    fn satellite_url(&self, c: GeoCoordinate, zoom: u8, size: usize) -> String {
        format!(
            "https://api.mapbox.com/styles/v1/mapbox/satellite-v9/static/{:.6},{:.6},{zoom},0/{size}x{size}?attribution=false&logo=false&access_token={}",
            c.lon, c.lat, self.token
        )
    }

    fn basemap_url(&self, c: GeoCoordinate, zoom: u8, size: usize) -> String {
        format!(
            "https://api.mapbox.com/styles/v1/{}/static/{:.6},{:.6},{zoom},0/{size}x{size}?attribution=false&logo=false&access_token={}",
            self.basemap_style, c.lon, c.lat, self.token
        )
    }
}

pub struct GoogleStatic {
    pub key: String,
}

impl GoogleStatic {
    pub fn from_env() -> Result<Self, IngestError> {
        let key = std::env::var(Self::CREDENTIAL_VAR)
            .map_err(|_| IngestError::MissingCredential { provider: Self::NAME, var: Self::CREDENTIAL_VAR })?;
        Ok(Self { key })
    }
}

impl StaticMapProvider for GoogleStatic {
    const NAME: &'static str = "google";
    const PROVIDER: Provider = Provider::Google;
    const CREDENTIAL_VAR: &'static str = "GMAPS_KEY";

    fn satellite_url(&self, c: GeoCoordinate, zoom: u8, size: usize) -> String {
        format!(
            "https://maps.googleapis.com/maps/api/staticmap?center={:.6},{:.6}&zoom={zoom}&size={size}x{size}&maptype=satellite&format=png&key={}",
            c.lat, c.lon, self.key
        )
    }

    fn basemap_url(&self, c: GeoCoordinate, zoom: u8, size: usize) -> String {
        format!(
            "https://maps.googleapis.com/maps/api/staticmap?center={:.6},{:.6}&zoom={zoom}&size={size}x{size}&maptype=roadmap&format=png&style=element:labels%7Cvisibility:off&style=feature:administrative%7Cvisibility:off&style=feature:poi%7Celement:geometry%7Cvisibility:off&key={}",
            c.lat, c.lon, self.key
        )
    }
}

/// HTTP client for a static-map provider with rate limiting and retries.
pub struct HttpProvider<P> {
    pub urls: P,
    pub transport: Box<dyn Transport>,
    pub limiter: RateLimiter,
    pub retry: RetryPolicy,
}

impl<P: StaticMapProvider> HttpProvider<P> {
    pub fn new(urls: P, transport: Box<dyn Transport>) -> Self {
        Self { urls, transport, limiter: RateLimiter::default(), retry: RetryPolicy::default() }
    }

    fn get_image(&self, url: &str) -> Result<RgbImage, IngestError> {
        let mut last = String::new();
        for attempt in 0..self.retry.max_attempts {
            self.limiter.acquire();
            match self.transport.get(url) {
                Ok(bytes) => {
                    return image::load_from_memory(&bytes)
                        .map(|i| i.to_rgb8())
                        .map_err(|e| IngestError::Decode { provider: P::NAME, detail: e.to_string() });
                }
                Err(TransportError::Status(s @ (401 | 403))) => {
                    return Err(IngestError::Auth { provider: P::NAME, status: s });
                }
                Err(e) if e.transient() => {
                    log::warn!("{}: attempt {} failed: {e}", P::NAME, attempt + 1);
                    last = e.to_string();
                    if attempt + 1 < self.retry.max_attempts {
                        thread::sleep(self.retry.delay(attempt));
                    }
                }
                Err(e) => return Err(IngestError::Request { provider: P::NAME, detail: e.to_string() }),
            }
        }
        Err(IngestError::RetriesExhausted { provider: P::NAME, attempts: self.retry.max_attempts, last })
    }
}

impl<P: StaticMapProvider> ProviderClient for HttpProvider<P> {
    fn name(&self) -> &'static str {
        P::NAME
    }

    fn supports(&self, source: SourceTag) -> bool {
        source.provider == P::PROVIDER && REAL_PROVIDER_ZOOMS.contains(&source.zoom)
    }

    fn supported_zooms(&self) -> Vec<u8> {
        REAL_PROVIDER_ZOOMS.to_vec()
    }

    fn fetch_raw(&self, coord: GeoCoordinate, source: SourceTag, size: usize) -> Result<(RgbImage, RgbImage), IngestError> {
        let sat = self.get_image(&self.urls.satellite_url(coord, source.zoom, size))?;
        let map = self.get_image(&self.urls.basemap_url(coord, source.zoom, size))?;
        if sat.dimensions() != map.dimensions() {
            return Err(IngestError::InvalidPair(format!("{:?} vs {:?}", sat.dimensions(), map.dimensions())));
        }
        Ok((sat, map))
    }
}
