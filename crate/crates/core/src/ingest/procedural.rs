//! Offline tile provider: a seamless synthetic city defined over global
//! web-mercator pixels, so neighbouring tiles line up exactly.

use image::{Rgb, RgbImage};

use super::palette::{Layer, LayerPalette};
use super::{GeoCoordinate, IngestError, SourceTag, TilePair};

pub const MIN_TILE_SIZE: usize = 16;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash(seed: u64, tag: u64, a: i64, b: i64) -> u64 {
    mix(mix(mix(seed ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ a as u64) ^ (b as u64).rotate_left(32))
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

const TAG_VLINE: u64 = 1;
const TAG_HLINE: u64 = 2;
const TAG_USE: u64 = 3;
const TAG_LOT: u64 = 4;
const TAG_TEX: u64 = 5;
const TAG_SHADE: u64 = 6;

struct Line {
    center: f64,
    width: f64,
    highway: bool,
}

struct World {
    seed: u64,
    spacing: i64,
}

impl World {
    fn new(seed: u64, size: usize) -> Self {
        Self { seed, spacing: (size as i64 / 4).max(8) }
    }

    fn line(&self, tag: u64, k: i64) -> Line {
        let g = self.spacing as f64;
        let h = hash(self.seed, tag, k, 0);
        let highway = unit(mix(h)) < 0.15;
        let base = (g / 8.0).max(2.0);
        Line {
            center: k as f64 * g + (unit(h) - 0.5) * g / 4.0,
            width: if highway { (g / 5.0).max(4.0) } else { base + (h & 1) as f64 },
            highway,
        }
    }

    /// Road layer under coordinate `v` along one axis, plus the block index.
    fn axis(&self, tag: u64, v: i64) -> (Option<Layer>, i64, f64, f64) {
        let k = v.div_euclid(self.spacing);
        let p = v as f64 + 0.5;
        let mut road = None;
        for kk in k - 1..=k + 1 {
            let l = self.line(tag, kk);
            if (p - l.center).abs() < l.width / 2.0 {
                let layer = if l.highway { Layer::Highways } else { Layer::Roads };
                if road != Some(Layer::Highways) {
                    road = Some(layer);
                }
            }
        }
        let here = self.line(tag, k);
        let block = if p < here.center { k - 1 } else { k };
        let lo = self.line(tag, block);
        let hi = self.line(tag, block + 1);
        (road, block, lo.center + lo.width / 2.0, hi.center - hi.width / 2.0)
    }

    fn layer(&self, wx: i64, wy: i64) -> Layer {
        let (rx, bx, x0, x1) = self.axis(TAG_VLINE, wx);
        let (ry, by, y0, y1) = self.axis(TAG_HLINE, wy);
        match (rx, ry) {
            (Some(Layer::Highways), _) | (_, Some(Layer::Highways)) => return Layer::Highways,
            (Some(l), _) | (_, Some(l)) => return l,
            _ => {}
        }
        let margin = (self.spacing as f64 / 16.0).max(1.0);
        let (px, py) = (wx as f64 + 0.5, wy as f64 + 0.5);
        if px < x0 + margin || px > x1 - margin || py < y0 + margin || py > y1 - margin {
            return Layer::Background;
        }
        let u = unit(hash(self.seed, TAG_USE, bx, by));
        if u < 0.5 {
            let lot = (self.spacing / 4).max(4) as f64;
            let (lx, ly) = (px - x0 - margin, py - y0 - margin);
            let (i, j) = ((lx / lot).floor(), (ly / lot).floor());
            let (fx, fy) = (lx - i * lot, ly - j * lot);
            let built = unit(hash(self.seed, TAG_LOT, bx * 64 + i as i64, by * 64 + j as i64)) < 0.75;
            if built && fx >= 1.0 && fy >= 1.0 && fx < lot - 1.0 && fy < lot - 1.0 {
                Layer::Buildings
            } else {
                Layer::Background
            }
        } else if u < 0.75 {
            Layer::Greenspace
        } else if u < 0.9 {
            Layer::Water
        } else {
            Layer::Airports
        }
    }

    fn satellite(&self, layer: Layer, wx: i64, wy: i64) -> Rgb<u8> {
        let (base, texture): ([f64; 3], f64) = match layer {
            Layer::Roads => ([105.0, 105.0, 110.0], 8.0),
            Layer::Highways => ([125.0, 120.0, 115.0], 6.0),
            Layer::Buildings => ([205.0, 198.0, 190.0], 10.0),
            Layer::Greenspace => ([62.0, 108.0, 52.0], 28.0),
            Layer::Water => ([28.0, 48.0, 72.0], 5.0),
            Layer::Airports => ([150.0, 150.0, 142.0], 8.0),
            Layer::Background => ([140.0, 128.0, 102.0], 14.0),
        };
        let g = self.spacing;
        let shade = (unit(hash(self.seed, TAG_SHADE, wx.div_euclid(g), wy.div_euclid(g))) - 0.5) * 16.0;
        let h = hash(self.seed, TAG_TEX, wx, wy);
        let mut out = [0u8; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let n = unit(h.rotate_left(21 * c as u32)) - 0.5;
            let v = base[c] + shade + texture * n * 2.0;
            *o = v.round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    }
}

/// Semantic layer of the procedural world at a global pixel, for the
/// spacing used by tiles of `size` pixels.
pub fn world_layer(seed: u64, size: usize, wx: i64, wy: i64) -> Layer {
    World::new(seed, size).layer(wx, wy)
}

/// Deterministic synthetic tile pair centred on `coord`.
pub fn procedural_tile(seed: u64, coord: GeoCoordinate, size: usize, zoom: u8) -> Result<TilePair, IngestError> {
    if size < MIN_TILE_SIZE {
        return Err(IngestError::TooSmall(size));
    }
    if !coord.is_valid() {
        return Err(IngestError::Coordinate { lat: coord.lat, lon: coord.lon });
    }
    let world = World::new(seed, size);
    let palette = LayerPalette::default();
    let (cx, cy) = coord.world_pixel(zoom);
    let (ox, oy) = (cx.round() as i64 - size as i64 / 2, cy.round() as i64 - size as i64 / 2);
    let mut basemap = RgbImage::new(size as u32, size as u32);
    let mut satellite = RgbImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let (wx, wy) = (ox + x as i64, oy + y as i64);
            let layer = world.layer(wx, wy);
            basemap.put_pixel(x as u32, y as u32, palette.color(layer));
            satellite.put_pixel(x as u32, y as u32, world.satellite(layer, wx, wy));
        }
    }
    Ok(TilePair { satellite, basemap, coord, source: SourceTag::procedural(zoom), city: String::new() })
}
