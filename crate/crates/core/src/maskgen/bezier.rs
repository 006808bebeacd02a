use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{largest_component, Mask, MaskError, MaskGenerator, MAX_AREA_FRACTION};
use crate::image::Bitmap;

const MIN_CONTROL_POINTS: usize = 5;
const MAX_CONTROL_POINTS: usize = 12;
const SAMPLES_PER_SEGMENT: usize = 16;
const SCALE_ITERATIONS: usize = 60;

/// Closed curve through jittered polar control points, smoothed with
/// Catmull–Rom tangents (each span is a cubic Bezier), in unit-radius units
/// around the origin.
fn random_outline(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let n = rng.random_range(MIN_CONTROL_POINTS..=MAX_CONTROL_POINTS);
    let phase = rng.random_range(0.0..TAU);
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let theta = phase + TAU * (i as f64 + rng.random_range(-0.35..0.35)) / n as f64;
            let r = rng.random_range(0.55..1.0);
            (r * theta.cos(), r * theta.sin())
        })
        .collect();
    let mut outline = Vec::with_capacity(n * SAMPLES_PER_SEGMENT);
    for i in 0..n {
        let p0 = pts[(i + n - 1) % n];
        let p1 = pts[i];
        let p2 = pts[(i + 1) % n];
        let p3 = pts[(i + 2) % n];
        // Bezier handles from Catmull–Rom tangents
        let c1 = (p1.0 + (p2.0 - p0.0) / 6.0, p1.1 + (p2.1 - p0.1) / 6.0);
        let c2 = (p2.0 - (p3.0 - p1.0) / 6.0, p2.1 - (p3.1 - p1.1) / 6.0);
        for s in 0..SAMPLES_PER_SEGMENT {
            let u = s as f64 / SAMPLES_PER_SEGMENT as f64;
            let v = 1.0 - u;
            let b = [v * v * v, 3.0 * v * v * u, 3.0 * v * u * u, u * u * u];
            outline.push((
                b[0] * p1.0 + b[1] * c1.0 + b[2] * c2.0 + b[3] * p2.0,
                b[0] * p1.1 + b[1] * c1.1 + b[2] * c2.1 + b[3] * p2.1,
            ));
        }
    }
    outline
}

fn polygon_centroid(poly: &[(f64, f64)]) -> (f64, f64) {
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        let cross = x0 * y1 - x1 * y0;
        a += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    if a.abs() < 1e-12 {
        return (0.0, 0.0);
    }
    (cx / (3.0 * a), cy / (3.0 * a))
}

/// Even-odd scanline fill sampled at pixel centers.
fn rasterize(poly: &[(f64, f64)], size: usize) -> Bitmap {
    let mut out = Bitmap::new(size, size);
    let mut xs = Vec::new();
    for y in 0..size {
        let yc = y as f64 + 0.5;
        xs.clear();
        for i in 0..poly.len() {
            let (x0, y0) = poly[i];
            let (x1, y1) = poly[(i + 1) % poly.len()];
            if (y0 <= yc && y1 > yc) || (y1 <= yc && y0 > yc) {
                xs.push(x0 + (yc - y0) / (y1 - y0) * (x1 - x0));
            }
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        for pair in xs.chunks_exact(2) {
            let start = (pair[0] - 0.5).ceil().max(0.0) as isize;
            let end = ((pair[1] - 0.5).floor() as isize).min(size as isize - 1);
            for x in start..=end {
                out.set(x as usize, y, true);
            }
        }
    }
    out
}

/// Random smooth blob whose area lands within 10% of `target_fraction`
/// (and never above 20% of the image). Deterministic given `seed`.
pub fn bezier_mask(size: usize, target_fraction: f64, seed: u64) -> Result<Mask, MaskError> {
    if !(target_fraction > 0.0 && target_fraction <= MAX_AREA_FRACTION) {
        return Err(MaskError::TargetOutOfRange(target_fraction));
    }
    if size < 8 {
        return Err(MaskError::TooSmall(size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outline = random_outline(&mut rng);
    let center = (
        rng.random_range(0.3..0.7) * size as f64,
        rng.random_range(0.3..0.7) * size as f64,
    );
    let (gx, gy) = polygon_centroid(&outline);

    let total = (size * size) as f64;
    let lo_count = (0.9 * target_fraction * total).ceil() as usize;
    let hi_count = ((1.1 * target_fraction).min(MAX_AREA_FRACTION) * total).floor() as usize;

    let render = |scale: f64| {
        let poly: Vec<(f64, f64)> = outline
            .iter()
            .map(|&(x, y)| (center.0 + (x - gx) * scale, center.1 + (y - gy) * scale))
            .collect();
        largest_component(&rasterize(&poly, size))
    };

    let (mut lo, mut hi) = (0.0, size as f64 * 2.0);
    let mut closest = 0usize;
    for _ in 0..SCALE_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let bitmap = render(mid);
        let count = bitmap.count();
        if count.abs_diff((target_fraction * total) as usize) < closest.abs_diff((target_fraction * total) as usize) {
            closest = count;
        }
        if count >= lo_count.max(1) && count <= hi_count {
            return Mask::from_bitmap(bitmap, MaskGenerator::Bezier, seed);
        }
        if count < lo_count.max(1) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(MaskError::Unreachable {
        target: target_fraction,
        closest: closest as f64 / total,
        iterations: SCALE_ITERATIONS,
    })
}
