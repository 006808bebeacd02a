use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GenerativeModel, PipelineError};
use crate::diffusion::{sample, Conditioning, GuidanceHook, SampleOptions};
use crate::image::Image;
use crate::ingest::{procedural_tile, GeoCoordinate};
use crate::scalar::Scalar;

/// Image-to-image sample: the source image fills the conditioning channels
/// and `disaster_class` selects the target style.
pub fn style_transfer<F: Scalar>(
    model: &GenerativeModel<F>,
    source: &Image<F>,
    disaster_class: usize,
    guidance: Option<&GuidanceHook<F>>,
    seed: u64,
    cfg_scale: f64,
) -> Result<Image<F>, PipelineError> {
    if !model.state.conditional() {
        return Err(PipelineError::Missing(format!("model {} has no conditioning channels", model.id)));
    }
    let cond = Conditioning::new(Some(source), Some(disaster_class));
    let opts = SampleOptions::new(seed).cfg(F::lit(cfg_scale)).guided(guidance);
    Ok(sample(&model.state, &model.schedule, &cond, &opts)?)
}

/// Procedural before/after pair: the after image is darkened and covered
/// with soft smoke plumes.
pub fn disaster_pair(seed: u64, size: usize) -> Result<(RgbImage, RgbImage), PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coord = GeoCoordinate::new(rng.random_range(-60.0..60.0), rng.random_range(-170.0..170.0))?;
    let before = procedural_tile(seed, coord, size, 16)?.satellite;
    let plumes: Vec<(f64, f64, f64)> = (0..rng.random_range(2..5))
        .map(|_| {
            (
                rng.random_range(0.0..size as f64),
                rng.random_range(0.0..size as f64),
                rng.random_range(0.1..0.3) * size as f64,
            )
        })
        .collect();
    let smoke = [72.0, 70.0, 68.0];
    let mut after = RgbImage::new(size as u32, size as u32);
    for (x, y, px) in before.enumerate_pixels() {
        let alpha = plumes
            .iter()
            .map(|&(cx, cy, r)| {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                0.8 * (-d2 / (r * r)).exp()
            })
            .fold(0.0, f64::max);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let dark = px.0[c] as f64 * 0.6;
            out[c] = (dark * (1.0 - alpha) + smoke[c] * alpha).round().clamp(0.0, 255.0) as u8;
        }
        after.put_pixel(x, y, Rgb(out));
    }
    Ok((before, after))
}
