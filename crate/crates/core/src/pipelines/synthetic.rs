use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, to_image, BasemapMode, GenerativeModel, PipelineError};
use crate::diffusion::{color_match, sample, Conditioning, SampleOptions};
use crate::image::Image;
use crate::ingest::{simplify_basemap, LayerPalette, TilePair};
use crate::scalar::{standard_normal, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub cfg_scale: f64,
    /// Match channel moments to the reference satellite image when one is given.
    pub color_match: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { cfg_scale: 1.0, color_match: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProvenance {
    pub mode: BasemapMode,
    pub city: String,
    pub class_id: usize,
    pub seed: u64,
    pub image_seed: u64,
    /// Seed of the generated basemap (Generated) or of the noise raster (None).
    pub basemap_seed: Option<u64>,
    pub cfg_scale: f64,
    pub image_model: String,
    pub basemap_model: Option<String>,
    pub color_matched: bool,
    pub color_degenerate_channels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SynthResult {
    pub image: RgbImage,
    /// Conditioning basemap produced by the basemap model (Generated mode).
    pub generated_basemap: Option<RgbImage>,
    pub provenance: SynthProvenance,
}

/// Gaussian noise raster, clipped to the image range, used as conditioning
/// when no basemap is available.
fn noise_basemap<F: Scalar>(seed: u64, r: usize) -> Image<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::from_vec(3, r, r, (0..3 * r * r).map(|_| standard_normal::<F, _>(&mut rng)).collect());
    img.clamp_unit();
    img
}

pub fn generate_fully_synthetic<F: Scalar>(
    image_model: &GenerativeModel<F>,
    basemap_model: Option<&GenerativeModel<F>>,
    mode: BasemapMode,
    city: &str,
    reference: Option<&TilePair>,
    seed: u64,
    opts: &SynthOptions,
) -> Result<SynthResult, PipelineError> {
    let class_id = image_model.class_id(city)?;
    let r = image_model.resolution();
    let image_seed = derive_seed(seed, "image");
    let cfg = F::lit(opts.cfg_scale);
    let mut generated_basemap = None;
    let mut basemap_seed = None;
    let basemap: Option<Image<F>> = if image_model.state.conditional() {
        Some(match mode {
            BasemapMode::Truth => {
                let reference = reference.ok_or_else(|| PipelineError::Missing("Truth mode requires a reference tile".into()))?;
                image_model.check_size(&reference.basemap, "reference basemap")?;
                to_image(&reference.basemap)
            }
            BasemapMode::Generated => {
                let bm = basemap_model
                    .ok_or_else(|| PipelineError::Missing("Generated mode requires a basemap model".into()))?;
                let s = derive_seed(seed, "basemap");
                basemap_seed = Some(s);
                let cond = Conditioning::new(None, Some(bm.class_id(city)?));
                let raw = sample(&bm.state, &bm.schedule, &cond, &SampleOptions::new(s).cfg(cfg))
                    .map_err(|e| PipelineError::at("basemap")(e.into()))?;
                let quantized = simplify_basemap(&raw.to_rgb8(), &LayerPalette::default());
                image_model.check_size(&quantized, "generated basemap")?;
                let img = to_image(&quantized);
                generated_basemap = Some(quantized);
                img
            }
            BasemapMode::None => {
                let s = derive_seed(seed, "noise-basemap");
                basemap_seed = Some(s);
                noise_basemap(s, r)
            }
        })
    } else {
        None
    };
    let cond = Conditioning::new(basemap.as_ref(), Some(class_id));
    let mut out = sample(&image_model.state, &image_model.schedule, &cond, &SampleOptions::new(image_seed).cfg(cfg))
        .map_err(|e| PipelineError::at("image")(e.into()))?;
    let mut degenerate = Vec::new();
    let matched = opts.color_match && reference.is_some();
    if let (true, Some(reference)) = (matched, reference) {
        image_model.check_size(&reference.satellite, "reference satellite")?;
        let m = color_match(&out, &to_image(&reference.satellite))?;
        out = m.image;
        out.clamp_unit();
        degenerate = m.degenerate_channels;
    }
    Ok(SynthResult {
        image: out.to_rgb8(),
        generated_basemap,
        provenance: SynthProvenance {
            mode,
            city: city.to_string(),
            class_id,
            seed,
            image_seed,
            basemap_seed,
            cfg_scale: opts.cfg_scale,
            image_model: image_model.id.clone(),
            basemap_model: basemap_model.filter(|_| mode == BasemapMode::Generated).map(|m| m.id.clone()),
            color_matched: matched,
            color_degenerate_channels: degenerate,
        },
    })
}
