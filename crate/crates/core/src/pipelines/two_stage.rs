use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{derive_seed, inpaint, to_image, GenerativeModel, ManipulationClass, PipelineError};
use crate::diffusion::{Conditioning, SampleOptions};
use crate::image::Bitmap;
use crate::ingest::{LayerPalette, SourceTag, TilePair};
use crate::maskgen::{Mask, MaskGenerator, SizeClass};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageProvenance {
    pub manip_class: ManipulationClass,
    pub city: String,
    pub source: SourceTag,
    pub seed: u64,
    pub basemap_seed: u64,
    pub image_seed: u64,
    pub mask_generator: MaskGenerator,
    pub mask_seed: u64,
    pub area_fraction: f64,
    pub size_class: SizeClass,
    pub basemap_model: String,
    pub image_model: String,
    pub cfg_scale: f64,
}

#[derive(Debug, Clone)]
pub struct TwoStageOutput {
    pub basemap: RgbImage,
    pub image: RgbImage,
    pub provenance: TwoStageProvenance,
}

/// Copies `reference` outside the mask and snaps generated pixels inside it
/// to the nearest palette color.
pub fn quantize_masked(generated: &RgbImage, reference: &RgbImage, mask: &Bitmap, palette: &LayerPalette) -> RgbImage {
    let mut out = reference.clone();
    for (i, (px, g)) in out.pixels_mut().zip(generated.pixels()).enumerate() {
        if mask.bits[i] {
            *px = palette.nearest(g).1;
        }
    }
    out
}

/// Masked pixels from `generated`, the rest byte-for-byte from `reference`.
pub fn paste_masked(generated: &RgbImage, reference: &RgbImage, mask: &Bitmap) -> RgbImage {
    let mut out = reference.clone();
    for (i, (px, g)) in out.pixels_mut().zip(generated.pixels()).enumerate() {
        if mask.bits[i] {
            *px = *g;
        }
    }
    out
}

/// Inpaints the basemap toward `manip_class`, then inpaints the satellite
/// image conditioned on the edited basemap.
#[allow(clippy::too_many_arguments)]
pub fn two_stage_manipulate<F: Scalar>(
    basemap_model: &GenerativeModel<F>,
    image_model: &GenerativeModel<F>,
    truth: &TilePair,
    mask: &Mask,
    manip_class: ManipulationClass,
    city: &str,
    seed: u64,
    cfg_scale: f64,
) -> Result<TwoStageOutput, PipelineError> {
    let palette = LayerPalette::default();
    let basemap_seed = derive_seed(seed, "basemap");
    let image_seed = derive_seed(seed, "image");
    let cfg = F::lit(cfg_scale);

    let basemap = (|| {
        basemap_model.check_size(&truth.basemap, "truth basemap")?;
        let reference = to_image::<F>(&truth.basemap);
        let cond = Conditioning::new(None, Some(basemap_model.class_id(city)?)).with_aux(Some(manip_class.aux_id()));
        let out = inpaint(
            &basemap_model.state,
            &basemap_model.schedule,
            &reference,
            &cond,
            &mask.bitmap,
            &SampleOptions::new(basemap_seed).cfg(cfg),
        )?;
        Ok(quantize_masked(&out.image.to_rgb8(), &truth.basemap, &mask.bitmap, &palette))
    })()
    .map_err(PipelineError::at("basemap"))?;

    let image = (|| {
        image_model.check_size(&truth.satellite, "truth satellite")?;
        let reference = to_image::<F>(&truth.satellite);
        let cond_map = to_image::<F>(&basemap);
        let cond = Conditioning::new(image_model.state.conditional().then_some(&cond_map), Some(image_model.class_id(city)?));
        let out = inpaint(
            &image_model.state,
            &image_model.schedule,
            &reference,
            &cond,
            &mask.bitmap,
            &SampleOptions::new(image_seed).cfg(cfg),
        )?;
        Ok(paste_masked(&out.image.to_rgb8(), &truth.satellite, &mask.bitmap))
    })()
    .map_err(PipelineError::at("satellite"))?;

    Ok(TwoStageOutput {
        basemap,
        image,
        provenance: TwoStageProvenance {
            manip_class,
            city: city.to_string(),
            source: truth.source,
            seed,
            basemap_seed,
            image_seed,
            mask_generator: mask.generator,
            mask_seed: mask.seed,
            area_fraction: mask.area_fraction,
            size_class: mask.size_class,
            basemap_model: basemap_model.id.clone(),
            image_model: image_model.id.clone(),
            cfg_scale,
        },
    })
}
