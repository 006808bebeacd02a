use image::RgbImage;

use super::{derive_seed, inpaint, paste_masked, to_image, GenerativeModel, PipelineError};
use crate::diffusion::{Conditioning, SampleOptions};
use crate::image::Bitmap;
use crate::ingest::{palette_violations, LayerPalette, TilePair};
use crate::scalar::Scalar;

pub const DEFAULT_EDIT_MARGIN: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EditOptions {
    /// Dilation (in pixels) applied to the basemap difference.
    pub margin: usize,
    pub cfg_scale: f64,
}

impl Default for EditOptions {
    fn default() -> Self {
        Self { margin: DEFAULT_EDIT_MARGIN, cfg_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditStage {
    pub basemap: RgbImage,
    pub mask: Bitmap,
    pub image: RgbImage,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EditSession {
    pub id: String,
    pub reference: TilePair,
    pub city: String,
    pub seed: u64,
    pub stages: Vec<EditStage>,
}

impl EditSession {
    pub fn new(id: &str, reference: TilePair, city: &str, seed: u64) -> Self {
        Self { id: id.to_string(), reference, city: city.to_string(), seed, stages: Vec::new() }
    }

    pub fn current_basemap(&self) -> &RgbImage {
        self.stages.last().map_or(&self.reference.basemap, |s| &s.basemap)
    }

    pub fn current_image(&self) -> &RgbImage {
        self.stages.last().map_or(&self.reference.satellite, |s| &s.image)
    }
}

/// Pixels that differ between two basemaps, dilated by `margin`.
pub fn edit_mask(previous: &RgbImage, edited: &RgbImage, margin: usize) -> Bitmap {
    let (w, h) = previous.dimensions();
    let bits = previous.pixels().zip(edited.pixels()).map(|(a, b)| a != b).collect();
    Bitmap { width: w as usize, height: h as usize, bits }.dilate(margin)
}

/// Inpaints the current image where the basemap changed, conditioned on the
/// edited basemap, and appends the result as a new stage.
pub fn compound_edit_step<'s, F: Scalar>(
    session: &'s mut EditSession,
    model: &GenerativeModel<F>,
    edited_basemap: &RgbImage,
    opts: &EditOptions,
) -> Result<&'s EditStage, PipelineError> {
    let previous = session.current_basemap();
    if edited_basemap.dimensions() != previous.dimensions() {
        return Err(PipelineError::Shape(format!(
            "edited basemap {:?} vs session {:?}",
            edited_basemap.dimensions(),
            previous.dimensions()
        )));
    }
    let count = palette_violations(edited_basemap, &LayerPalette::default());
    if count > 0 {
        return Err(PipelineError::NonPalette { count });
    }
    let mask = edit_mask(previous, edited_basemap, opts.margin);
    let seed = derive_seed(session.seed, &format!("stage-{}", session.stages.len()));
    let current = session.current_image().clone();
    let image = if mask.none_set() {
        current
    } else {
        model.check_size(&current, "session image")?;
        let reference = to_image::<F>(&current);
        let cond_map = to_image::<F>(edited_basemap);
        let cond = Conditioning::new(model.state.conditional().then_some(&cond_map), Some(model.class_id(&session.city)?));
        let out = inpaint(&model.state, &model.schedule, &reference, &cond, &mask, &SampleOptions::new(seed).cfg(F::lit(opts.cfg_scale)))?;
        paste_masked(&out.image.to_rgb8(), &current, &mask)
    };
    session.stages.push(EditStage { basemap: edited_basemap.clone(), mask, image, seed });
    Ok(session.stages.last().expect("stage just pushed"))
}
