use crate::diffusion::{reverse_process, Conditioning, KnownRegion, ModelState, NoiseSchedule, SampleOptions};
use crate::image::{Bitmap, Image};
use crate::scalar::Scalar;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq)]
pub struct Inpainted<F> {
    pub image: Image<F>,
    /// The mask selected no pixels and the reference was returned as is.
    pub empty_mask: bool,
}

/// Regenerates the pixels set in `mask`, re-imposing the noised reference on
/// the rest at every step; outside the mask the result equals `reference`.
pub fn inpaint<F: Scalar>(
    state: &ModelState<F>,
    schedule: &NoiseSchedule<F>,
    reference: &Image<F>,
    cond: &Conditioning<'_, F>,
    mask: &Bitmap,
    opts: &SampleOptions<'_, F>,
) -> Result<Inpainted<F>, PipelineError> {
    if (reference.channels, reference.height, reference.width) != (3, mask.height, mask.width) {
        return Err(PipelineError::Shape(format!(
            "reference {:?} vs mask {}x{}",
            reference.shape(),
            mask.width,
            mask.height
        )));
    }
    if mask.none_set() {
        return Ok(Inpainted { image: reference.clone(), empty_mask: true });
    }
    let image = reverse_process(state, schedule, cond, opts, Some(KnownRegion { reference, generate: mask }))?;
    Ok(Inpainted { image, empty_mask: false })
}
