use std::sync::Arc;

use crate::image::Image;
use crate::scalar::Scalar;

/// External differentiable scorer, e.g. an image–text similarity model.
/// Returns the score of the noisy image and its gradient with respect to it.
pub trait GradientScorer<F>: Send + Sync {
    fn score_and_grad(&self, x_t: &Image<F>, t: usize) -> (F, Image<F>);
}

/// Shifts each reverse-step mean by `scale * grad`.
#[derive(Clone)]
pub struct GuidanceHook<F> {
    pub scorer: Arc<dyn GradientScorer<F>>,
    pub scale: F,
}

impl<F: Scalar> GuidanceHook<F> {
    pub fn new(scorer: Arc<dyn GradientScorer<F>>, scale: F) -> Self {
        Self { scorer, scale }
    }
}

impl<F> std::fmt::Debug for GuidanceHook<F>
where
    F: std::fmt::Debug,
{
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GuidanceHook").field("scale", &self.scale).finish_non_exhaustive()
    }
}

/// Pulls every pixel toward a fixed RGB color (in `[-1, 1]`).
/// Score is the negative mean squared distance.
#[derive(Debug, Clone)]
pub struct TargetColorScorer<F> {
    pub target: [F; 3],
}

impl<F: Scalar> GradientScorer<F> for TargetColorScorer<F> {
    fn score_and_grad(&self, x_t: &Image<F>, _t: usize) -> (F, Image<F>) {
        let mut grad = Image::zeros(x_t.channels, x_t.height, x_t.width);
        let mut score = F::zero();
        for c in 0..x_t.channels.min(3) {
            let target = self.target[c];
            for (g, &v) in grad.channel_mut(c).iter_mut().zip(x_t.channel(c)) {
                let d = v - target;
                score = score - d * d;
                *g = -d;
            }
        }
        (score / F::lit(x_t.data.len() as f64), grad)
    }
}
