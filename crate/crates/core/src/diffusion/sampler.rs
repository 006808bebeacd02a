//! Ancestral reverse process with optional external-scorer guidance and
//! per-step replacement of known pixels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::guidance::GuidanceHook;
use super::model::{Conditioning, ModelState};
use super::schedule::NoiseSchedule;
use super::DiffusionError;
use crate::image::{Bitmap, Image};
use crate::scalar::{standard_normal, Scalar};

/// RNG stream for the reverse-process noise. Known-region noise uses a
/// separate stream so a full mask consumes exactly the same draws as
/// unmasked sampling.
const SAMPLER_STREAM: u64 = 0;
const KNOWN_REGION_STREAM: u64 = 1;

#[derive(Debug, Clone)]
pub struct SampleOptions<'a, F> {
    pub cfg_scale: F,
    pub guidance: Option<&'a GuidanceHook<F>>,
    pub seed: u64,
    /// Repeat each step this many times with a one-step re-noise in between
    /// (RePaint-style resampling); 1 disables it.
    pub resample: usize,
}

impl<'a, F: Scalar> SampleOptions<'a, F> {
    pub fn new(seed: u64) -> Self {
        Self { cfg_scale: F::one(), guidance: None, seed, resample: 1 }
    }

    pub fn cfg(mut self, scale: F) -> Self {
        self.cfg_scale = scale;
        self
    }

    pub fn guided(mut self, hook: Option<&'a GuidanceHook<F>>) -> Self {
        self.guidance = hook;
        self
    }
}

/// Pixels outside `generate` are pinned to `reference` (noised to the
/// current step) throughout sampling and restored exactly at the end.
#[derive(Debug, Clone, Copy)]
pub struct KnownRegion<'a, F> {
    pub reference: &'a Image<F>,
    pub generate: &'a Bitmap,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn noise_image<F: Scalar>(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Image<F> {
    Image::from_vec(c, h, w, (0..c * h * w).map(|_| standard_normal(rng)).collect())
}

/// Mean of `p(x_{t-1} | x_t)` from a noise estimate, clipping the implied
/// clean image to `[-1, 1]`.
pub fn posterior_mean<F: Scalar>(schedule: &NoiseSchedule<F>, x_t: &Image<F>, t: usize, eps: &Image<F>) -> Image<F> {
    let (sa, sb) = (schedule.sqrt_alpha_bar(t), schedule.sqrt_one_minus_alpha_bar(t));
    let (c0, ct, _) = schedule.posterior(t);
    let one = F::one();
    let data = x_t
        .data
        .iter()
        .zip(&eps.data)
        .map(|(&x, &e)| {
            let x0 = ((x - sb * e) / sa).max(-one).min(one);
            c0 * x0 + ct * x
        })
        .collect();
    Image::from_vec(x_t.channels, x_t.height, x_t.width, data)
}

fn merge_known<F: Scalar>(x: &mut Image<F>, known: &Image<F>, generate: &Bitmap) {
    let n = x.plane_len();
    for c in 0..x.channels {
        let (dst, src) = (&mut x.data[c * n..(c + 1) * n], &known.data[c * n..(c + 1) * n]);
        for ((d, &s), &g) in dst.iter_mut().zip(src).zip(&generate.bits) {
            if !g {
                *d = s;
            }
        }
    }
}

fn reverse_step<F: Scalar>(
    state: &ModelState<F>,
    schedule: &NoiseSchedule<F>,
    x_t: &Image<F>,
    t: usize,
    cond: &Conditioning<'_, F>,
    opts: &SampleOptions<'_, F>,
    rng: &mut ChaCha8Rng,
) -> Result<Image<F>, DiffusionError> {
    let eps = state.predict_eps(x_t, t, cond, opts.cfg_scale)?;
    let mut mean = posterior_mean(schedule, x_t, t, &eps);
    if let Some(hook) = opts.guidance {
        if !hook.scale.is_finite() {
            return Err(DiffusionError::Guidance("guidance scale is not finite".into()));
        }
        if hook.scale != F::zero() {
            let (_, grad) = hook.scorer.score_and_grad(x_t, t);
            if !grad.same_shape(x_t) {
                return Err(DiffusionError::Guidance(format!(
                    "scorer gradient {:?} does not match image {:?}",
                    grad.shape(),
                    x_t.shape()
                )));
            }
            for (m, &g) in mean.data.iter_mut().zip(&grad.data) {
                *m = *m + hook.scale * g;
            }
        }
    }
    if t > 0 {
        let (_, _, std) = schedule.posterior(t);
        for m in mean.data.iter_mut() {
            *m = *m + std * standard_normal::<F, _>(rng);
        }
    }
    Ok(mean)
}

/// Full reverse process from pure noise. Deterministic given `opts.seed`;
/// output clipped to `[-1, 1]`.
pub fn reverse_process<F: Scalar>(
    state: &ModelState<F>,
    schedule: &NoiseSchedule<F>,
    cond: &Conditioning<'_, F>,
    opts: &SampleOptions<'_, F>,
    known: Option<KnownRegion<'_, F>>,
) -> Result<Image<F>, DiffusionError> {
    let r = state.resolution();
    if let Some(k) = known {
        if k.reference.shape() != (3, r, r) || (k.generate.width, k.generate.height) != (r, r) {
            return Err(DiffusionError::Shape(format!(
                "known region {:?} / mask {}x{} vs model resolution {r}",
                k.reference.shape(),
                k.generate.width,
                k.generate.height
            )));
        }
    }
    let mut rng = stream_rng(opts.seed, SAMPLER_STREAM);
    let mut known_rng = stream_rng(opts.seed, KNOWN_REGION_STREAM);
    let mut x = noise_image::<F>(&mut rng, 3, r, r);
    let repeats = opts.resample.max(1);
    for t in (0..schedule.steps()).rev() {
        for rep in 0..repeats {
            if let Some(k) = known {
                let eps = noise_image::<F>(&mut known_rng, 3, r, r);
                let noised = schedule.forward_noise(k.reference, t, &eps)?;
                merge_known(&mut x, &noised, k.generate);
            }
            let prev = reverse_step(state, schedule, &x, t, cond, opts, &mut rng)?;
            if rep + 1 < repeats && t > 0 {
                // one forward step back up to t
                let (a, b) = (schedule.alphas[t].sqrt(), schedule.betas[t].sqrt());
                x = prev;
                for v in x.data.iter_mut() {
                    *v = a * *v + b * standard_normal::<F, _>(&mut rng);
                }
            } else {
                x = prev;
                break;
            }
        }
    }
    x.clamp_unit();
    if let Some(k) = known {
        merge_known(&mut x, k.reference, k.generate);
    }
    Ok(x)
}

pub fn sample<F: Scalar>(
    state: &ModelState<F>,
    schedule: &NoiseSchedule<F>,
    cond: &Conditioning<'_, F>,
    opts: &SampleOptions<'_, F>,
) -> Result<Image<F>, DiffusionError> {
    reverse_process(state, schedule, cond, opts, None)
}
