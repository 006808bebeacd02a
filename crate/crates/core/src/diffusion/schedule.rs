use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::image::Image;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
}

/// Betas run linearly from 1e-4 to 2e-2 at 1000 steps; shorter schedules
/// scale both ends by `1000 / T` so the total noise budget stays the same.
pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 2e-2;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<F> {
    pub kind: ScheduleKind,
    pub betas: Vec<F>,
    pub alphas: Vec<F>,
    pub alpha_bars: Vec<F>,
    sqrt_alpha_bars: Vec<F>,
    sqrt_one_minus_alpha_bars: Vec<F>,
    posterior_x0_coef: Vec<F>,
    posterior_xt_coef: Vec<F>,
    posterior_std: Vec<F>,
}

impl<F: Scalar> NoiseSchedule<F> {
    pub fn build(steps: usize, kind: ScheduleKind) -> Result<Self, DiffusionError> {
        if steps < 1 {
            return Err(DiffusionError::Schedule("schedule needs at least one step".into()));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => {
                let scale = 1000.0 / steps as f64;
                let (lo, hi) = (scale * LINEAR_BETA_START, scale * LINEAR_BETA_END);
                (0..steps)
                    .map(|t| {
                        let b = if steps == 1 {
                            lo
                        } else {
                            lo + (hi - lo) * t as f64 / (steps - 1) as f64
                        };
                        b.min(MAX_BETA)
                    })
                    .collect()
            }
        };
        Ok(Self::from_betas(kind, &betas))
    }

    fn from_betas(kind: ScheduleKind, betas: &[f64]) -> Self {
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0f64;
        for b in betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        let mut x0c = Vec::new();
        let mut xtc = Vec::new();
        let mut std = Vec::new();
        for (t, &b) in betas.iter().enumerate() {
            let ab = alpha_bars[t];
            let ab_prev = if t == 0 { 1.0 } else { alpha_bars[t - 1] };
            x0c.push(b * ab_prev.sqrt() / (1.0 - ab));
            xtc.push((1.0 - ab_prev) * (1.0 - b).sqrt() / (1.0 - ab));
            std.push((b * (1.0 - ab_prev) / (1.0 - ab)).sqrt());
        }
        let cast = |v: &[f64]| v.iter().map(|&x| F::lit(x)).collect::<Vec<F>>();
        Self {
            kind,
            betas: cast(betas),
            alphas: betas.iter().map(|b| F::lit(1.0 - b)).collect(),
            sqrt_alpha_bars: alpha_bars.iter().map(|a| F::lit(a.sqrt())).collect(),
            sqrt_one_minus_alpha_bars: alpha_bars.iter().map(|a| F::lit((1.0 - a).sqrt())).collect(),
            alpha_bars: cast(&alpha_bars),
            posterior_x0_coef: x0c.iter().map(|&x| F::lit(x)).collect(),
            posterior_xt_coef: xtc.iter().map(|&x| F::lit(x)).collect(),
            posterior_std: std.iter().map(|&x| F::lit(x)).collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t >= self.steps() {
            return Err(DiffusionError::StepOutOfRange { step: t, steps: self.steps() });
        }
        Ok(())
    }

    /// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`.
    pub fn forward_noise(&self, x0: &Image<F>, t: usize, eps: &Image<F>) -> Result<Image<F>, DiffusionError> {
        self.check_step(t)?;
        if !x0.same_shape(eps) {
            return Err(DiffusionError::Shape(format!(
                "forward_noise: x0 {:?} vs eps {:?}",
                x0.shape(),
                eps.shape()
            )));
        }
        let (a, b) = (self.sqrt_alpha_bars[t], self.sqrt_one_minus_alpha_bars[t]);
        let data = x0.data.iter().zip(&eps.data).map(|(&x, &e)| a * x + b * e).collect();
        Ok(Image::from_vec(x0.channels, x0.height, x0.width, data))
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> F {
        self.sqrt_alpha_bars[t]
    }

    pub fn sqrt_one_minus_alpha_bar(&self, t: usize) -> F {
        self.sqrt_one_minus_alpha_bars[t]
    }

    /// Coefficients of the Gaussian posterior `q(x_{t-1} | x_t, x_0)`:
    /// `(x0 coefficient, x_t coefficient, standard deviation)`.
    pub fn posterior(&self, t: usize) -> (F, F, F) {
        (self.posterior_x0_coef[t], self.posterior_xt_coef[t], self.posterior_std[t])
    }
}
