use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::DiffusionConfig;
use super::schedule::NoiseSchedule;
use super::unet::UNet;
use super::DiffusionError;
use crate::image::Image;
use crate::scalar::{standard_normal, Scalar};

/// Per-call conditioning. `class: None` selects the null location class;
/// `aux_class: None` selects the null auxiliary class (when the table exists).
#[derive(Debug, Clone, Copy)]
pub struct Conditioning<'a, F> {
    pub basemap: Option<&'a Image<F>>,
    pub class: Option<usize>,
    pub aux_class: Option<usize>,
}

impl<'a, F> Default for Conditioning<'a, F> {
    fn default() -> Self {
        Self { basemap: None, class: None, aux_class: None }
    }
}

impl<'a, F> Conditioning<'a, F> {
    pub fn new(basemap: Option<&'a Image<F>>, class: Option<usize>) -> Self {
        Self { basemap, class, aux_class: None }
    }

    pub fn with_aux(mut self, aux: Option<usize>) -> Self {
        self.aux_class = aux;
        self
    }

    /// Same inputs with both class labels replaced by their null rows.
    pub fn nulled(&self) -> Self {
        Self { basemap: self.basemap, class: None, aux_class: None }
    }
}

/// Read-only view of the learned location embeddings.
pub struct ClassEmbeddingTable<'a, F> {
    rows: usize,
    dim: usize,
    data: &'a [F],
}

impl<'a, F> ClassEmbeddingTable<'a, F> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lookup(&self, id: usize) -> Result<&'a [F], DiffusionError> {
        if id >= self.rows {
            return Err(DiffusionError::UnknownClass { id, known: self.rows });
        }
        Ok(&self.data[id * self.dim..(id + 1) * self.dim])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

/// Denoiser parameters, optimizer moments and iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<F> {
    pub config: DiffusionConfig,
    net: UNet,
    pub params: Vec<F>,
    pub adam_m: Vec<F>,
    pub adam_v: Vec<F>,
    pub iteration: u64,
}

/// One training item. `class: None` trains the null row directly.
#[derive(Debug, Clone)]
pub struct TrainExample<F> {
    pub image: Image<F>,
    pub basemap: Option<Image<F>>,
    pub class: Option<usize>,
    pub aux_class: Option<usize>,
}

/// A training item with its diffusion step and noise already drawn, so the
/// loss is a deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct PreparedExample<F> {
    pub noisy_input: Image<F>,
    pub eps: Image<F>,
    pub step: usize,
    pub class_row: usize,
    pub aux_row: Option<usize>,
}

impl<F: Scalar> ModelState<F> {
    pub fn new(config: DiffusionConfig, seed: u64) -> Result<Self, DiffusionError> {
        config.validate()?;
        let net = UNet::new(&config);
        let params = net.layout.initialize(seed);
        let n = params.len();
        Ok(Self {
            config,
            net,
            params,
            adam_m: vec![F::zero(); n],
            adam_v: vec![F::zero(); n],
            iteration: 0,
        })
    }

    pub(crate) fn from_parts(
        config: DiffusionConfig,
        params: Vec<F>,
        adam_m: Vec<F>,
        adam_v: Vec<F>,
        iteration: u64,
    ) -> Result<Self, DiffusionError> {
        config.validate()?;
        let net = UNet::new(&config);
        if params.len() != net.param_count() || adam_m.len() != params.len() || adam_v.len() != params.len() {
            return Err(DiffusionError::Shape(format!(
                "parameter buffer of {} values does not fit a model of {}",
                params.len(),
                net.param_count()
            )));
        }
        Ok(Self { config, net, params, adam_m, adam_v, iteration })
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn class_table(&self) -> ClassEmbeddingTable<'_, F> {
        let (slot, rows) = self.net.class_table_slot();
        ClassEmbeddingTable { rows, dim: self.net.emb_dim(), data: slot.of(&self.params) }
    }

    pub fn resolution(&self) -> usize {
        self.config.resolution
    }

    pub fn conditional(&self) -> bool {
        self.config.in_channels == 6
    }

    fn class_row(&self, class: Option<usize>) -> Result<usize, DiffusionError> {
        match class {
            None => Ok(self.config.null_class()),
            Some(id) if id < self.config.null_class() => Ok(id),
            Some(id) => Err(DiffusionError::UnknownClass { id, known: self.config.null_class() }),
        }
    }

    fn aux_row(&self, aux: Option<usize>) -> Result<Option<usize>, DiffusionError> {
        let n = self.config.aux_class_count;
        match (n, aux) {
            (0, None) => Ok(None),
            (0, Some(id)) => Err(DiffusionError::UnknownClass { id, known: 0 }),
            (_, None) => Ok(Some(n - 1)),
            (_, Some(id)) if id < n - 1 => Ok(Some(id)),
            (_, Some(id)) => Err(DiffusionError::UnknownClass { id, known: n - 1 }),
        }
    }

    fn network_input(&self, x_t: &Image<F>, basemap: Option<&Image<F>>) -> Result<Image<F>, DiffusionError> {
        let r = self.config.resolution;
        if x_t.shape() != (3, r, r) {
            return Err(DiffusionError::Shape(format!("x_t {:?}, model expects (3, {r}, {r})", x_t.shape())));
        }
        match (self.config.in_channels, basemap) {
            (3, None) => Ok(x_t.clone()),
            (3, Some(_)) => Err(DiffusionError::Conditioning("3-channel model given a basemap".into())),
            (_, None) => Err(DiffusionError::Conditioning("6-channel model requires a basemap".into())),
            (_, Some(b)) => {
                if b.shape() != (3, r, r) {
                    return Err(DiffusionError::Shape(format!("basemap {:?}, expected (3, {r}, {r})", b.shape())));
                }
                Ok(x_t.concat_channels(b))
            }
        }
    }

    /// One denoiser pass at the given conditioning.
    pub fn forward(&self, x_t: &Image<F>, t: usize, cond: &Conditioning<'_, F>) -> Result<Image<F>, DiffusionError> {
        let input = self.network_input(x_t, cond.basemap)?;
        let class = self.class_row(cond.class)?;
        let aux = self.aux_row(cond.aux_class)?;
        Ok(self.net.forward(&self.params, &input, t, class, aux).0)
    }

    /// Classifier-free guided noise estimate `u + s (c - u)`, where `u` uses the
    /// null class. `s = 0` returns the null pass and `s = 1` the conditional pass
    /// unchanged.
    pub fn predict_eps(
        &self,
        x_t: &Image<F>,
        t: usize,
        cond: &Conditioning<'_, F>,
        cfg_scale: F,
    ) -> Result<Image<F>, DiffusionError> {
        let unconditional = cond.class.is_none() && cond.aux_class.is_none();
        if unconditional || cfg_scale == F::zero() {
            // validate the labels even when only the null pass is used
            self.class_row(cond.class)?;
            self.aux_row(cond.aux_class)?;
            return self.forward(x_t, t, &cond.nulled());
        }
        if cfg_scale == F::one() {
            return self.forward(x_t, t, cond);
        }
        let c = self.forward(x_t, t, cond)?;
        let mut u = self.forward(x_t, t, &cond.nulled())?;
        for (uv, &cv) in u.data.iter_mut().zip(&c.data) {
            *uv = *uv + cfg_scale * (cv - *uv);
        }
        Ok(u)
    }

    /// Draws the step, noise and classifier-free dropout for each item.
    pub fn prepare_batch<R: Rng + ?Sized>(
        &self,
        batch: &[TrainExample<F>],
        schedule: &NoiseSchedule<F>,
        rng: &mut R,
    ) -> Result<Vec<PreparedExample<F>>, DiffusionError> {
        if batch.is_empty() {
            return Err(DiffusionError::EmptyBatch);
        }
        batch
            .iter()
            .map(|ex| {
                let class_row = self.class_row(ex.class)?;
                let aux_row = self.aux_row(ex.aux_class)?;
                let step = rng.random_range(0..schedule.steps());
                let r = self.config.resolution;
                let eps = Image::from_vec(3, r, r, (0..3 * r * r).map(|_| standard_normal(rng)).collect());
                let dropped = rng.random::<f64>() < self.config.cfg_dropout;
                let x_t = schedule.forward_noise(&ex.image, step, &eps)?;
                let noisy_input = self.network_input(&x_t, ex.basemap.as_ref())?;
                let (class_row, aux_row) = if dropped {
                    (self.config.null_class(), aux_row.map(|_| self.config.aux_class_count - 1))
                } else {
                    (class_row, aux_row)
                };
                Ok(PreparedExample { noisy_input, eps, step, class_row, aux_row })
            })
            .collect()
    }

    /// Mean squared error between predicted and true noise, and its gradient
    /// with respect to every parameter (written into `grad`, which is zeroed).
    pub fn loss_and_grad(&self, batch: &[PreparedExample<F>], grad: &mut [F]) -> F {
        grad.iter_mut().for_each(|g| *g = F::zero());
        let n_total = F::lit(batch.iter().map(|b| b.eps.data.len()).sum::<usize>() as f64);
        let two = F::lit(2.0);
        let mut loss = F::zero();
        for ex in batch {
            let (pred, cache) = self.net.forward(&self.params, &ex.noisy_input, ex.step, ex.class_row, ex.aux_row);
            let mut d_out = pred;
            for (d, &e) in d_out.data.iter_mut().zip(&ex.eps.data) {
                let diff = *d - e;
                loss = loss + diff * diff;
                *d = two * diff / n_total;
            }
            self.net.backward(&self.params, grad, cache, &d_out);
        }
        loss / n_total
    }

    pub fn loss(&self, batch: &[PreparedExample<F>]) -> F {
        let mut total = F::zero();
        let mut count = 0usize;
        for ex in batch {
            let (pred, _) = self.net.forward(&self.params, &ex.noisy_input, ex.step, ex.class_row, ex.aux_row);
            for (&p, &e) in pred.data.iter().zip(&ex.eps.data) {
                total = total + (p - e) * (p - e);
            }
            count += pred.data.len();
        }
        total / F::lit(count as f64)
    }

    pub fn adam_update(&mut self, grad: &[F], opt: &AdamConfig) {
        self.iteration += 1;
        let t = self.iteration as i32;
        let (b1, b2) = (F::lit(opt.beta1), F::lit(opt.beta2));
        let c1 = F::one() - b1.powi(t);
        let c2 = F::one() - b2.powi(t);
        let lr = F::lit(opt.learning_rate);
        let eps = F::lit(opt.epsilon);
        for (((p, m), v), &g) in self.params.iter_mut().zip(&mut self.adam_m).zip(&mut self.adam_v).zip(grad) {
            *m = b1 * *m + (F::one() - b1) * g;
            *v = b2 * *v + (F::one() - b2) * g * g;
            let step = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            *p = *p - step;
        }
    }

    /// One optimization step on a batch; returns the batch loss before the update.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        batch: &[TrainExample<F>],
        schedule: &NoiseSchedule<F>,
        opt: &AdamConfig,
        rng: &mut R,
    ) -> Result<F, DiffusionError> {
        let prepared = self.prepare_batch(batch, schedule, rng)?;
        let mut grad = vec![F::zero(); self.params.len()];
        let loss = self.loss_and_grad(&prepared, &mut grad);
        self.adam_update(&grad, opt);
        Ok(loss)
    }
}
