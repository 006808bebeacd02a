use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{AdamConfig, ModelState, TrainExample};
use super::schedule::NoiseSchedule;
use super::DiffusionError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub iterations: u64,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Random joint horizontal/vertical flips of image and conditioning.
    pub flips: bool,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { iterations: 1000, batch_size: 8, optimizer: AdamConfig::default(), flips: true, seed: 0 }
    }
}

fn flipped<F: Scalar>(ex: &TrainExample<F>, h: bool, v: bool) -> TrainExample<F> {
    let f = |img: &crate::image::Image<F>| {
        let img = if h { img.flip_horizontal() } else { img.clone() };
        if v {
            img.flip_vertical()
        } else {
            img
        }
    };
    TrainExample { image: f(&ex.image), basemap: ex.basemap.as_ref().map(f), class: ex.class, aux_class: ex.aux_class }
}

/// Runs `opts.iterations` optimizer steps starting from `state.iteration`'s
/// position in the run. `on_step(iteration, loss)` is called after each step
/// and may stop training early by returning `false`.
///
/// The batch stream is a pure function of the seed and the iteration counter,
/// so a resumed run draws the same batches as an uninterrupted one.
pub fn train<F: Scalar>(
    state: &mut ModelState<F>,
    schedule: &NoiseSchedule<F>,
    data: &[TrainExample<F>],
    opts: &TrainOptions,
    mut on_step: impl FnMut(u64, F) -> bool,
) -> Result<(), DiffusionError> {
    if data.is_empty() {
        return Err(DiffusionError::EmptyBatch);
    }
    let k = opts.batch_size.clamp(1, data.len());
    while state.iteration < opts.iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(state.iteration);
        let batch: Vec<TrainExample<F>> = sample_indices(&mut rng, data.len(), k)
            .into_iter()
            .map(|i| {
                if opts.flips {
                    flipped(&data[i], rng.random(), rng.random())
                } else {
                    data[i].clone()
                }
            })
            .collect();
        let loss = state.train_step(&batch, schedule, &opts.optimizer, &mut rng)?;
        if !on_step(state.iteration, loss) {
            break;
        }
    }
    Ok(())
}
