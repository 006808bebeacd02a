use super::DiffusionError;
use crate::image::Image;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ColorMatch<F> {
    pub image: Image<F>,
    /// Channels of the generated image with zero variance; those were only
    /// mean-shifted.
    pub degenerate_channels: Vec<usize>,
}

impl<F> ColorMatch<F> {
    pub fn degenerate(&self) -> bool {
        !self.degenerate_channels.is_empty()
    }
}

pub(crate) fn channel_moments<F: Scalar>(v: &[F]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().map(|x| x.as_f64()).sum::<f64>() / n;
    let var = v.iter().map(|x| (x.as_f64() - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-channel affine transfer so each output channel has the reference's
/// mean and (population) standard deviation.
pub fn color_match<F: Scalar>(generated: &Image<F>, reference: &Image<F>) -> Result<ColorMatch<F>, DiffusionError> {
    if !generated.same_shape(reference) {
        return Err(DiffusionError::Shape(format!(
            "color_match: {:?} vs {:?}",
            generated.shape(),
            reference.shape()
        )));
    }
    let mut out = generated.clone();
    let mut degenerate_channels = Vec::new();
    for c in 0..generated.channels {
        let (gm, gs) = channel_moments(generated.channel(c));
        let (rm, rs) = channel_moments(reference.channel(c));
        let dst = out.channel_mut(c);
        if gs == 0.0 {
            degenerate_channels.push(c);
            for v in dst.iter_mut() {
                *v = F::lit(v.as_f64() - gm + rm);
            }
        } else {
            let gain = rs / gs;
            for v in dst.iter_mut() {
                *v = F::lit((v.as_f64() - gm) * gain + rm);
            }
        }
    }
    Ok(ColorMatch { image: out, degenerate_channels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, scale: f64, offset: f64) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_vec(3, 16, 16, (0..768).map(|_| offset + scale * rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn identity_when_reference_equals_input() {
        let g = noise(1, 0.5, 0.1);
        let m = color_match(&g, &g).unwrap();
        for (a, b) in m.image.data.iter().zip(&g.data) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(!m.degenerate());
    }

    #[test]
    fn constant_input_is_mean_shifted_and_flagged() {
        let g = Image::<f64>::zeros(3, 8, 8);
        let mut r = Image::<f64>::zeros(3, 8, 8);
        for c in 0..3 {
            for (i, v) in r.channel_mut(c).iter_mut().enumerate() {
                *v = if i % 2 == 0 { 0.1 } else { 0.3 };
            }
        }
        let m = color_match(&g, &r).unwrap();
        assert!(m.image.data.iter().all(|v| (v - 0.2).abs() < 1e-12));
        assert_eq!(m.degenerate_channels, vec![0, 1, 2]);
    }

    #[test]
    fn random_pair_statistics_match_reference() {
        for seed in 0..10 {
            let g = noise(seed, 0.3, -0.2);
            let r = noise(seed + 100, 0.7, 0.25);
            let m = color_match(&g, &r).unwrap();
            for c in 0..3 {
                let (om, os) = channel_moments(m.image.channel(c));
                let (rm, rs) = channel_moments(r.channel(c));
                assert!((om - rm).abs() < 1e-4 && (os - rs).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn transfer_is_monotone_per_channel() {
        let g = noise(4, 0.5, 0.0);
        let r = noise(5, 0.2, 0.4);
        let m = color_match(&g, &r).unwrap();
        for c in 0..3 {
            let (gc, oc) = (g.channel(c), m.image.channel(c));
            for i in 0..gc.len() {
                for j in 0..gc.len() {
                    if gc[i] < gc[j] {
                        assert!(oc[i] <= oc[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn works_in_single_precision() {
        let g = noise(7, 0.4, 0.0).map(|v| v);
        let g32 = Image::from_vec(3, 16, 16, g.data.iter().map(|&v| v as f32).collect());
        let r32 = Image::from_vec(3, 16, 16, noise(8, 0.2, 0.3).data.iter().map(|&v| v as f32).collect());
        let m = color_match(&g32, &r32).unwrap();
        for c in 0..3 {
            let (om, os) = channel_moments(m.image.channel(c));
            let (rm, rs) = channel_moments(r32.channel(c));
            assert!((om - rm).abs() < 1e-4 && (os - rs).abs() < 1e-4);
        }
    }
}
