//! Scalar abstraction shared by every numeric module.
//!
//! The denoiser, schedule, color transfer and metric code are written once
//! against [`Scalar`] and instantiated for `f32` (production) and `f64`
//! (gradient checks and oracles).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Name written into checkpoints so a file is never loaded as the wrong width.
    const DTYPE: &'static str;
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Lossy conversion from a literal or an `f64` intermediate.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_bits().to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 4];
        b.copy_from_slice(&bytes[..4]);
        f32::from_bits(u32::from_le_bytes(b))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_bits().to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[..8]);
        f64::from_bits(u64::from_le_bytes(b))
    }
}

/// Standard-normal draw converted to `F`. All normal noise goes through here
/// so f32 and f64 runs consume identical RNG streams.
#[inline]
pub fn standard_normal<F: Scalar, R: rand::Rng + ?Sized>(rng: &mut R) -> F {
    let v: f64 = rng.sample(rand_distr::StandardNormal);
    F::lit(v)
}
