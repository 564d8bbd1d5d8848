//! Floating-point scalar abstraction.
//!
//! Everything numeric in this crate is generic over [`Scalar`] so the same
//! model code runs at f32 for training and f64 for gradient checks. The
//! trait deliberately stays small: float arithmetic from `num_traits`,
//! conversions, and seeded sampling.

use rand::Rng;
use rand_distr::StandardNormal;

/// Element type tag carried by checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }
}

/// Floating-point element type usable in tensors.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    /// Lossy conversion from f64; fine for constants and schedules.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any float scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("float scalar converts to f64")
    }

    /// Uniform sample on [lo, hi).
    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> Self {
        Self::from_f64_lossy(rng.random_range(lo..hi))
    }

    /// Standard normal sample.
    fn sample_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let v: f64 = rng.sample(StandardNormal);
        Self::from_f64_lossy(v)
    }
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dtype_codes_roundtrip() {
        for d in [Dtype::F32, Dtype::F64] {
            assert_eq!(Dtype::from_code(d.code()), Some(d));
        }
        assert_eq!(Dtype::from_code(0), None);
        assert_eq!(Dtype::from_code(3), None);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..16 {
            let x: f32 = Scalar::sample_uniform(&mut a, -1.0, 1.0);
            let y: f32 = Scalar::sample_uniform(&mut b, -1.0, 1.0);
            assert_eq!(x, y);
            assert!((-1.0..1.0).contains(&x));
        }
        for _ in 0..16 {
            let x: f64 = Scalar::sample_normal(&mut a);
            let y: f64 = Scalar::sample_normal(&mut b);
            assert_eq!(x, y);
            assert!(x.is_finite());
        }
    }

    #[test]
    fn f32_f64_conversions() {
        assert_eq!(<f32 as Scalar>::from_f64_lossy(0.5), 0.5f32);
        assert_eq!(<f64 as Scalar>::from_f64_lossy(0.5), 0.5f64);
        assert_eq!(2.0f32.to_f64_lossy(), 2.0f64);
    }
}
