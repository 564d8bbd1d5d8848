//! Single-level 2D Haar transform and its exact inverse.
//!
//! Each channel is split per 2x2 block (a, b; c, d) into
//! LL=(a+b+c+d)/2, LH=(a+b-c-d)/2, HL=(a-b+c-d)/2, HH=(a-b-c+d)/2.
//! The 1/2 scaling makes the block matrix symmetric orthonormal, so the
//! transform preserves energy, is its own inverse kernel, and the backward
//! pass of each direction is the forward kernel of the other.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{GradFn, Shape, Tensor};

/// Wavelet-domain feature: N x 4C x H/2 x W/2 with channel blocks ordered
/// (LL, LH, HL, HH), each block C channels wide.
pub struct WaveletPack<T: Scalar> {
    pub subbands: Tensor<T>,
}

impl<T: Scalar> WaveletPack<T> {
    pub fn new(subbands: Tensor<T>) -> Result<Self> {
        if subbands.shape().c % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "wavelet pack needs a channel count divisible by 4, got {}",
                subbands.shape().c
            )));
        }
        Ok(WaveletPack { subbands })
    }

    /// Channel count of the reconstructed image.
    pub fn image_channels(&self) -> usize {
        self.subbands.shape().c / 4
    }
}

/// Analysis kernel: image (n, c, h, w) -> subbands (n, 4c, h/2, w/2).
fn haar_forward<T: Scalar>(x: &[T], s: Shape) -> Vec<T> {
    let (hh, hw) = (s.h / 2, s.w / 2);
    let os = Shape::new(s.n, 4 * s.c, hh, hw);
    let half = T::from_f64_lossy(0.5);
    let mut out = vec![T::zero(); os.count()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..hh {
                for xw in 0..hw {
                    let a = x[s.index(n, c, 2 * y, 2 * xw)];
                    let b = x[s.index(n, c, 2 * y, 2 * xw + 1)];
                    let cc = x[s.index(n, c, 2 * y + 1, 2 * xw)];
                    let d = x[s.index(n, c, 2 * y + 1, 2 * xw + 1)];
                    out[os.index(n, c, y, xw)] = (a + b + cc + d) * half;
                    out[os.index(n, s.c + c, y, xw)] = (a + b - cc - d) * half;
                    out[os.index(n, 2 * s.c + c, y, xw)] = (a - b + cc - d) * half;
                    out[os.index(n, 3 * s.c + c, y, xw)] = (a - b - cc + d) * half;
                }
            }
        }
    }
    out
}

/// Synthesis kernel: subbands (n, 4c, h/2, w/2) -> image (n, c, h, w).
fn haar_inverse<T: Scalar>(sub: &[T], image_shape: Shape) -> Vec<T> {
    let s = image_shape;
    let (hh, hw) = (s.h / 2, s.w / 2);
    let ss = Shape::new(s.n, 4 * s.c, hh, hw);
    let half = T::from_f64_lossy(0.5);
    let mut out = vec![T::zero(); s.count()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..hh {
                for xw in 0..hw {
                    let ll = sub[ss.index(n, c, y, xw)];
                    let lh = sub[ss.index(n, s.c + c, y, xw)];
                    let hl = sub[ss.index(n, 2 * s.c + c, y, xw)];
                    let hh_ = sub[ss.index(n, 3 * s.c + c, y, xw)];
                    out[s.index(n, c, 2 * y, 2 * xw)] = (ll + lh + hl + hh_) * half;
                    out[s.index(n, c, 2 * y, 2 * xw + 1)] = (ll + lh - hl - hh_) * half;
                    out[s.index(n, c, 2 * y + 1, 2 * xw)] = (ll - lh + hl - hh_) * half;
                    out[s.index(n, c, 2 * y + 1, 2 * xw + 1)] = (ll - lh - hl + hh_) * half;
                }
            }
        }
    }
    out
}

struct DwtGrad {
    image_shape: Shape,
}

impl<T: Scalar> GradFn<T> for DwtGrad {
    fn name(&self) -> &'static str {
        "dwt2d"
    }

    fn backward(&self, grad_out: &[T], _parents: &[Tensor<T>], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(haar_inverse(grad_out, self.image_shape))]
    }
}

struct IwtGrad {
    image_shape: Shape,
}

impl<T: Scalar> GradFn<T> for IwtGrad {
    fn name(&self) -> &'static str {
        "iwt2d"
    }

    fn backward(&self, grad_out: &[T], _parents: &[Tensor<T>], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(haar_forward(grad_out, self.image_shape))]
    }
}

/// Forward Haar transform; H and W must be even.
pub fn dwt2d<T: Scalar>(x: &Tensor<T>) -> Result<WaveletPack<T>> {
    let s = x.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "dwt2d needs even spatial dims, got {}x{}",
            s.h, s.w
        )));
    }
    let data = haar_forward(&x.data(), s);
    let subbands = Tensor::from_op(
        Shape::new(s.n, 4 * s.c, s.h / 2, s.w / 2),
        data,
        vec![x.clone()],
        Box::new(DwtGrad { image_shape: s }),
    )?;
    Ok(WaveletPack { subbands })
}

/// Inverse Haar transform, the exact two-sided inverse of [`dwt2d`].
pub fn iwt2d<T: Scalar>(pack: &WaveletPack<T>) -> Result<Tensor<T>> {
    let ss = pack.subbands.shape();
    let image_shape = Shape::new(ss.n, ss.c / 4, ss.h * 2, ss.w * 2);
    let data = haar_inverse(&pack.subbands.data(), image_shape);
    Tensor::from_op(
        image_shape,
        data,
        vec![pack.subbands.clone()],
        Box::new(IwtGrad { image_shape }),
    )
}
