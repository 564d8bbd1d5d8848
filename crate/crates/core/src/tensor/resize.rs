//! Bilinear resampling between the two MSRB resolutions.

use super::{GradFn, Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-output-coordinate source taps under align-corners=false: indices of
/// the two neighbouring samples and the interpolation fraction.
fn axis_taps(out_dim: usize, in_dim: usize, scale: f64) -> Vec<(usize, usize, f64)> {
    (0..out_dim)
        .map(|o| {
            let src = (o as f64 + 0.5) / scale - 0.5;
            let i0 = src.floor();
            let f = src - i0;
            let lo = (i0.max(0.0) as usize).min(in_dim - 1);
            let hi = ((i0 + 1.0).max(0.0) as usize).min(in_dim - 1);
            (lo, hi, f.clamp(0.0, 1.0))
        })
        .collect()
}

fn out_shape(s: Shape, scale: f64) -> Result<Shape> {
    if scale == 2.0 {
        Ok(Shape::new(s.n, s.c, s.h * 2, s.w * 2))
    } else if scale == 0.5 {
        if s.h % 2 != 0 || s.w % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "downscale by 2 needs even spatial dims, got {}x{}",
                s.h, s.w
            )));
        }
        Ok(Shape::new(s.n, s.c, s.h / 2, s.w / 2))
    } else {
        Err(Error::InvalidArgument(format!(
            "resize_bilinear supports scale 0.5 or 2.0, got {scale}"
        )))
    }
}

struct ResizeGrad {
    scale: f64,
    in_shape: Shape,
}

impl<T: Scalar> GradFn<T> for ResizeGrad {
    fn name(&self) -> &'static str {
        "resize_bilinear"
    }

    fn backward(&self, grad_out: &[T], _parents: &[Tensor<T>], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let s = self.in_shape;
        let os = out_shape(s, self.scale).expect("shape validated in forward");
        let ytaps = axis_taps(os.h, s.h, self.scale);
        let xtaps = axis_taps(os.w, s.w, self.scale);
        let mut g = vec![T::zero(); s.count()];
        let in_plane = s.h * s.w;
        let out_plane = os.h * os.w;
        for nc in 0..s.n * s.c {
            let ib = nc * in_plane;
            let ob = nc * out_plane;
            for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                    let go = grad_out[ob + oy * os.w + ox];
                    let w00 = T::from_f64_lossy((1.0 - fy) * (1.0 - fx));
                    let w01 = T::from_f64_lossy((1.0 - fy) * fx);
                    let w10 = T::from_f64_lossy(fy * (1.0 - fx));
                    let w11 = T::from_f64_lossy(fy * fx);
                    g[ib + y0 * s.w + x0] += go * w00;
                    g[ib + y0 * s.w + x1] += go * w01;
                    g[ib + y1 * s.w + x0] += go * w10;
                    g[ib + y1 * s.w + x1] += go * w11;
                }
            }
        }
        vec![Some(g)]
    }
}

/// Bilinear resize by 0.5 or 2.0 with align-corners=false sampling.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    let s = x.shape();
    let os = out_shape(s, scale)?;
    let ytaps = axis_taps(os.h, s.h, scale);
    let xtaps = axis_taps(os.w, s.w, scale);
    let mut data = vec![T::zero(); os.count()];
    {
        let xd = x.data();
        let in_plane = s.h * s.w;
        let out_plane = os.h * os.w;
        for nc in 0..s.n * s.c {
            let ib = nc * in_plane;
            let ob = nc * out_plane;
            for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                    let v00 = xd[ib + y0 * s.w + x0].to_f64_lossy();
                    let v01 = xd[ib + y0 * s.w + x1].to_f64_lossy();
                    let v10 = xd[ib + y1 * s.w + x0].to_f64_lossy();
                    let v11 = xd[ib + y1 * s.w + x1].to_f64_lossy();
                    let top = v00 * (1.0 - fx) + v01 * fx;
                    let bottom = v10 * (1.0 - fx) + v11 * fx;
                    data[ob + oy * os.w + ox] =
                        T::from_f64_lossy(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
    }
    Tensor::from_op(
        os,
        data,
        vec![x.clone()],
        Box::new(ResizeGrad { scale, in_shape: s }),
    )
}
