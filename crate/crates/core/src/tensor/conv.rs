//! 2D cross-correlation with zero padding.

use super::{GradFn, Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Valid output index range along one axis for a fixed kernel offset `k`,
/// so that `o*stride + k - pad` stays inside [0, dim).
#[inline]
fn out_range(dim: usize, out_dim: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if dim + pad > k {
        ((dim + pad - k - 1) / stride + 1).min(out_dim)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn check_args<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Shape> {
    let xs = input.shape();
    let ws = weight.shape();
    if ws.h % 2 == 0 || ws.w % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "conv2d kernel dims must be odd, got {}x{}",
            ws.h, ws.w
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
    }
    if ws.c != xs.c {
        return Err(Error::ShapeMismatch(format!(
            "conv2d weight expects {} input channels, input has {}",
            ws.c, xs.c
        )));
    }
    if bias.shape() != Shape::new(1, ws.n, 1, 1) {
        return Err(Error::ShapeMismatch(format!(
            "conv2d bias must be 1x{}x1x1, got {}",
            ws.n,
            bias.shape()
        )));
    }
    Ok(ws)
}

fn out_dim(dim: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = dim + 2 * pad;
    if span < k || (span - k) % stride != 0 {
        return Err(Error::InvalidArgument(format!(
            "conv2d output size not integral: dim {dim}, kernel {k}, stride {stride}, pad {pad}"
        )));
    }
    Ok((span - k) / stride + 1)
}

struct ConvGrad {
    stride: usize,
    pad: usize,
    out: Shape,
}

impl<T: Scalar> GradFn<T> for ConvGrad {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, grad_out: &[T], parents: &[Tensor<T>], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (input, weight) = (&parents[0], &parents[1]);
        let xs = input.shape();
        let ws = weight.shape();
        let os = self.out;
        let (s, p) = (self.stride, self.pad);
        let xd = input.data();
        let wd = weight.data();

        let mut gx = if needs[0] { vec![T::zero(); xs.count()] } else { Vec::new() };
        let mut gw = if needs[1] { vec![T::zero(); ws.count()] } else { Vec::new() };
        let mut gb = if needs[2] { vec![T::zero(); ws.n] } else { Vec::new() };

        for n in 0..os.n {
            for co in 0..os.c {
                let go_base = (n * os.c + co) * os.h * os.w;
                if needs[2] {
                    let mut acc = T::zero();
                    for &g in &grad_out[go_base..go_base + os.h * os.w] {
                        acc += g;
                    }
                    gb[co] += acc;
                }
                if !needs[0] && !needs[1] {
                    continue;
                }
                for ci in 0..xs.c {
                    let x_base = (n * xs.c + ci) * xs.h * xs.w;
                    let w_base = (co * ws.c + ci) * ws.h * ws.w;
                    for ky in 0..ws.h {
                        let (ylo, yhi) = out_range(xs.h, os.h, ky, s, p);
                        for kx in 0..ws.w {
                            let (xlo, xhi) = out_range(xs.w, os.w, kx, s, p);
                            let wv = wd[w_base + ky * ws.w + kx];
                            let mut wacc = T::zero();
                            for oy in ylo..yhi {
                                let iy = oy * s + ky - p;
                                let grow = go_base + oy * os.w;
                                let xrow = x_base + iy * xs.w;
                                for ox in xlo..xhi {
                                    let ix = ox * s + kx - p;
                                    let g = grad_out[grow + ox];
                                    if needs[0] {
                                        gx[xrow + ix] += g * wv;
                                    }
                                    if needs[1] {
                                        wacc += g * xd[xrow + ix];
                                    }
                                }
                            }
                            if needs[1] {
                                gw[w_base + ky * ws.w + kx] += wacc;
                            }
                        }
                    }
                }
            }
        }
        vec![
            if needs[0] { Some(gx) } else { None },
            if needs[1] { Some(gw) } else { None },
            if needs[2] { Some(gb) } else { None },
        ]
    }
}

/// Cross-correlation of `input` [N,Cin,H,W] with `weight` [Cout,Cin,kh,kw]
/// plus `bias` [1,Cout,1,1], zero-padded by `pad` on each side.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let xs = input.shape();
    let ws = check_args(input, weight, bias, stride)?;
    let oh = out_dim(xs.h, ws.h, stride, pad)?;
    let ow = out_dim(xs.w, ws.w, stride, pad)?;
    let os = Shape::new(xs.n, ws.n, oh, ow);

    let mut data = vec![T::zero(); os.count()];
    {
        let xd = input.data();
        let wd = weight.data();
        let bd = bias.data();
        for n in 0..os.n {
            for co in 0..os.c {
                let o_base = (n * os.c + co) * oh * ow;
                data[o_base..o_base + oh * ow].fill(bd[co]);
                for ci in 0..xs.c {
                    let x_base = (n * xs.c + ci) * xs.h * xs.w;
                    let w_base = (co * ws.c + ci) * ws.h * ws.w;
                    for ky in 0..ws.h {
                        let (ylo, yhi) = out_range(xs.h, oh, ky, stride, pad);
                        for kx in 0..ws.w {
                            let (xlo, xhi) = out_range(xs.w, ow, kx, stride, pad);
                            let wv = wd[w_base + ky * ws.w + kx];
                            for oy in ylo..yhi {
                                let iy = oy * stride + ky - pad;
                                let orow = o_base + oy * ow;
                                let xrow = x_base + iy * xs.w;
                                for ox in xlo..xhi {
                                    let ix = ox * stride + kx - pad;
                                    data[orow + ox] += wv * xd[xrow + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_op(
        os,
        data,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(ConvGrad { stride, pad, out: os }),
    )
}
