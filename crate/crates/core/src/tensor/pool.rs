//! Pooling over spatial windows, whole planes, or across channels.

use super::{GradFn, Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolScope {
    /// Whole H x W plane per (n, c); output N x C x 1 x 1.
    Global,
    /// Across channels per pixel; output N x 1 x H x W.
    Channel,
    /// Non-overlapping k x k windows; k must divide H and W.
    Window(usize),
}

struct PoolGrad {
    kind: PoolKind,
    scope: PoolScope,
    in_shape: Shape,
    /// Flat input index of the first maximum per output element (max only).
    argmax: Vec<usize>,
}

impl<T: Scalar> GradFn<T> for PoolGrad {
    fn name(&self) -> &'static str {
        "pool"
    }

    fn backward(&self, grad_out: &[T], _parents: &[Tensor<T>], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let s = self.in_shape;
        let mut g = vec![T::zero(); s.count()];
        match self.kind {
            PoolKind::Max => {
                for (oi, &src) in self.argmax.iter().enumerate() {
                    g[src] += grad_out[oi];
                }
            }
            PoolKind::Mean => match self.scope {
                PoolScope::Global => {
                    let inv = T::one() / T::from_f64_lossy((s.h * s.w) as f64);
                    for nc in 0..s.n * s.c {
                        let gv = grad_out[nc] * inv;
                        for v in &mut g[nc * s.h * s.w..(nc + 1) * s.h * s.w] {
                            *v = gv;
                        }
                    }
                }
                PoolScope::Channel => {
                    let inv = T::one() / T::from_f64_lossy(s.c as f64);
                    let plane = s.h * s.w;
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let base = (n * s.c + c) * plane;
                            for i in 0..plane {
                                g[base + i] = grad_out[n * plane + i] * inv;
                            }
                        }
                    }
                }
                PoolScope::Window(k) => {
                    let inv = T::one() / T::from_f64_lossy((k * k) as f64);
                    let (oh, ow) = (s.h / k, s.w / k);
                    for n in 0..s.n {
                        for c in 0..s.c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let go = grad_out
                                        [((n * s.c + c) * oh + oy) * ow + ox]
                                        * inv;
                                    for dy in 0..k {
                                        for dx in 0..k {
                                            g[s.index(n, c, oy * k + dy, ox * k + dx)] += go;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            },
        }
        vec![Some(g)]
    }
}

/// Pools `x` by `kind` over `scope`. Maxima route gradients to the first
/// attaining element in scan order, which keeps backward deterministic.
pub fn pool<T: Scalar>(x: &Tensor<T>, kind: PoolKind, scope: PoolScope) -> Result<Tensor<T>> {
    let s = x.shape();
    let out_shape = match scope {
        PoolScope::Global => Shape::new(s.n, s.c, 1, 1),
        PoolScope::Channel => Shape::new(s.n, 1, s.h, s.w),
        PoolScope::Window(k) => {
            if k == 0 || s.h % k != 0 || s.w % k != 0 {
                return Err(Error::InvalidArgument(format!(
                    "invalid window {k} for {}x{} plane",
                    s.h, s.w
                )));
            }
            Shape::new(s.n, s.c, s.h / k, s.w / k)
        }
    };

    let xd = x.data();
    let mut data = vec![T::zero(); out_shape.count()];
    let mut argmax = Vec::new();
    if kind == PoolKind::Max {
        argmax = vec![0usize; out_shape.count()];
    }

    match scope {
        PoolScope::Global => {
            let plane = s.h * s.w;
            for nc in 0..s.n * s.c {
                let base = nc * plane;
                match kind {
                    PoolKind::Mean => {
                        let mut acc = T::zero();
                        for &v in &xd[base..base + plane] {
                            acc += v;
                        }
                        data[nc] = acc / T::from_f64_lossy(plane as f64);
                    }
                    PoolKind::Max => {
                        let (mut best, mut at) = (xd[base], base);
                        for (i, &v) in xd[base..base + plane].iter().enumerate() {
                            if v > best {
                                best = v;
                                at = base + i;
                            }
                        }
                        data[nc] = best;
                        argmax[nc] = at;
                    }
                }
            }
        }
        PoolScope::Channel => {
            let plane = s.h * s.w;
            for n in 0..s.n {
                for i in 0..plane {
                    match kind {
                        PoolKind::Mean => {
                            let mut acc = T::zero();
                            for c in 0..s.c {
                                acc += xd[(n * s.c + c) * plane + i];
                            }
                            data[n * plane + i] = acc / T::from_f64_lossy(s.c as f64);
                        }
                        PoolKind::Max => {
                            let (mut best, mut at) = (xd[n * s.c * plane + i], n * s.c * plane + i);
                            for c in 1..s.c {
                                let idx = (n * s.c + c) * plane + i;
                                if xd[idx] > best {
                                    best = xd[idx];
                                    at = idx;
                                }
                            }
                            data[n * plane + i] = best;
                            argmax[n * plane + i] = at;
                        }
                    }
                }
            }
        }
        PoolScope::Window(k) => {
            let (oh, ow) = (s.h / k, s.w / k);
            for n in 0..s.n {
                for c in 0..s.c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let oi = ((n * s.c + c) * oh + oy) * ow + ox;
                            match kind {
                                PoolKind::Mean => {
                                    let mut acc = T::zero();
                                    for dy in 0..k {
                                        for dx in 0..k {
                                            acc += xd[s.index(n, c, oy * k + dy, ox * k + dx)];
                                        }
                                    }
                                    data[oi] = acc / T::from_f64_lossy((k * k) as f64);
                                }
                                PoolKind::Max => {
                                    let mut best = xd[s.index(n, c, oy * k, ox * k)];
                                    let mut at = s.index(n, c, oy * k, ox * k);
                                    for dy in 0..k {
                                        for dx in 0..k {
                                            let idx =
                                                s.index(n, c, oy * k + dy, ox * k + dx);
                                            if xd[idx] > best {
                                                best = xd[idx];
                                                at = idx;
                                            }
                                        }
                                    }
                                    data[oi] = best;
                                    argmax[oi] = at;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    drop(xd);
    Tensor::from_op(
        out_shape,
        data,
        vec![x.clone()],
        Box::new(PoolGrad {
            kind,
            scope,
            in_shape: s,
            argmax,
        }),
    )
}
