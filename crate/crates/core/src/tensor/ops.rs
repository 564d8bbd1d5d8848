//! Elementwise, broadcast, reduction, and channel layout ops.
//!
//! Binary ops broadcast over any axis of size 1 on either side; their
//! backward passes sum-reduce gradients back to the parent shapes.

use super::{GradFn, Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn broadcast_shape(a: Shape, b: Shape) -> Result<Shape> {
    let dims: Option<Vec<usize>> = a
        .dims()
        .iter()
        .zip(b.dims().iter())
        .map(|(&x, &y)| broadcast_dim(x, y))
        .collect();
    match dims {
        Some(d) => Ok(Shape::new(d[0], d[1], d[2], d[3])),
        None => Err(Error::ShapeMismatch(format!(
            "cannot broadcast {a} with {b}"
        ))),
    }
}

/// Calls `f(out_idx, a_idx, b_idx)` for every output coordinate.
fn for_each_broadcast(out: Shape, a: Shape, b: Shape, mut f: impl FnMut(usize, usize, usize)) {
    let mut oi = 0;
    for n in 0..out.n {
        let an = if a.n == 1 { 0 } else { n };
        let bn = if b.n == 1 { 0 } else { n };
        for c in 0..out.c {
            let ac = if a.c == 1 { 0 } else { c };
            let bc = if b.c == 1 { 0 } else { c };
            for h in 0..out.h {
                let ah = if a.h == 1 { 0 } else { h };
                let bh = if b.h == 1 { 0 } else { h };
                for w in 0..out.w {
                    let aw = if a.w == 1 { 0 } else { w };
                    let bw = if b.w == 1 { 0 } else { w };
                    f(oi, a.index(an, ac, ah, aw), b.index(bn, bc, bh, bw));
                    oi += 1;
                }
            }
        }
    }
}

/// Sums `g` (laid out as `from`) down to shape `to` along broadcast axes.
fn reduce_to<T: Scalar>(from: Shape, to: Shape, g: &[T]) -> Vec<T> {
    if from == to {
        return g.to_vec();
    }
    let mut out = vec![T::zero(); to.count()];
    let mut gi = 0;
    for n in 0..from.n {
        let tn = if to.n == 1 { 0 } else { n };
        for c in 0..from.c {
            let tc = if to.c == 1 { 0 } else { c };
            for h in 0..from.h {
                let th = if to.h == 1 { 0 } else { h };
                for w in 0..from.w {
                    let tw = if to.w == 1 { 0 } else { w };
                    out[to.index(tn, tc, th, tw)] += g[gi];
                    gi += 1;
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinKind {
    fn name(self) -> &'static str {
        match self {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        }
    }
}

struct BinaryGrad {
    kind: BinKind,
    out: Shape,
}

impl<T: Scalar> GradFn<T> for BinaryGrad {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn backward(&self, grad_out: &[T], parents: &[Tensor<T>], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (&parents[0], &parents[1]);
        let (sa, sb) = (a.shape(), b.shape());
        let mut ga_full = if needs[0] { vec![T::zero(); self.out.count()] } else { Vec::new() };
        let mut gb_full = if needs[1] { vec![T::zero(); self.out.count()] } else { Vec::new() };
        {
            let ad = a.data();
            let bd = b.data();
            for_each_broadcast(self.out, sa, sb, |oi, ai, bi| {
                let g = grad_out[oi];
                match self.kind {
                    BinKind::Add => {
                        if needs[0] {
                            ga_full[oi] = g;
                        }
                        if needs[1] {
                            gb_full[oi] = g;
                        }
                    }
                    BinKind::Sub => {
                        if needs[0] {
                            ga_full[oi] = g;
                        }
                        if needs[1] {
                            gb_full[oi] = -g;
                        }
                    }
                    BinKind::Mul => {
                        if needs[0] {
                            ga_full[oi] = g * bd[bi];
                        }
                        if needs[1] {
                            gb_full[oi] = g * ad[ai];
                        }
                    }
                    BinKind::Div => {
                        let inv = T::one() / bd[bi];
                        if needs[0] {
                            ga_full[oi] = g * inv;
                        }
                        if needs[1] {
                            gb_full[oi] = -g * ad[ai] * inv * inv;
                        }
                    }
                }
            });
        }
        vec![
            if needs[0] { Some(reduce_to(self.out, sa, &ga_full)) } else { None },
            if needs[1] { Some(reduce_to(self.out, sb, &gb_full)) } else { None },
        ]
    }
}

fn binary<T: Scalar>(kind: BinKind, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let out = broadcast_shape(a.shape(), b.shape())?;
    let mut data = vec![T::zero(); out.count()];
    {
        let ad = a.data();
        let bd = b.data();
        for_each_broadcast(out, a.shape(), b.shape(), |oi, ai, bi| {
            data[oi] = match kind {
                BinKind::Add => ad[ai] + bd[bi],
                BinKind::Sub => ad[ai] - bd[bi],
                BinKind::Mul => ad[ai] * bd[bi],
                BinKind::Div => ad[ai] / bd[bi],
            };
        });
    }
    Tensor::from_op(
        out,
        data,
        vec![a.clone(), b.clone()],
        Box::new(BinaryGrad { kind, out }),
    )
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(BinKind::Add, a, b)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(BinKind::Sub, a, b)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(BinKind::Mul, a, b)
}

pub fn div<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(BinKind::Div, a, b)
}

enum UnKind<T> {
    Affine { a: T },
    Sqrt,
    Exp,
    Sigmoid,
}

struct UnaryGrad<T: Scalar> {
    kind: UnKind<T>,
    /// Output values, saved for rules expressed in terms of y.
    saved: Vec<T>,
}

impl<T: Scalar> GradFn<T> for UnaryGrad<T> {
    fn name(&self) -> &'static str {
        match self.kind {
            UnKind::Affine { .. } => "affine",
            UnKind::Sqrt => "sqrt",
            UnKind::Exp => "exp",
            UnKind::Sigmoid => "sigmoid",
        }
    }

    fn backward(&self, grad_out: &[T], _parents: &[Tensor<T>], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let half = T::from_f64_lossy(0.5);
        let g = grad_out
            .iter()
            .enumerate()
            .map(|(i, &g)| match self.kind {
                UnKind::Affine { a, .. } => g * a,
                UnKind::Sqrt => g * half / self.saved[i],
                UnKind::Exp => g * self.saved[i],
                UnKind::Sigmoid => {
                    let y = self.saved[i];
                    g * y * (T::one() - y)
                }
            })
            .collect();
        vec![Some(g)]
    }
}

fn unary<T: Scalar>(x: &Tensor<T>, kind: UnKind<T>, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
    let data: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    let saved = match kind {
        UnKind::Affine { .. } => Vec::new(),
        _ => data.clone(),
    };
    Tensor::from_op(
        x.shape(),
        data,
        vec![x.clone()],
        Box::new(UnaryGrad { kind, saved }),
    )
}

/// Elementwise a*x + b with constant coefficients.
pub fn affine<T: Scalar>(x: &Tensor<T>, a: T, b: T) -> Result<Tensor<T>> {
    unary(x, UnKind::Affine { a }, |v| a * v + b)
}

pub fn neg<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    affine(x, -T::one(), T::zero())
}

/// Elementwise square root; inputs must be positive for a finite gradient.
pub fn sqrt<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    unary(x, UnKind::Sqrt, |v| v.sqrt())
}

pub fn exp<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    unary(x, UnKind::Exp, |v| v.exp())
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    unary(x, UnKind::Sigmoid, |v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

struct SumAllGrad {
    shape: Shape,
    mean: bool,
}

impl<T: Scalar> GradFn<T> for SumAllGrad {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean_all"
        } else {
            "sum_all"
        }
    }

    fn backward(&self, grad_out: &[T], _parents: &[Tensor<T>], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let mut g = grad_out[0];
        if self.mean {
            g = g / T::from_f64_lossy(self.shape.count() as f64);
        }
        vec![Some(vec![g; self.shape.count()])]
    }
}

/// Sum of every element, as a 1x1x1x1 tensor.
pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut acc = T::zero();
    for &v in x.data().iter() {
        acc += v;
    }
    Tensor::from_op(
        Shape::new(1, 1, 1, 1),
        vec![acc],
        vec![x.clone()],
        Box::new(SumAllGrad {
            shape: x.shape(),
            mean: false,
        }),
    )
}

/// Mean of every element, as a 1x1x1x1 tensor.
pub fn mean_all<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut acc = T::zero();
    for &v in x.data().iter() {
        acc += v;
    }
    let n = T::from_f64_lossy(x.count() as f64);
    Tensor::from_op(
        Shape::new(1, 1, 1, 1),
        vec![acc / n],
        vec![x.clone()],
        Box::new(SumAllGrad {
            shape: x.shape(),
            mean: true,
        }),
    )
}

struct PreluGrad;

impl<T: Scalar> GradFn<T> for PreluGrad {
    fn name(&self) -> &'static str {
        "prelu"
    }

    fn backward(&self, grad_out: &[T], parents: &[Tensor<T>], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let x = &parents[0];
        let slope = &parents[1];
        let xs = x.shape();
        let xd = x.data();
        let sd = slope.data();
        let mut gx = if needs[0] { vec![T::zero(); xs.count()] } else { Vec::new() };
        let mut gs = if needs[1] { vec![T::zero(); slope.count()] } else { Vec::new() };
        let plane = xs.h * xs.w;
        for n in 0..xs.n {
            for c in 0..xs.c {
                let base = (n * xs.c + c) * plane;
                let a = sd[c];
                for i in base..base + plane {
                    let v = xd[i];
                    if v >= T::zero() {
                        if needs[0] {
                            gx[i] = grad_out[i];
                        }
                    } else {
                        if needs[0] {
                            gx[i] = grad_out[i] * a;
                        }
                        if needs[1] {
                            gs[c] += grad_out[i] * v;
                        }
                    }
                }
            }
        }
        vec![
            if needs[0] { Some(gx) } else { None },
            if needs[1] { Some(gs) } else { None },
        ]
    }
}

/// Parametric ReLU with a learnable per-channel negative slope.
///
/// `slope` must be shaped 1xCx1x1 with C matching the input channels.
pub fn prelu<T: Scalar>(x: &Tensor<T>, slope: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ss = slope.shape();
    if ss != Shape::new(1, xs.c, 1, 1) {
        return Err(Error::ShapeMismatch(format!(
            "prelu slope must be 1x{}x1x1, got {ss}",
            xs.c
        )));
    }
    let xd = x.data();
    let sd = slope.data();
    let plane = xs.h * xs.w;
    let mut data = vec![T::zero(); xs.count()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let base = (n * xs.c + c) * plane;
            let a = sd[c];
            for i in base..base + plane {
                let v = xd[i];
                data[i] = if v >= T::zero() { v } else { a * v };
            }
        }
    }
    drop(xd);
    drop(sd);
    Tensor::from_op(xs, data, vec![x.clone(), slope.clone()], Box::new(PreluGrad))
}

struct ConcatGrad {
    sizes: Vec<usize>,
}

impl<T: Scalar> GradFn<T> for ConcatGrad {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, grad_out: &[T], parents: &[Tensor<T>], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let total_c: usize = self.sizes.iter().sum();
        let s0 = parents[0].shape();
        let (n_, h, w) = (s0.n, s0.h, s0.w);
        let plane = h * w;
        let mut out = Vec::with_capacity(parents.len());
        let mut c_off = 0;
        for (k, &ck) in self.sizes.iter().enumerate() {
            if !needs[k] {
                c_off += ck;
                out.push(None);
                continue;
            }
            let mut g = vec![T::zero(); n_ * ck * plane];
            for n in 0..n_ {
                for c in 0..ck {
                    let src = (n * total_c + c_off + c) * plane;
                    let dst = (n * ck + c) * plane;
                    g[dst..dst + plane].copy_from_slice(&grad_out[src..src + plane]);
                }
            }
            out.push(Some(g));
            c_off += ck;
        }
        out
    }
}

/// Concatenates tensors along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("concat of zero tensors".into()));
    }
    let s0 = parts[0].shape();
    for p in &parts[1..] {
        let s = p.shape();
        if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
            return Err(Error::ShapeMismatch(format!(
                "concat needs matching non-channel dims, got {s0} and {s}"
            )));
        }
    }
    let sizes: Vec<usize> = parts.iter().map(|p| p.shape().c).collect();
    let total_c: usize = sizes.iter().sum();
    let out = Shape::new(s0.n, total_c, s0.h, s0.w);
    let plane = s0.h * s0.w;
    let mut data = vec![T::zero(); out.count()];
    let mut c_off = 0;
    for p in parts {
        let pd = p.data();
        let ck = p.shape().c;
        for n in 0..s0.n {
            for c in 0..ck {
                let dst = (n * total_c + c_off + c) * plane;
                let src = (n * ck + c) * plane;
                data[dst..dst + plane].copy_from_slice(&pd[src..src + plane]);
            }
        }
        c_off += ck;
    }
    Tensor::from_op(out, data, parts.to_vec(), Box::new(ConcatGrad { sizes }))
}

struct SliceGrad {
    start: usize,
}

impl<T: Scalar> GradFn<T> for SliceGrad {
    fn name(&self) -> &'static str {
        "slice_channels"
    }

    fn backward(&self, grad_out: &[T], parents: &[Tensor<T>], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let ps = parents[0].shape();
        let plane = ps.h * ps.w;
        let ck = grad_out.len() / (ps.n * plane);
        let mut g = vec![T::zero(); ps.count()];
        for n in 0..ps.n {
            for c in 0..ck {
                let dst = (n * ps.c + self.start + c) * plane;
                let src = (n * ck + c) * plane;
                g[dst..dst + plane].copy_from_slice(&grad_out[src..src + plane]);
            }
        }
        vec![Some(g)]
    }
}

/// Channel slice [start, start+len).
pub fn slice_channels<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if start + len > s.c || len == 0 {
        return Err(Error::InvalidArgument(format!(
            "slice [{start}, {}) out of {} channels",
            start + len,
            s.c
        )));
    }
    let out = Shape::new(s.n, len, s.h, s.w);
    let plane = s.h * s.w;
    let mut data = vec![T::zero(); out.count()];
    {
        let xd = x.data();
        for n in 0..s.n {
            for c in 0..len {
                let src = (n * s.c + start + c) * plane;
                let dst = (n * len + c) * plane;
                data[dst..dst + plane].copy_from_slice(&xd[src..src + plane]);
            }
        }
    }
    Tensor::from_op(out, data, vec![x.clone()], Box::new(SliceGrad { start }))
}

/// Splits along the channel axis into consecutive blocks of the given sizes.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let total: usize = sizes.iter().sum();
    if total != x.shape().c {
        return Err(Error::ShapeMismatch(format!(
            "split sizes sum to {total}, tensor has {} channels",
            x.shape().c
        )));
    }
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &len in sizes {
        out.push(slice_channels(x, start, len)?);
        start += len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape::new(n, c, h, w)
    }

    #[test]
    fn add_broadcasts_channel_vectors() {
        let x = Tensor::<f32>::from_vec(sh(1, 2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f32>::from_vec(sh(1, 2, 1, 1), vec![10.0, 20.0]).unwrap();
        let y = add(&x, &b).unwrap();
        assert_eq!(y.to_vec(), vec![11.0, 12.0, 23.0, 24.0]);
    }

    #[test]
    fn broadcast_backward_reduces_to_parent_shape() {
        let x = Tensor::<f64>::from_vec(sh(1, 2, 1, 2), vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .with_grad();
        let b = Tensor::<f64>::from_vec(sh(1, 2, 1, 1), vec![10.0, 20.0])
            .unwrap()
            .with_grad();
        let loss = sum_all(&mul(&x, &b).unwrap()).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![10.0, 10.0, 20.0, 20.0]);
        // d/db_c = sum of x over that channel.
        assert_eq!(b.grad().unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn incompatible_shapes_are_rejected() {
        let a = Tensor::<f32>::zeros(sh(1, 2, 2, 2));
        let b = Tensor::<f32>::zeros(sh(1, 3, 2, 2));
        assert!(add(&a, &b).is_err());
    }

    #[test]
    fn div_backward_matches_quotient_rule() {
        let a = Tensor::<f64>::from_vec(sh(1, 1, 1, 2), vec![1.0, 4.0])
            .unwrap()
            .with_grad();
        let b = Tensor::<f64>::from_vec(sh(1, 1, 1, 2), vec![2.0, 8.0])
            .unwrap()
            .with_grad();
        let loss = sum_all(&div(&a, &b).unwrap()).unwrap();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.5, 0.125]);
        assert_eq!(b.grad().unwrap(), vec![-0.25, -0.0625]);
    }

    #[test]
    fn division_by_zero_surfaces_as_non_finite() {
        let a = Tensor::<f32>::ones(sh(1, 1, 1, 1));
        let b = Tensor::<f32>::zeros(sh(1, 1, 1, 1));
        assert!(matches!(
            div(&a, &b),
            Err(Error::NonFinite { op: "div" })
        ));
    }

    #[test]
    fn sigmoid_values_and_gradient() {
        let x = Tensor::<f64>::from_vec(sh(1, 1, 1, 3), vec![0.0, -100.0, 100.0])
            .unwrap()
            .with_grad();
        let y = sigmoid(&x).unwrap();
        let v = y.to_vec();
        assert_eq!(v[0], 0.5);
        assert!(v[1] > 0.0 && v[1] <= 1e-20);
        assert!(v[2] < 1.0 + 1e-12 && v[2] > 1.0 - 1e-12);
        sum_all(&y).unwrap().backward().unwrap();
        let g = x.grad().unwrap();
        assert!((g[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn prelu_matches_hand_values_and_gradients() {
        let x = Tensor::<f64>::from_vec(sh(1, 1, 1, 2), vec![-2.0, 3.0])
            .unwrap()
            .with_grad();
        let slope = Tensor::<f64>::from_vec(sh(1, 1, 1, 1), vec![0.25])
            .unwrap()
            .with_grad();
        let y = prelu(&x, &slope).unwrap();
        assert_eq!(y.to_vec(), vec![-0.5, 3.0]);
        sum_all(&y).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25, 1.0]);
        assert_eq!(slope.grad().unwrap(), vec![-2.0]);
    }

    #[test]
    fn prelu_rejects_mismatched_slope() {
        let x = Tensor::<f32>::zeros(sh(1, 3, 2, 2));
        let slope = Tensor::<f32>::full(sh(1, 2, 1, 1), 0.25);
        assert!(prelu(&x, &slope).is_err());
    }

    #[test]
    fn mean_backward_distributes_uniformly() {
        let x = Tensor::<f64>::ones(sh(1, 1, 2, 2)).with_grad();
        mean_all(&x).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = Tensor::<f32>::from_vec(sh(1, 2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f32>::from_vec(sh(1, 3, 1, 2), vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
        let cat = concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(cat.shape(), sh(1, 5, 1, 2));
        let parts = split_channels(&cat, &[2, 3]).unwrap();
        assert_eq!(parts[0].to_vec(), a.to_vec());
        assert_eq!(parts[1].to_vec(), b.to_vec());
        let back = concat_channels(&parts).unwrap();
        assert_eq!(back.to_vec(), cat.to_vec());
    }

    #[test]
    fn concat_backward_routes_slices() {
        let a = Tensor::<f64>::ones(sh(1, 1, 1, 2)).with_grad();
        let b = Tensor::<f64>::ones(sh(1, 2, 1, 2)).with_grad();
        let cat = concat_channels(&[a.clone(), b.clone()]).unwrap();
        let w = Tensor::<f64>::from_vec(sh(1, 3, 1, 2), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        sum_all(&mul(&cat, &w).unwrap()).unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn split_backward_embeds_at_the_right_offset() {
        let x = Tensor::<f64>::from_vec(sh(1, 2, 1, 2), vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .with_grad();
        let parts = split_channels(&x, &[1, 1]).unwrap();
        sum_all(&parts[1]).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn affine_composes_one_minus() {
        let x = Tensor::<f64>::from_vec(sh(1, 1, 1, 2), vec![0.25, 0.5])
            .unwrap()
            .with_grad();
        let y = affine(&x, -1.0, 1.0).unwrap();
        assert_eq!(y.to_vec(), vec![0.75, 0.5]);
        sum_all(&y).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![-1.0, -1.0]);
    }
}
