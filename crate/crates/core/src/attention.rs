//! Curved wavelet attention block, SKFF fusion, and the multi-scale
//! residual block built from them.
//!
//! A CWA block splits its input into identity and processing channels,
//! lifts the processing half into the wavelet domain, runs a feature
//! selector there, gates the result with parallel spatial and curved
//! attention, returns to the pixel domain, and closes with a local
//! residual. MSRB runs two CWA streams at full and half resolution and
//! fuses them with softmax attention over streams.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, PRelu, Parameter};
use crate::scalar::Scalar;
use crate::tensor::ops::{
    add, affine, concat_channels, div, exp, mul, neg, sigmoid, split_channels, sub, sum_all,
};
use crate::tensor::pool::{pool, PoolKind, PoolScope};
use crate::tensor::resize::resize_bilinear;
use crate::tensor::Tensor;
use crate::wavelet::{dwt2d, iwt2d, WaveletPack};

/// Minimum gap added to the per-channel max-min range so degenerate
/// (constant) channels rescale to zero instead of dividing by zero.
const RESCALE_DELTA: f64 = 1e-6;

/// Shape of one CWA block.
#[derive(Debug, Clone)]
pub struct CwaConfig {
    pub channels: usize,
    /// Channels routed past the block untouched; the rest are processed.
    pub identity_channels: usize,
    /// Curve iterations, each with its own parameter estimator.
    pub curve_order: usize,
    /// Spatial-attention conv kernel size.
    pub sa_kernel: usize,
    /// Opt-in Zero-DCE-style additive recurrence; the default multiplies,
    /// exactly as the curve estimation equation is written.
    pub additive_curve: bool,
    /// Off bypasses DWT/IWT; the selector works in the pixel domain.
    pub use_wavelet: bool,
    /// Off degenerates curved attention to a plain channel attention gate.
    pub use_curve: bool,
}

impl CwaConfig {
    pub fn new(channels: usize) -> Self {
        CwaConfig {
            channels,
            identity_channels: channels / 2,
            curve_order: 4,
            sa_kernel: 7,
            additive_curve: false,
            use_wavelet: true,
            use_curve: true,
        }
    }

    pub fn processing_channels(&self) -> usize {
        self.channels - self.identity_channels
    }

    /// Channel width the selector and attention paths operate at.
    pub fn inner_channels(&self) -> usize {
        if self.use_wavelet {
            4 * self.processing_channels()
        } else {
            self.processing_channels()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 2
            || self.identity_channels == 0
            || self.identity_channels >= self.channels
        {
            return Err(Error::InvalidArgument(format!(
                "invalid channel split {}/{}",
                self.identity_channels, self.channels
            )));
        }
        if self.curve_order == 0 {
            return Err(Error::InvalidArgument("curve order must be >= 1".into()));
        }
        if self.sa_kernel % 2 == 0 {
            return Err(Error::InvalidArgument(
                "spatial attention kernel must be odd".into(),
            ));
        }
        Ok(())
    }
}

/// Final illumination estimate together with the per-order curve maps that
/// produced it.
pub struct CurveState<T: Scalar> {
    pub il: Tensor<T>,
    pub curves: Vec<Tensor<T>>,
    pub order: usize,
}

/// One curve iteration. Multiplicative form:
/// IL_n = Curve_{n-1} * IL_{n-1} * (1 - IL_{n-1}); the additive variant adds
/// the same increment to IL_{n-1} instead of replacing it.
pub fn curve_step<T: Scalar>(
    il: &Tensor<T>,
    curve: &Tensor<T>,
    additive: bool,
) -> Result<Tensor<T>> {
    let inc = mul(&mul(curve, il)?, &affine(il, -T::one(), T::one())?)?;
    if additive {
        add(il, &inc)
    } else {
        Ok(inc)
    }
}

/// Per-channel min-max rescale of `f` into [0, 1): the IL_0 of the curve
/// recurrence. Constant channels map to zero via the delta guard.
pub fn rescale_unit<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>> {
    let max = pool(f, PoolKind::Max, PoolScope::Global)?;
    let min = neg(&pool(&neg(f)?, PoolKind::Max, PoolScope::Global)?)?;
    let range = affine(&sub(&max, &min)?, T::one(), T::from_f64_lossy(RESCALE_DELTA))?;
    div(&sub(f, &min)?, &range)
}

/// Two stacked 3x3 convolutions around a PReLU, channel preserving.
pub struct FeatureSelector<T: Scalar> {
    pub conv1: Conv2d<T>,
    pub act: PRelu<T>,
    pub conv2: Conv2d<T>,
}

impl<T: Scalar> FeatureSelector<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        FeatureSelector {
            conv1: Conv2d::new(channels, channels, 3, rng),
            act: PRelu::new(channels),
            conv2: Conv2d::new(channels, channels, 3, rng),
        }
    }

    pub fn forward(&self, fw: &Tensor<T>) -> Result<Tensor<T>> {
        self.conv2.forward(&self.act.forward(&self.conv1.forward(fw)?)?)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        self.conv1.collect(&format!("{prefix}.conv1"), out);
        self.act.collect(&format!("{prefix}.act"), out);
        self.conv2.collect(&format!("{prefix}.conv2"), out);
    }
}

/// Gates every channel by one spatial map derived from channel statistics.
pub struct SpatialAttention<T: Scalar> {
    pub conv: Conv2d<T>,
}

impl<T: Scalar> SpatialAttention<T> {
    pub fn new<R: Rng + ?Sized>(kernel: usize, rng: &mut R) -> Self {
        SpatialAttention {
            conv: Conv2d::new(2, 1, kernel, rng),
        }
    }

    pub fn attention_map(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let mean = pool(f, PoolKind::Mean, PoolScope::Channel)?;
        let max = pool(f, PoolKind::Max, PoolScope::Channel)?;
        sigmoid(&self.conv.forward(&concat_channels(&[mean, max])?)?)
    }

    pub fn forward(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        mul(f, &self.attention_map(f)?)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        self.conv.collect(&format!("{prefix}.conv"), out);
    }
}

/// Iterated quadratic curve gating with per-order parameter estimators.
pub struct CurveAttention<T: Scalar> {
    pub stages: Vec<(Conv2d<T>, Conv2d<T>)>,
    pub additive: bool,
}

impl<T: Scalar> CurveAttention<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, order: usize, additive: bool, rng: &mut R) -> Self {
        let stages = (0..order)
            .map(|_| {
                (
                    Conv2d::new(channels, channels, 3, rng),
                    Conv2d::new(channels, channels, 3, rng),
                )
            })
            .collect();
        CurveAttention { stages, additive }
    }

    pub fn forward_with_state(&self, f: &Tensor<T>) -> Result<(Tensor<T>, CurveState<T>)> {
        let mut il = rescale_unit(f)?;
        let mut curves = Vec::with_capacity(self.stages.len());
        for (c1, c2) in &self.stages {
            let curve = sigmoid(&c2.forward(&c1.forward(f)?)?)?;
            il = curve_step(&il, &curve, self.additive)?;
            curves.push(curve);
        }
        let out = mul(f, &il)?;
        let order = self.stages.len();
        Ok((out, CurveState { il, curves, order }))
    }

    pub fn forward(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_with_state(f)?.0)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        for (i, (c1, c2)) in self.stages.iter().enumerate() {
            c1.collect(&format!("{prefix}{i}.conv1"), out);
            c2.collect(&format!("{prefix}{i}.conv2"), out);
        }
    }
}

/// Squeeze-excite style gate; the degenerate replacement for curved
/// attention in ablations.
pub struct ChannelAttention<T: Scalar> {
    pub down: Conv2d<T>,
    pub up: Conv2d<T>,
}

impl<T: Scalar> ChannelAttention<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let reduced = (channels / 4).max(4);
        ChannelAttention {
            down: Conv2d::new(channels, reduced, 1, rng),
            up: Conv2d::new(reduced, channels, 1, rng),
        }
    }

    pub fn forward(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let z = pool(f, PoolKind::Mean, PoolScope::Global)?;
        let gate = sigmoid(&self.up.forward(&self.down.forward(&z)?)?)?;
        mul(f, &gate)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        self.down.collect(&format!("{prefix}.down"), out);
        self.up.collect(&format!("{prefix}.up"), out);
    }
}

enum DualGate<T: Scalar> {
    Curve(CurveAttention<T>),
    Channel(ChannelAttention<T>),
}

/// Curved wavelet attention block.
pub struct CwaBlock<T: Scalar> {
    pub cfg: CwaConfig,
    pub selector: FeatureSelector<T>,
    pub sa: SpatialAttention<T>,
    gate: DualGate<T>,
    /// 1x1 merge of the two attention streams back to selector width.
    pub fuse: Conv2d<T>,
    /// Terminal 3x3 conv ahead of the local residual.
    pub out_conv: Conv2d<T>,
}

impl<T: Scalar> CwaBlock<T> {
    pub fn new<R: Rng + ?Sized>(cfg: CwaConfig, zero_init_residual: bool, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let inner = cfg.inner_channels();
        let selector = FeatureSelector::new(inner, rng);
        let sa = SpatialAttention::new(cfg.sa_kernel, rng);
        let gate = if cfg.use_curve {
            DualGate::Curve(CurveAttention::new(
                inner,
                cfg.curve_order,
                cfg.additive_curve,
                rng,
            ))
        } else {
            DualGate::Channel(ChannelAttention::new(inner, rng))
        };
        let fuse = Conv2d::new(2 * inner, inner, 1, rng);
        let out_conv = if zero_init_residual {
            Conv2d::zeroed(cfg.channels, cfg.channels, 3)
        } else {
            Conv2d::new(cfg.channels, cfg.channels, 3, rng)
        };
        Ok(CwaBlock {
            cfg,
            selector,
            sa,
            gate,
            fuse,
            out_conv,
        })
    }

    pub fn forward(&self, f_in: &Tensor<T>) -> Result<Tensor<T>> {
        let s = f_in.shape();
        if s.c != self.cfg.channels {
            return Err(Error::ShapeMismatch(format!(
                "cwa block built for {} channels, got {}",
                self.cfg.channels, s.c
            )));
        }
        let parts = split_channels(
            f_in,
            &[self.cfg.identity_channels, self.cfg.processing_channels()],
        )?;
        let fw = if self.cfg.use_wavelet {
            dwt2d(&parts[1])?.subbands
        } else {
            parts[1].clone()
        };
        let fs = self.selector.forward(&fw)?;
        let sa_out = self.sa.forward(&fs)?;
        let gate_out = match &self.gate {
            DualGate::Curve(g) => g.forward(&fs)?,
            DualGate::Channel(g) => g.forward(&fs)?,
        };
        let fused = self.fuse.forward(&concat_channels(&[sa_out, gate_out])?)?;
        let fp = if self.cfg.use_wavelet {
            iwt2d(&WaveletPack::new(fused)?)?
        } else {
            fused
        };
        let merged = self
            .out_conv
            .forward(&concat_channels(&[parts[0].clone(), fp])?)?;
        add(&merged, f_in)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        self.selector.collect(&format!("{prefix}.selector"), out);
        self.sa.collect(&format!("{prefix}.sa"), out);
        match &self.gate {
            DualGate::Curve(g) => g.collect(&format!("{prefix}.curve"), out),
            DualGate::Channel(g) => g.collect(&format!("{prefix}.ca"), out),
        }
        self.fuse.collect(&format!("{prefix}.fuse"), out);
        self.out_conv.collect(&format!("{prefix}.out"), out);
    }
}

/// Softmax across a list of equally shaped logit tensors, stabilized by a
/// detached elementwise max; shift invariance keeps the gradient exact.
pub fn softmax_streams<T: Scalar>(logits: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    if logits.len() < 2 {
        return Err(Error::InvalidArgument("softmax needs >= 2 streams".into()));
    }
    let shape = logits[0].shape();
    for l in logits {
        if l.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "softmax stream shapes differ: {} vs {}",
                shape,
                l.shape()
            )));
        }
    }
    let mut max_data = logits[0].to_vec();
    for l in &logits[1..] {
        for (m, &v) in max_data.iter_mut().zip(l.data().iter()) {
            if v > *m {
                *m = v;
            }
        }
    }
    let max = Tensor::from_vec(shape, max_data)?;
    let exps: Vec<Tensor<T>> = logits
        .iter()
        .map(|l| exp(&sub(l, &max)?))
        .collect::<Result<_>>()?;
    let mut total = exps[0].clone();
    for e in &exps[1..] {
        total = add(&total, e)?;
    }
    exps.iter().map(|e| div(e, &total)).collect()
}

/// Convex combination of streams under the given broadcastable weights.
pub fn weighted_sum<T: Scalar>(weights: &[Tensor<T>], streams: &[Tensor<T>]) -> Result<Tensor<T>> {
    if weights.len() != streams.len() || streams.is_empty() {
        return Err(Error::InvalidArgument(
            "weighted_sum needs matching stream and weight counts".into(),
        ));
    }
    let mut acc = mul(&streams[0], &weights[0])?;
    for (s, w) in streams.iter().zip(weights).skip(1) {
        acc = add(&acc, &mul(s, w)?)?;
    }
    Ok(acc)
}

/// Selective kernel feature fusion over K streams of equal shape.
pub struct Skff<T: Scalar> {
    pub reduce: Conv2d<T>,
    pub branches: Vec<Conv2d<T>>,
}

impl<T: Scalar> Skff<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, streams: usize, rng: &mut R) -> Self {
        let reduced = (channels / 4).max(4);
        Skff {
            reduce: Conv2d::new(channels, reduced, 1, rng),
            branches: (0..streams)
                .map(|_| Conv2d::new(reduced, channels, 1, rng))
                .collect(),
        }
    }

    /// Per-stream softmax weights, shaped N x C x 1 x 1.
    pub fn stream_weights(&self, streams: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let mut s = streams[0].clone();
        for t in &streams[1..] {
            s = add(&s, t)?;
        }
        let z = self.reduce.forward(&pool(&s, PoolKind::Mean, PoolScope::Global)?)?;
        let logits: Vec<Tensor<T>> = self
            .branches
            .iter()
            .map(|b| b.forward(&z))
            .collect::<Result<_>>()?;
        softmax_streams(&logits)
    }

    pub fn forward(&self, streams: &[Tensor<T>]) -> Result<Tensor<T>> {
        if streams.len() != self.branches.len() || streams.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "skff built for {} streams, got {}",
                self.branches.len(),
                streams.len()
            )));
        }
        let shape = streams[0].shape();
        for t in streams {
            if t.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "skff stream shapes differ: {} vs {}",
                    shape,
                    t.shape()
                )));
            }
        }
        let weights = self.stream_weights(streams)?;
        weighted_sum(&weights, streams)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        self.reduce.collect(&format!("{prefix}.reduce"), out);
        for (i, b) in self.branches.iter().enumerate() {
            b.collect(&format!("{prefix}.branch{i}"), out);
        }
    }
}

/// Multi-scale residual block: full- and half-resolution CWA streams fused
/// by SKFF under a block residual.
pub struct Msrb<T: Scalar> {
    pub full: CwaBlock<T>,
    pub half: CwaBlock<T>,
    pub skff: Skff<T>,
}

impl<T: Scalar> Msrb<T> {
    pub fn new<R: Rng + ?Sized>(cfg: CwaConfig, zero_init_residual: bool, rng: &mut R) -> Result<Self> {
        let channels = cfg.channels;
        Ok(Msrb {
            full: CwaBlock::new(cfg.clone(), zero_init_residual, rng)?,
            half: CwaBlock::new(cfg, zero_init_residual, rng)?,
            skff: Skff::new(channels, 2, rng),
        })
    }

    pub fn forward(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let s = f.shape();
        if s.h % 4 != 0 || s.w % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "msrb needs spatial dims divisible by 4, got {}x{}",
                s.h, s.w
            )));
        }
        let a = self.full.forward(f)?;
        let b_small = self.half.forward(&resize_bilinear(f, 0.5)?)?;
        let b = resize_bilinear(&b_small, 2.0)?;
        let fused = self.skff.forward(&[a, b])?;
        add(&fused, f)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        self.full.collect(&format!("{prefix}.cwa0"), out);
        self.half.collect(&format!("{prefix}.cwa1"), out);
        self.skff.collect(&format!("{prefix}.skff"), out);
    }
}

/// Scalar helper for loss plumbing in tests and training.
pub fn scalar_of<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    sum_all(t)
}
