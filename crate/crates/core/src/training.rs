//! Charbonnier loss, bias-corrected Adam, and the epoch loop tying model,
//! data, and metrics together.
//!
//! The loop is deterministic under its seed: batch order, diffusion noise,
//! and every update follow one ChaCha stream, so two runs with equal seeds
//! produce bit-comparable loss curves.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::save_checkpoint;
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::network::{LLCapsModel, Mode};
use crate::nn::Parameter;
use crate::scalar::Scalar;
use crate::tensor::ops::{affine, mean_all, mul, sqrt, sub};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub charbonnier_eps: f64,
    /// Global gradient-norm ceiling; off unless set.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 4,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            charbonnier_eps: 1e-3,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs >= 1
            && self.batch_size >= 1
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.charbonnier_eps > 0.0
            && self.grad_clip.map_or(true, |c| c > 0.0);
        if !ok {
            return Err(Error::InvalidArgument(
                "training hyperparameters out of range".into(),
            ));
        }
        Ok(())
    }
}

/// Mean over all elements of sqrt((y - y*)^2 + eps^2). Strictly positive
/// and smooth everywhere, equal to eps exactly when the images agree.
pub fn charbonnier_loss<T: Scalar>(
    y: &Tensor<T>,
    y_star: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    if y.shape() != y_star.shape() {
        return Err(Error::ShapeMismatch(format!(
            "loss shapes differ: {} vs {}",
            y.shape(),
            y_star.shape()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(
            "charbonnier eps must be positive".into(),
        ));
    }
    let d = sub(y, y_star)?;
    let inside = affine(&mul(&d, &d)?, T::one(), T::from_f64_lossy(eps * eps))?;
    mean_all(&sqrt(&inside)?)
}

/// First and second moments per parameter, accumulated at f64 regardless
/// of the working precision.
pub struct AdamState {
    pub step: usize,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<T: Scalar>(params: &[Parameter<T>]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.tensor.count()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.count()]).collect(),
        }
    }
}

/// One bias-corrected Adam update over every parameter, reading gradients
/// accumulated by the latest backward pass.
pub fn adam_step<T: Scalar>(
    params: &[Parameter<T>],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer state tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    let mut grads = Vec::with_capacity(params.len());
    for p in params {
        let g = p
            .tensor
            .grad()
            .ok_or_else(|| Error::MissingGrad(p.name.clone()))?;
        grads.push(g.iter().map(|v| v.to_f64_lossy()).collect::<Vec<f64>>());
    }
    if let Some(max_norm) = cfg.grad_clip {
        let norm = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm > max_norm {
            let scale = max_norm / norm;
            for g in &mut grads {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter().enumerate() {
        let g = &grads[i];
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        p.tensor.update_data(|data| {
            for j in 0..data.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let w = data[j].to_f64_lossy() - cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
                data[j] = T::from_f64_lossy(w);
            }
        });
    }
    Ok(())
}

/// Stacks single-image (1 x C x H x W) pairs into one batch along N.
/// NCHW is row-major with N outermost, so flat payloads concatenate.
pub fn stack_pairs<T: Scalar>(pairs: &[&(Tensor<T>, Tensor<T>)]) -> Result<(Tensor<T>, Tensor<T>)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let s = pairs[0].0.shape();
    let mut xs = Vec::with_capacity(pairs.len() * s.count());
    let mut ys = Vec::with_capacity(pairs.len() * s.count());
    for (x, y) in pairs {
        if x.shape() != s || y.shape() != s || s.n != 1 {
            return Err(Error::ShapeMismatch(format!(
                "batch needs uniform 1x{}x{}x{} pairs, got {} and {}",
                s.c,
                s.h,
                s.w,
                x.shape(),
                y.shape()
            )));
        }
        xs.extend_from_slice(&x.to_vec());
        ys.extend_from_slice(&y.to_vec());
    }
    let batched = Shape::new(pairs.len(), s.c, s.h, s.w);
    Ok((
        Tensor::from_vec(batched, xs)?,
        Tensor::from_vec(batched, ys)?,
    ))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean Charbonnier loss per epoch over the training set.
    pub epoch_loss: Vec<f64>,
    /// Held-out PSNR / SSIM per epoch (NaN when no held-out data).
    pub epoch_psnr: Vec<f64>,
    pub epoch_ssim: Vec<f64>,
    pub best_psnr: f64,
    pub best_epoch: Option<usize>,
    /// True when a non-finite value aborted training early.
    pub diverged: bool,
}

/// Evaluates mean PSNR / SSIM of deterministic forward passes over pairs.
pub fn evaluate<T: Scalar>(
    model: &LLCapsModel<T>,
    pairs: &[(Tensor<T>, Tensor<T>)],
) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut p_sum = 0.0;
    let mut s_sum = 0.0;
    for (i, (x, y_star)) in pairs.iter().enumerate() {
        let y = model.llcaps_forward(x, Mode::EvalDeterministic, i as u64)?;
        p_sum += psnr(&y, y_star)?;
        s_sum += ssim(&y, y_star)?;
    }
    Ok((p_sum / pairs.len() as f64, s_sum / pairs.len() as f64))
}

/// Seeded epoch loop: shuffle, batch, forward in train mode, Charbonnier,
/// backward, Adam. Evaluates on the held-out pairs after each epoch and
/// checkpoints the best-PSNR model when a path is given. A non-finite
/// value anywhere stops training and marks the report diverged.
pub fn train_loop<T: Scalar>(
    model: &LLCapsModel<T>,
    train: &[(Tensor<T>, Tensor<T>)],
    heldout: &[(Tensor<T>, Tensor<T>)],
    cfg: &TrainConfig,
    ckpt_path: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let params = model.parameters();
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport {
        epoch_loss: Vec::new(),
        epoch_psnr: Vec::new(),
        epoch_ssim: Vec::new(),
        best_psnr: f64::NEG_INFINITY,
        best_epoch: None,
        diverged: false,
    };

    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch_ids in order.chunks(cfg.batch_size) {
            let pairs: Vec<&(Tensor<T>, Tensor<T>)> =
                batch_ids.iter().map(|&i| &train[i]).collect();
            let (x, y_star) = stack_pairs(&pairs)?;
            let noise_seed: u64 = rng.random();
            let step = (|| -> Result<f64> {
                for p in &params {
                    p.tensor.zero_grad();
                }
                let y = model.llcaps_forward(&x, Mode::Train, noise_seed)?;
                let loss = charbonnier_loss(&y, &y_star, cfg.charbonnier_eps)?;
                let value = loss.item().to_f64_lossy();
                loss.backward()?;
                adam_step(&params, &mut state, cfg)?;
                Ok(value)
            })();
            match step {
                Ok(value) => loss_sum += value * batch_ids.len() as f64,
                Err(Error::NonFinite { .. }) => {
                    report.diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        report.epoch_loss.push(loss_sum / train.len() as f64);

        let (p, s) = evaluate(model, heldout)?;
        report.epoch_psnr.push(p);
        report.epoch_ssim.push(s);
        if p > report.best_psnr {
            report.best_psnr = p;
            report.best_epoch = Some(epoch);
            if let Some(path) = ckpt_path {
                save_checkpoint(model, path)?;
            }
        }
    }
    Ok(report)
}
