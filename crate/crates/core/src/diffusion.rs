//! Reverse-diffusion refinement: linear noise schedule, the Gaussian
//! reverse kernel, and the T-step Markov chain from the shallow CNN output
//! down to the final image.
//!
//! Only the reverse process exists here. The chain is differentiable end to
//! end: injected noise enters reparameterized as a constant tensor, so
//! gradients flow through the mean path into both the chain input and the
//! denoiser parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, PRelu, Parameter};
use crate::scalar::Scalar;
use crate::tensor::ops::{add, affine, sub};
use crate::tensor::{Shape, Tensor};

/// Which constant the reverse-kernel variance uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMode {
    /// sigma_t^2 = beta_t
    FixedBeta,
    /// sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t)
    FixedBetaTilde,
}

#[derive(Debug, Clone)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub denoiser_width: usize,
    pub variance_mode: VarianceMode,
    pub stochastic: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: 10,
            beta_start: 1e-4,
            beta_end: 0.02,
            denoiser_width: 16,
            variance_mode: VarianceMode::FixedBeta,
            stochastic: false,
        }
    }
}

/// Linear beta schedule and the derived alpha sequences.
///
/// Stored at f64 regardless of the working scalar; values convert at the
/// point of use. `alpha_bar` has one extra leading entry so `alpha_bar[t]`
/// is the product over steps 1..=t, with `alpha_bar[0] = 1`.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

pub fn make_schedule(cfg: &DiffusionConfig) -> Result<NoiseSchedule> {
    if !(cfg.beta_start > 0.0 && cfg.beta_start <= cfg.beta_end && cfg.beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "beta bounds must satisfy 0 < start <= end < 1, got ({}, {})",
            cfg.beta_start, cfg.beta_end
        )));
    }
    let t_steps = cfg.steps;
    let beta: Vec<f64> = (0..t_steps)
        .map(|i| {
            if t_steps <= 1 {
                cfg.beta_start
            } else {
                cfg.beta_start + (cfg.beta_end - cfg.beta_start) * i as f64 / (t_steps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_steps + 1);
    alpha_bar.push(1.0);
    for (i, a) in alpha.iter().enumerate() {
        alpha_bar.push(alpha_bar[i] * a);
    }
    Ok(NoiseSchedule {
        steps: t_steps,
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::InvalidArgument(format!(
                "step {} outside 1..={}",
                t, self.steps
            )));
        }
        Ok(())
    }

    pub fn beta_t(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.beta[t - 1])
    }

    pub fn alpha_t(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha[t - 1])
    }

    /// Cumulative product through step t; t = 0 is the empty product.
    pub fn alpha_bar_t(&self, t: usize) -> Result<f64> {
        if t > self.steps {
            return Err(Error::InvalidArgument(format!(
                "step {} outside 0..={}",
                t, self.steps
            )));
        }
        Ok(self.alpha_bar[t])
    }

    pub fn sigma2(&self, t: usize, mode: VarianceMode) -> Result<f64> {
        self.check_t(t)?;
        let beta = self.beta[t - 1];
        Ok(match mode {
            VarianceMode::FixedBeta => beta,
            VarianceMode::FixedBetaTilde => {
                beta * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t])
            }
        })
    }
}

/// Sinusoidal embedding of an integer step, one value per channel.
///
/// Interleaved sin/cos over a geometric frequency ladder; a pure function of
/// (t, width) with no parameters, added channel-wise inside the denoiser.
pub fn time_embedding<T: Scalar>(t: usize, width: usize) -> Result<Tensor<T>> {
    if width == 0 || width % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "time embedding width must be even and positive, got {width}"
        )));
    }
    let half = width / 2;
    let mut data = Vec::with_capacity(width);
    for k in 0..half {
        let freq = (10_000f64).powf(-(k as f64) / half as f64);
        let arg = t as f64 * freq;
        data.push(T::from_f64_lossy(arg.sin()));
        data.push(T::from_f64_lossy(arg.cos()));
    }
    Tensor::from_vec(Shape::new(1, width, 1, 1), data)
}

/// Noise predictor for the reverse kernel: conv3x3 (3 -> w), time embedding
/// added channel-wise, conv3x3 (w -> w), PReLU, conv3x3 (w -> 3).
pub struct DenoiserNet<T: Scalar> {
    pub width: usize,
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub act: PRelu<T>,
    pub conv3: Conv2d<T>,
}

impl<T: Scalar> DenoiserNet<T> {
    pub fn new<R: Rng + ?Sized>(width: usize, zero_init_out: bool, rng: &mut R) -> Result<Self> {
        if width == 0 || width % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "denoiser width must be even and positive, got {width}"
            )));
        }
        let conv3 = if zero_init_out {
            Conv2d::zeroed(width, 3, 3)
        } else {
            Conv2d::new(width, 3, 3, rng)
        };
        Ok(DenoiserNet {
            width,
            conv1: Conv2d::new(3, width, 3, rng),
            conv2: Conv2d::new(width, width, 3, rng),
            act: PRelu::new(width),
            conv3,
        })
    }

    pub fn forward(&self, i_t: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        let h = add(&self.conv1.forward(i_t)?, &time_embedding(t, self.width)?)?;
        self.conv3.forward(&self.act.forward(&self.conv2.forward(&h)?)?)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        self.conv1.collect(&format!("{prefix}.conv1"), out);
        self.conv2.collect(&format!("{prefix}.conv2"), out);
        self.act.collect(&format!("{prefix}.act"), out);
        self.conv3.collect(&format!("{prefix}.conv3"), out);
    }
}

/// One reverse-kernel application with the noise estimate supplied by the
/// caller. i_{t-1} = mu + sigma_t * z, where
/// mu = (i_t - (beta_t / sqrt(1 - abar_t)) * eps) / sqrt(alpha_t)
/// and z is the given noise only when t > 1; the last step is always the
/// posterior mean.
pub fn reverse_step_with_eps<T: Scalar>(
    i_t: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    sched: &NoiseSchedule,
    mode: VarianceMode,
    noise: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let beta = sched.beta_t(t)?;
    let alpha = sched.alpha_t(t)?;
    let abar = sched.alpha_bar_t(t)?;
    let eps_coef = T::from_f64_lossy(beta / (1.0 - abar).sqrt());
    let inv_sqrt_alpha = T::from_f64_lossy(1.0 / alpha.sqrt());
    let mu = affine(
        &sub(i_t, &affine(eps, eps_coef, T::zero())?)?,
        inv_sqrt_alpha,
        T::zero(),
    )?;
    match noise {
        Some(z) if t > 1 => {
            let sigma = T::from_f64_lossy(sched.sigma2(t, mode)?.sqrt());
            add(&mu, &affine(z, sigma, T::zero())?)
        }
        _ => Ok(mu),
    }
}

/// One reverse-kernel application with eps predicted by the denoiser.
pub fn reverse_step<T: Scalar>(
    i_t: &Tensor<T>,
    t: usize,
    net: &DenoiserNet<T>,
    sched: &NoiseSchedule,
    mode: VarianceMode,
    noise: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let eps = net.forward(i_t, t)?;
    reverse_step_with_eps(i_t, t, &eps, sched, mode, noise)
}

/// Full reverse chain from i_T down to i_0. `steps == 0` returns the input
/// unchanged. Stochastic runs draw one standard-normal tensor per step with
/// t > 1 from a ChaCha stream seeded here, so a (seed, mode) pair fixes the
/// output bit for bit.
pub fn reverse_chain<T: Scalar>(
    i_start: &Tensor<T>,
    net: &DenoiserNet<T>,
    sched: &NoiseSchedule,
    mode: VarianceMode,
    stochastic: bool,
    seed: u64,
) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cur = i_start.clone();
    for t in (1..=sched.steps).rev() {
        let noise = if stochastic && t > 1 {
            let shape = cur.shape();
            let data = (0..shape.count()).map(|_| T::sample_normal(&mut rng)).collect();
            Some(Tensor::from_vec(shape, data)?)
        } else {
            None
        };
        cur = reverse_step(&cur, t, net, sched, mode, noise.as_ref())?;
    }
    Ok(cur)
}
