//! Full-reference image quality metrics (PSNR, single-scale SSIM) and the
//! average-gradient detail statistic.
//!
//! All three accept tensors of any scalar type but accumulate in f64. Inputs
//! live in the normalized [0, 1] domain; PSNR uses peak 1 and SSIM a
//! dynamic range of 1.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Identical images would be +inf dB; they report this cap instead so
/// comparisons stay totally ordered.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB against peak 1.0.
pub fn psnr<T: Scalar>(y: &Tensor<T>, y_star: &Tensor<T>) -> Result<f64> {
    if y.shape() != y_star.shape() {
        return Err(Error::ShapeMismatch(format!(
            "psnr shapes differ: {} vs {}",
            y.shape(),
            y_star.shape()
        )));
    }
    let a = y.to_vec();
    let b = y_star.to_vec();
    let mut sq = 0.0f64;
    for (x, t) in a.iter().zip(&b) {
        let d = x.to_f64_lossy() - t.to_f64_lossy();
        sq += d * d;
    }
    let mse = sq / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let n = SSIM_WINDOW;
    let c = (n / 2) as f64;
    let mut w = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            w.push((-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, averaged over all valid window positions, channels, and batch
/// entries.
pub fn ssim<T: Scalar>(y: &Tensor<T>, y_star: &Tensor<T>) -> Result<f64> {
    let s = y.shape();
    if s != y_star.shape() {
        return Err(Error::ShapeMismatch(format!(
            "ssim shapes differ: {} vs {}",
            s,
            y_star.shape()
        )));
    }
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs H, W >= {}, got {}x{}",
            SSIM_WINDOW, s.h, s.w
        )));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let a = y.to_vec();
    let b = y_star.to_vec();

    let mut total = 0.0f64;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..=(s.h - SSIM_WINDOW) {
                for ox in 0..=(s.w - SSIM_WINDOW) {
                    let (mut mx, mut my) = (0.0f64, 0.0f64);
                    let (mut xx, mut yy, mut xy) = (0.0f64, 0.0f64, 0.0f64);
                    for wy in 0..SSIM_WINDOW {
                        for wx in 0..SSIM_WINDOW {
                            let w = win[wy * SSIM_WINDOW + wx];
                            let xv = a[s.index(n, c, oy + wy, ox + wx)].to_f64_lossy();
                            let yv = b[s.index(n, c, oy + wy, ox + wx)].to_f64_lossy();
                            mx += w * xv;
                            my += w * yv;
                            xx += w * xv * xv;
                            yy += w * yv * yv;
                            xy += w * xv * yv;
                        }
                    }
                    let vx = xx - mx * mx;
                    let vy = yy - my * my;
                    let cov = xy - mx * my;
                    let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
                    let den = (mx * mx + my * my + c1) * (vx + vy + c2);
                    total += num / den;
                    count += 1;
                }
            }
        }
    }
    Ok(total / count as f64)
}

/// Mean and population variance of the per-pixel gradient magnitude
/// g = sqrt((dx^2 + dy^2) / 2), forward differences on the valid
/// (H-1) x (W-1) grid of every channel.
pub fn avg_gradient<T: Scalar>(y: &Tensor<T>) -> Result<(f64, f64)> {
    let s = y.shape();
    if s.h < 2 || s.w < 2 {
        return Err(Error::InvalidArgument(format!(
            "average gradient needs H, W >= 2, got {}x{}",
            s.h, s.w
        )));
    }
    let a = y.to_vec();
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    let count = s.n * s.c * (s.h - 1) * (s.w - 1);
    for n in 0..s.n {
        for c in 0..s.c {
            for h in 0..s.h - 1 {
                for w in 0..s.w - 1 {
                    let v = a[s.index(n, c, h, w)].to_f64_lossy();
                    let dx = a[s.index(n, c, h, w + 1)].to_f64_lossy() - v;
                    let dy = a[s.index(n, c, h + 1, w)].to_f64_lossy() - v;
                    let g = ((dx * dx + dy * dy) / 2.0).sqrt();
                    sum += g;
                    sum_sq += g * g;
                }
            }
        }
    }
    let mean = sum / count as f64;
    let var = (sum_sq / count as f64 - mean * mean).max(0.0);
    Ok((mean, var))
}
