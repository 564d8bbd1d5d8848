//! Central finite-difference verification of analytic gradients.
//!
//! The checker re-runs a user-supplied forward closure with single
//! coordinates perturbed by ±h and compares the quotient against the
//! gradient produced by the tape. Checks run at f64; f32 rounding would
//! drown the h^2 truncation term.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Parameter;
use crate::tensor::{no_grad, Shape, Tensor};

pub struct CheckCfg {
    /// Central-difference step.
    pub step: f64,
    pub rel_tol: f64,
    /// Absolute slack for gradients near zero, where the relative test
    /// degenerates against FD round-off.
    pub abs_tol: f64,
    /// Coordinates probed per tensor; large tensors are subsampled evenly.
    pub max_coords: usize,
}

impl Default for CheckCfg {
    fn default() -> Self {
        CheckCfg {
            step: 1e-4,
            rel_tol: 1e-4,
            abs_tol: 1e-8,
            max_coords: 24,
        }
    }
}

#[derive(Debug, Default)]
pub struct CheckReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn sample_coords(count: usize, max: usize) -> Vec<usize> {
    if count <= max {
        return (0..count).collect();
    }
    // Even stride, anchored at both ends.
    (0..max)
        .map(|i| i * (count - 1) / (max - 1))
        .collect()
}

/// Checks d(loss)/d(p) for every parameter in `wrt` against central finite
/// differences of the forward closure `f`. The closure must rebuild the
/// graph from the tensors' current data and return a scalar loss.
pub fn check_gradients<F>(f: F, wrt: &[Parameter<f64>], cfg: &CheckCfg) -> Result<CheckReport>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    for p in wrt {
        p.tensor.zero_grad();
    }
    let loss = f()?;
    if loss.count() != 1 {
        return Err(Error::NonScalarLoss(loss.shape().to_string()));
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = wrt
        .iter()
        .map(|p| {
            p.tensor
                .grad()
                .ok_or_else(|| Error::MissingGrad(p.name.clone()))
        })
        .collect::<Result<_>>()?;

    let mut report = CheckReport::default();
    for (p, grads) in wrt.iter().zip(&analytic) {
        let coords = sample_coords(p.tensor.count(), cfg.max_coords);
        for &i in &coords {
            let orig = p.tensor.data()[i];
            let eval = |v: f64| -> Result<f64> {
                p.tensor.update_data(|d| d[i] = v);
                let out = no_grad(&f)?;
                Ok(out.item())
            };
            let lp = eval(orig + cfg.step)?;
            let lm = eval(orig - cfg.step)?;
            p.tensor.update_data(|d| d[i] = orig);
            let fd = (lp - lm) / (2.0 * cfg.step);
            let a = grads[i];
            let diff = (a - fd).abs();
            let scale = a.abs().max(fd.abs());
            let rel = diff / scale.max(1e-12);
            report.coords_checked += 1;
            if rel > report.max_rel_err && diff > cfg.abs_tol {
                report.max_rel_err = rel;
            }
            if diff > cfg.abs_tol + cfg.rel_tol * scale {
                report.failures.push(format!(
                    "{}[{i}]: analytic {a:.6e}, finite-diff {fd:.6e}, rel {rel:.3e}",
                    p.name
                ));
            }
        }
    }
    Ok(report)
}

/// Random values that keep every activation away from kinks: a jittered
/// lattice over [lo, hi], shuffled, then shifted outward by `dead_zone` on
/// each side of zero. The shift is monotone per sign, so values stay
/// pairwise distinct (gaps at least 60% of the lattice spacing); per-window
/// maxima are unique and finite differences never straddle a max switch.
pub fn separated_values<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    lo: f64,
    hi: f64,
    dead_zone: f64,
) -> Vec<f64> {
    assert!(hi > lo && count > 0);
    let spacing = (hi - lo) / count as f64;
    let mut vals: Vec<f64> = (0..count)
        .map(|i| {
            let center = lo + (i as f64 + 0.5) * spacing;
            let jitter = rng.random_range(-0.2..0.2) * spacing;
            let v = center + jitter;
            if v >= 0.0 {
                v + dead_zone
            } else {
                v - dead_zone
            }
        })
        .collect();
    vals.shuffle(rng);
    vals
}

/// Tensor filled by [`separated_values`].
pub fn separated_tensor<R: Rng + ?Sized>(
    rng: &mut R,
    shape: Shape,
    lo: f64,
    hi: f64,
) -> Tensor<f64> {
    let vals = separated_values(rng, shape.count(), lo, hi, 5e-3);
    Tensor::from_vec(shape, vals).expect("lattice values are finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::{mul, sigmoid, sum_all};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn passes_on_a_correct_composite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = separated_tensor(&mut rng, Shape::new(1, 2, 3, 3), -1.0, 1.0).with_grad();
        let m = separated_tensor(&mut rng, Shape::new(1, 2, 3, 3), -1.0, 1.0);
        let xc = x.clone();
        let mc = m.clone();
        let f = move || sum_all(&mul(&sigmoid(&xc)?, &mc)?);
        let report = check_gradients(
            f,
            &[Parameter::new("x", x)],
            &CheckCfg::default(),
        )
        .unwrap();
        assert!(report.ok(), "failures: {:?}", report.failures);
        assert!(report.coords_checked > 0);
    }

    #[test]
    fn catches_a_wrong_gradient() {
        // sum(x * x) has gradient 2x; lying about the loss by checking a
        // different closure must trip the comparison.
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2), vec![0.5, -0.7])
            .unwrap()
            .with_grad();
        let xc = x.clone();
        let calls = std::cell::Cell::new(0u32);
        let f = move || {
            calls.set(calls.get() + 1);
            if calls.get() == 1 {
                sum_all(&mul(&xc, &xc)?)
            } else {
                sum_all(&xc)
            }
        };
        let report = check_gradients(f, &[Parameter::new("x", x)], &CheckCfg::default()).unwrap();
        assert!(!report.ok());
    }

    #[test]
    fn separated_values_respect_range_and_dead_zone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Dense lattice: spacing well below the dead zone width.
        let vals = separated_values(&mut rng, 2048, -1.0, 1.0, 5e-3);
        assert!(vals.iter().all(|v| v.abs() >= 5e-3 - 1e-12));
        assert!(vals.iter().all(|&v| (-1.01..=1.01).contains(&v)));
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        for pair in sorted.windows(2) {
            assert!(pair[1] > pair[0], "values must be pairwise distinct");
        }
    }

    #[test]
    fn subsampling_covers_both_ends() {
        let coords = sample_coords(1000, 10);
        assert_eq!(coords.len(), 10);
        assert_eq!(coords[0], 0);
        assert_eq!(*coords.last().unwrap(), 999);
    }
}
