use ndarray::{Array, ArrayView, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear variance schedule of the forward noising process. Steps are
/// 1-based: step `i` has variance `beta(i)` and signal fraction `alpha_bar(i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(n_steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if n_steps < 2 {
            return Err(Error::invalid("make_schedule", format!("need at least 2 steps, got {n_steps}")));
        }
        if !(beta_min > 0.0 && beta_max < 1.0 && beta_min < beta_max) {
            return Err(Error::invalid(
                "make_schedule",
                format!("need 0 < beta_min < beta_max < 1, got [{beta_min}, {beta_max}]"),
            ));
        }
        let betas: Vec<f64> = (0..n_steps)
            .map(|k| {
                // Exact at both ends, unlike `min + (max - min) * t`.
                let t = k as f64 / (n_steps - 1) as f64;
                beta_min * (1.0 - t) + beta_max * t
            })
            .collect();
        let alpha_bars = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn n_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.betas[i - 1]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        1.0 - self.betas[i - 1]
    }

    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bars[i - 1]
    }

    /// `(sqrt(alpha_bar), sqrt(1 - alpha_bar))` at step `i`.
    pub fn coefficients(&self, i: usize) -> (f64, f64) {
        let ab = self.alpha_bar(i);
        (ab.sqrt(), (1.0 - ab).sqrt())
    }

    fn check_step(&self, op: &'static str, i: usize) -> Result<()> {
        if i == 0 || i > self.n_steps() {
            return Err(Error::invalid(op, format!("step {i} outside 1..={}", self.n_steps())));
        }
        Ok(())
    }

    /// `x_i = sqrt(alpha_bar_i) x0 + sqrt(1 - alpha_bar_i) eps`.
    pub fn forward_noise<D: Dimension>(
        &self,
        x0: ArrayView<f64, D>,
        i: usize,
        eps: ArrayView<f64, D>,
    ) -> Result<Array<f64, D>> {
        self.check_step("forward_noise", i)?;
        if x0.shape() != eps.shape() {
            return Err(Error::shape("forward_noise", format!("{:?}", x0.shape()), format!("{:?}", eps.shape())));
        }
        let (a, s) = self.coefficients(i);
        Ok(Zip::from(&x0).and(&eps).map_collect(|&x, &e| a * x + s * e))
    }

    /// Invert the forward process given a noise estimate.
    pub fn reconstruct_x0<D: Dimension>(
        &self,
        x_noisy: ArrayView<f64, D>,
        eps_hat: ArrayView<f64, D>,
        i: usize,
    ) -> Result<Array<f64, D>> {
        self.check_step("reconstruct_x0", i)?;
        if x_noisy.shape() != eps_hat.shape() {
            return Err(Error::shape(
                "reconstruct_x0",
                format!("{:?}", x_noisy.shape()),
                format!("{:?}", eps_hat.shape()),
            ));
        }
        let (a, s) = self.coefficients(i);
        Ok(Zip::from(&x_noisy).and(&eps_hat).map_collect(|&x, &e| (x - s * e) / a))
    }
}
