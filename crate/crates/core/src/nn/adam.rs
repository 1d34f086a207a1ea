use crate::error::{Error, Result};
use crate::nn::Params;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay coefficient (applied as `lr * decay * theta`).
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adam with bias-corrected moments and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new<P: Params + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let n = params.num_params();
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update. Rejects non-finite gradients without touching state.
    pub fn step<P: Params + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.flatten();
        if g.len() != self.m.len() {
            return Err(Error::shape("adam_step", self.m.len(), g.len()));
        }
        if let Some(idx) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("gradient entry {idx} at optimizer step {}", self.step + 1),
            });
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((m, v), gi) in self.m.iter_mut().zip(self.v.iter_mut()).zip(&g) {
            *m = beta1 * *m + (1.0 - beta1) * gi;
            *v = beta2 * *v + (1.0 - beta2) * gi * gi;
        }
        let (m, v) = (&self.m, &self.v);
        let mut offset = 0;
        params.visit_mut(&mut |s| {
            for (k, theta) in s.iter_mut().enumerate() {
                let i = offset + k;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *theta -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *theta);
            }
            offset += s.len();
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = array![0.5, -1.0, 2.0];
        let g = Array1::zeros(3);
        let mut opt = Adam::new(&p, AdamConfig::default());
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p, array![0.5, -1.0, 2.0]);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = 1, v_hat = 1 after one bias-corrected step.
        let mut p = array![1.0];
        let mut opt = Adam::new(&p, AdamConfig::with_lr(0.001));
        opt.step(&mut p, &array![1.0]).unwrap();
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks_param() {
        let mut p = array![2.0];
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(&p, cfg);
        opt.step(&mut p, &array![0.0]).unwrap();
        assert!((p[0] - (2.0 - 0.01 * 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = array![1.0, 1.0];
        let mut opt = Adam::new(&p, AdamConfig::default());
        let err = opt.step(&mut p, &array![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(opt.steps_taken(), 0);
        assert_eq!(p, array![1.0, 1.0]);
    }

    #[test]
    fn reproducible_across_runs() {
        let run = || {
            let mut p = array![0.3, -0.7, 1.1];
            let mut opt = Adam::new(&p, AdamConfig::with_lr(0.01));
            for k in 0..50 {
                let g = p.mapv(|x| x * (k as f64 + 1.0).sin());
                opt.step(&mut p, &g).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
