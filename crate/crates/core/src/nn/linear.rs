use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::nn::params::impl_params;

/// Affine map `y = x W + b` applied to a batch of row vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `(in, out)`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl_params!(Linear { w, b });

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let k = 1.0 / (input.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-k, k).expect("finite bounds");
        Self {
            w: Array2::from_shape_simple_fn((input, output), || dist.sample(rng)),
            b: Array1::from_shape_simple_fn(output, || dist.sample(rng)),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_size(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        debug_assert_eq!(x.ncols(), self.input_size());
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grads: &mut Linear) -> Array2<f64> {
        grads.w += &x.t().dot(&dy);
        grads.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}
