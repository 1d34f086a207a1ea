use log::warn;
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn to_dmatrix(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Affine least squares `y ~ x W^T + b` with an unpenalised intercept.
/// Returns `(W (k, d), b (k))`. With `alpha == 0` this is OLS; a singular
/// design falls back to a `1e-6` ridge.
pub fn ridge_fit(x: ArrayView2<f64>, y: ArrayView2<f64>, alpha: f64) -> Result<(Array2<f64>, Array1<f64>)> {
    let (n, d) = x.dim();
    if y.nrows() != n {
        return Err(Error::shape("ridge_fit", n, y.nrows()));
    }
    if n == 0 {
        return Err(Error::invalid("ridge_fit", "no samples"));
    }
    let x_mean = x.mean_axis(Axis(0)).expect("non-empty");
    let y_mean = y.mean_axis(Axis(0)).expect("non-empty");
    let xc = to_dmatrix((&x - &x_mean).view());
    let yc = to_dmatrix((&y - &y_mean).view());
    let gram = xc.transpose() * &xc;
    let rhs = xc.transpose() * &yc;
    let solve = |a: f64| {
        let mut g = gram.clone();
        for i in 0..d {
            g[(i, i)] += a;
        }
        g.cholesky().map(|c| c.solve(&rhs))
    };
    let beta = match solve(alpha) {
        Some(b) if alpha > 0.0 || well_conditioned(&gram) => b,
        _ => {
            warn!("ridge_fit: design is rank deficient, adding 1e-6 ridge");
            solve(alpha.max(1e-6)).ok_or_else(|| Error::NonFinite {
                context: "ridge_fit normal equations".into(),
            })?
        }
    };
    // beta is (d, k); W is its transpose.
    let w = Array2::from_shape_fn((beta.ncols(), d), |(k, j)| beta[(j, k)]);
    let b = &y_mean - &w.dot(&x_mean);
    Ok((w, b))
}

fn well_conditioned(gram: &DMatrix<f64>) -> bool {
    let eig = gram.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().cloned().fold(0.0, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    max > 0.0 && min > 1e-12 * max
}

/// Linear map from codes to behaviour plus the anchor and step used for
/// traversal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigationMap {
    /// `(K, L)`; row `j` is the code-space direction of feature `j`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub anchor: Array1<f64>,
    pub step: f64,
}

/// Behaviour feature indices.
pub const START_X: usize = 0;
pub const START_Y: usize = 1;
pub const TARGET_X: usize = 2;
pub const TARGET_Y: usize = 3;

impl NavigationMap {
    /// OLS of behaviour `(n, K)` on codes `(n, L)`; anchor is the mean code.
    pub fn fit(codes: ArrayView2<f64>, behavior: ArrayView2<f64>) -> Result<Self> {
        let k = behavior.ncols();
        if codes.nrows() < k + 1 {
            return Err(Error::invalid(
                "fit_navigation_map",
                format!("need at least {} trials, got {}", k + 1, codes.nrows()),
            ));
        }
        let (w, b) = ridge_fit(codes, behavior, 0.0)?;
        Ok(Self {
            w,
            b,
            anchor: codes.mean_axis(Axis(0)).expect("non-empty"),
            step: 1.0,
        })
    }

    /// `anchor + sign * i * step * w_j`.
    pub fn navigate(&self, feature: usize, i: f64, sign: f64) -> Result<Array1<f64>> {
        if feature >= self.w.nrows() {
            return Err(Error::invalid("navigate", format!("feature {feature} out of range")));
        }
        Ok(&self.anchor + &(self.w.row(feature).to_owned() * (sign * i * self.step)))
    }

    /// Predicted behaviour `(n, K)` for codes `(n, L)`.
    pub fn predict(&self, codes: ArrayView2<f64>) -> Array2<f64> {
        codes.dot(&self.w.t()) + &self.b
    }

    /// Distance between predicted and true targets for each trial.
    pub fn target_error(&self, codes: ArrayView2<f64>, targets: ArrayView2<f64>) -> Vec<f64> {
        let pred = self.predict(codes);
        (0..codes.nrows())
            .map(|i| (pred[[i, TARGET_X]] - targets[[i, 0]]).hypot(pred[[i, TARGET_Y]] - targets[[i, 1]]))
            .collect()
    }
}

/// Ridge map from activity to hand position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionDecoder {
    /// `(2, N)`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub alpha: f64,
}

impl PositionDecoder {
    /// Fit on stacked rows of activity `(m, N)` and positions `(m, 2)`.
    pub fn fit(states: ArrayView2<f64>, positions: ArrayView2<f64>, alpha: f64) -> Result<Self> {
        if positions.ncols() != 2 {
            return Err(Error::shape("fit_position_decoder", 2, positions.ncols()));
        }
        let (w, b) = ridge_fit(states, positions, alpha)?;
        Ok(Self { w, b, alpha })
    }

    pub fn channels(&self) -> usize {
        self.w.ncols()
    }

    /// Decode a `(T, N)` window into `(T, 2)` positions.
    pub fn decode(&self, activity: ArrayView2<f64>) -> Result<Array2<f64>> {
        if activity.ncols() != self.channels() {
            return Err(Error::shape("decode_trajectory", self.channels(), activity.ncols()));
        }
        Ok(activity.dot(&self.w.t()) + &self.b)
    }
}

#[cfg(test)]
fn lstsq_residual(x: ArrayView2<f64>, y: ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> f64 {
    let r = &y - &(x.dot(&w.t()) + b);
    r.iter().map(|v| v * v).sum()
}


#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_point_closed_form() {
        let (w, b) = ridge_fit(arr2(&[[1.0], [2.0]]).view(), arr2(&[[2.0], [4.0]]).view(), 0.0).unwrap();
        assert!((w[[0, 0]] - 2.0).abs() < 1e-12 && b[0].abs() < 1e-12);
    }

    #[test]
    fn exact_linear_behaviour_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Array::from_shape_simple_fn((50, 5), || StandardNormal.sample(&mut rng));
        let w_true = Array::from_shape_simple_fn((4, 5), || StandardNormal.sample(&mut rng));
        let b_true = arr1(&[0.1, -0.2, 0.3, 0.4]);
        let s = c.dot(&w_true.t()) + &b_true;
        let map = NavigationMap::fit(c.view(), s.view()).unwrap();
        assert!(lstsq_residual(c.view(), s.view(), &map.w, &map.b) < 1e-18);
        assert!((&map.w - &w_true).iter().all(|v| v.abs() < 1e-10));
        assert!(map.target_error(c.view(), s.slice(ndarray::s![.., 2..]).view()).iter().all(|&e| e < 1e-10));
    }

    #[test]
    fn rank_deficient_falls_back() {
        let c = arr2(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]]);
        let s = arr2(&[[1.0], [2.0], [3.0], [4.0]]);
        let (w, b) = ridge_fit(c.view(), s.view(), 0.0).unwrap();
        let r = lstsq_residual(c.view(), s.view(), &w, &b);
        assert!(r < 1e-8 && w.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn navigation_identities() {
        let map = NavigationMap {
            w: arr2(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
            b: arr1(&[0.0, 0.0]),
            anchor: arr1(&[0.5, -0.5, 2.0]),
            step: 1.0,
        };
        assert_eq!(map.navigate(0, 0.0, 1.0).unwrap(), map.anchor);
        assert_eq!(map.navigate(0, 2.0, 1.0).unwrap(), arr1(&[2.5, -0.5, 2.0]));
        let up = map.navigate(1, 3.0, 1.0).unwrap();
        let down = map.navigate(1, 3.0, -1.0).unwrap();
        assert_eq!(&(&up + &down) / 2.0, map.anchor);
        assert!(map.navigate(2, 1.0, 1.0).is_err());
    }

    #[test]
    fn decoder_recovers_linear_positions_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array::from_shape_simple_fn((400, 6), || StandardNormal.sample(&mut rng));
        let w = Array::from_shape_simple_fn((2, 6), || StandardNormal.sample(&mut rng));
        let y = x.dot(&w.t()) + &arr1(&[0.1, 0.4]);
        let dec = PositionDecoder::fit(x.view(), y.view(), 1e-9).unwrap();
        let pred = dec.decode(x.view()).unwrap();
        assert!((&pred - &y).iter().all(|v| v.abs() < 1e-7));
        let z = dec.decode(Array2::zeros((3, 6)).view()).unwrap();
        for r in z.rows() {
            assert_eq!(r, dec.b);
        }
        assert!(dec.decode(Array2::zeros((3, 5)).view()).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = Array::from_shape_simple_fn((20, 3), || StandardNormal.sample(&mut rng));
            let s = Array::from_shape_simple_fn((20, 4), || StandardNormal.sample(&mut rng));
            let a = NavigationMap::fit(c.view(), s.view()).unwrap();
            let idx: Vec<usize> = (0..20).rev().collect();
            let b = NavigationMap::fit(c.select(Axis(0), &idx).view(), s.select(Axis(0), &idx).view()).unwrap();
            prop_assert!((&a.w - &b.w).iter().all(|v| v.abs() < 1e-10));
            prop_assert!((&a.b - &b.b).iter().all(|v| v.abs() < 1e-10));
        }
    }
}
