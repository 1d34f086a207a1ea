use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    /// Mean of `a - b`.
    pub mean_diff: f64,
    pub t: f64,
    pub df: usize,
    /// Two-sided p-value.
    pub p_value: f64,
}

/// Paired two-sided t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::shape("paired_t_test", a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired_t_test", "need at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    let se = (var / n as f64).sqrt();
    let (t, p_value) = if se == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / se;
        let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
        (t, 2.0 * dist.cdf(-t.abs()))
    };
    Ok(PairedTTest { mean_diff: mean, t, df, p_value })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `(k, d)`, unit rows.
    pub components: Array2<f64>,
    pub explained_ratio: Array1<f64>,
    /// `(n, k)`
    pub projections: Array2<f64>,
}

/// Top-`k` principal components. Each component's largest-magnitude loading
/// is made positive.
pub fn pca_project(data: ArrayView2<f64>, k: usize) -> Result<Pca> {
    let (n, d) = data.dim();
    if n < k || n < 2 {
        return Err(Error::invalid("pca_project", format!("{n} samples for {k} components")));
    }
    let mean = data.mean_axis(Axis(0)).expect("non-empty");
    let centred = &data - &mean;
    let cov = centred.t().dot(&centred) / (n - 1) as f64;
    let eig = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]).symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > 1e-12 * top.max(f64::MIN_POSITIVE))
        .count();
    if k > rank {
        return Err(Error::invalid("pca_project", format!("k = {k} exceeds rank {rank}")));
    }
    let mut components = Array2::zeros((k, d));
    let mut explained = Array1::zeros(k);
    for (r, &i) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(i);
        let pivot = v.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[r, j]] = sign * v[j];
        }
        explained[r] = eig.eigenvalues[i].max(0.0) / total;
    }
    let projections = centred.dot(&components.t());
    Ok(Pca {
        mean,
        components,
        explained_ratio: explained,
        projections,
    })
}

/// Per-channel Gaussian smoothing of a `(T, N)` series. The kernel is
/// truncated at four standard deviations and renormalised at every position.
pub fn gaussian_smooth(series: ArrayView2<f64>, sd_bins: f64) -> Result<Array2<f64>> {
    if sd_bins.is_nan() || sd_bins <= 0.0 {
        return Err(Error::invalid("gaussian_smooth", "sd must be positive"));
    }
    let (t_len, n) = series.dim();
    let half = (4.0 * sd_bins).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|k| (-0.5 * (k as f64 / sd_bins).powi(2)).exp())
        .collect();
    let mut out = Array2::zeros((t_len, n));
    for t in 0..t_len as isize {
        let mut wsum = 0.0;
        let mut acc = vec![0.0; n];
        for k in -half..=half {
            let s = t + k;
            if s < 0 || s >= t_len as isize {
                continue;
            }
            let w = kernel[(k + half) as usize];
            wsum += w;
            for (c, a) in acc.iter_mut().enumerate() {
                *a += w * series[[s as usize, c]];
            }
        }
        for (c, a) in acc.into_iter().enumerate() {
            out[[t as usize, c]] = a / wsum;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array, Array2};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn t_test_reference_values() {
        // d = [1, 2, 3, 4]: mean 2.5, sd 1.2910, t = 3.8730, df 3, p = 0.030466.
        let a = [2.0, 4.0, 6.0, 8.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        let r = paired_t_test(&a, &b).unwrap();
        assert!((r.t - 3.872983346207417).abs() < 1e-12);
        assert_eq!(r.df, 3);
        assert!((r.p_value - 0.030466).abs() < 1e-5, "{}", r.p_value);
        assert_eq!(paired_t_test(&a, &a).unwrap().p_value, 1.0);
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn pca_subspace_and_centering() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let basis: Array2<f64> = Array::from_shape_simple_fn((3, 5), || StandardNormal.sample(&mut rng));
        let z: Array2<f64> = Array::from_shape_simple_fn((100, 3), || StandardNormal.sample(&mut rng));
        let x = z.dot(&basis);
        let p = pca_project(x.view(), 3).unwrap();
        assert!((p.explained_ratio.sum() - 1.0).abs() < 1e-10);
        let shifted = &x + 7.5;
        let q = pca_project(shifted.view(), 3).unwrap();
        assert!((&p.projections - &q.projections).iter().all(|v| v.abs() < 1e-8));
        assert!(pca_project(x.view(), 4).is_err());
        for row in p.components.rows() {
            let pivot = row.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn pca_isotropic_top_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Array2<f64> = Array::from_shape_simple_fn((20_000, 5), || StandardNormal.sample(&mut rng));
        let p = pca_project(x.view(), 3).unwrap();
        assert!((p.explained_ratio.sum() - 0.6).abs() < 0.02);
    }

    #[test]
    fn smoothing_constant_and_impulse() {
        let c = Array2::from_elem((30, 2), 3.25);
        let s = gaussian_smooth(c.view(), 4.0).unwrap();
        assert!(s.iter().all(|v| (v - 3.25).abs() < 1e-12));
        let mut imp = Array2::zeros((41, 1));
        imp[[20, 0]] = 1.0;
        let s = gaussian_smooth(imp.view(), 4.0).unwrap();
        // Kernel fully inside the series: peak = 1 / sum_k exp(-k^2 / 32), |k| <= 16.
        let norm: f64 = (-16..=16).map(|k: i32| (-(k * k) as f64 / 32.0).exp()).sum();
        assert!((s[[20, 0]] - 1.0 / norm).abs() < 1e-12);
        assert!(gaussian_smooth(imp.view(), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn smoothing_reduces_total_variation(v in proptest::collection::vec(-5.0f64..5.0, 3..60)) {
            let n = v.len();
            let x = Array2::from_shape_vec((n, 1), v).unwrap();
            let tv = |a: &Array2<f64>| (1..n).map(|t| (a[[t, 0]] - a[[t - 1, 0]]).abs()).sum::<f64>();
            let before = tv(&x);
            prop_assume!(before > 1e-9);
            let s = gaussian_smooth(x.view(), 4.0).unwrap();
            prop_assert!(tv(&s) <= before + 1e-12);
        }

        #[test]
        fn p_value_in_unit_interval(a in proptest::collection::vec(-3.0f64..3.0, 3..20)) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x * 0.5 + i as f64 * 0.01).collect();
            let r = paired_t_test(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }
    }
}
