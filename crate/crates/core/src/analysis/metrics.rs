use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView2, ArrayView3, Axis};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

fn trace_cov(rows: &[ndarray::ArrayView1<f64>]) -> f64 {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    (0..dim)
        .map(|d| {
            let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n
        })
        .sum()
}

/// Total code variance over mean within-condition variance (covariance
/// traces). Conditions with fewer than two trials are skipped. Returns
/// `f64::INFINITY` when every condition is collapsed to a point.
pub fn code_snr(codes: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    if codes.nrows() != labels.len() {
        return Err(Error::shape("code_snr", codes.nrows(), labels.len()));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let within: Vec<f64> = groups
        .values()
        .filter(|g| g.len() >= 2)
        .map(|g| trace_cov(&g.iter().map(|&i| codes.row(i)).collect::<Vec<_>>()))
        .collect();
    if within.len() < 2 {
        return Err(Error::invalid("code_snr", "need at least two conditions with two or more trials"));
    }
    let total = trace_cov(&codes.rows().into_iter().collect::<Vec<_>>());
    let denom = within.iter().sum::<f64>() / within.len() as f64;
    if denom < 1e-12 {
        return Ok(f64::INFINITY);
    }
    Ok(total / denom)
}

/// Mean absolute cosine over all pairs of rows.
pub fn axis_orthogonality(rows: ArrayView2<f64>) -> Result<f64> {
    let k = rows.nrows();
    if k < 2 {
        return Err(Error::invalid("axis_orthogonality", "need at least two rows"));
    }
    let norms: Vec<f64> = rows.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if norms.iter().any(|&n| n == 0.0) {
        return Err(Error::invalid("axis_orthogonality", "zero row"));
    }
    let mut acc = 0.0;
    let mut pairs = 0;
    for i in 0..k {
        for j in i + 1..k {
            acc += (rows.row(i).dot(&rows.row(j)) / (norms[i] * norms[j])).abs();
            pairs += 1;
        }
    }
    Ok(acc / pairs as f64)
}

/// Expected `|cos|` between two independent standard-normal vectors in `dim`
/// dimensions: `Gamma(d/2) / (sqrt(pi) Gamma((d+1)/2))`. Tends to
/// `sqrt(2 / (pi d))` for large `d`.
pub fn random_orthogonality_reference(dim: usize) -> f64 {
    let d = dim as f64;
    (ln_gamma(d / 2.0) - ln_gamma((d + 1.0) / 2.0)).exp() / std::f64::consts::PI.sqrt()
}

/// Bins averaged to read start and end positions off a decoded trajectory.
pub const ENDPOINT_BINS: usize = 5;

/// `[start x, start y, end x, end y]` from a `(T, 2)` trajectory.
pub fn trajectory_features(traj: ArrayView2<f64>) -> [f64; 4] {
    let k = ENDPOINT_BINS.min(traj.nrows());
    let first = traj.slice(s![..k, ..]).mean_axis(Axis(0)).expect("non-empty");
    let last = traj.slice(s![traj.nrows() - k.., ..]).mean_axis(Axis(0)).expect("non-empty");
    [first[0], first[1], last[0], last[1]]
}

/// Total absolute drift of the variables that a sweep along `swept` (2 for
/// target x, 3 for target y) should leave alone: start x/y and the other
/// target coordinate, relative to the anchor trajectory.
pub fn unintended_movement(sweep: &[Array2<f64>], anchor: ArrayView2<f64>, swept: usize) -> Result<f64> {
    if swept != 2 && swept != 3 {
        return Err(Error::invalid("unintended_movement", "sweep must be along target x or y"));
    }
    let fixed = [0, 1, if swept == 2 { 3 } else { 2 }];
    let base = trajectory_features(anchor);
    Ok(sweep
        .iter()
        .map(|t| {
            let f = trajectory_features(t.view());
            fixed.iter().map(|&k| (f[k] - base[k]).abs()).sum::<f64>()
        })
        .sum())
}

/// Per-channel `1 - SS_res / SS_tot`, pooled over trials and bins of
/// `(trials, T, N)` arrays. Zero-variance channels yield NaN.
pub fn recon_r2(truth: ArrayView3<f64>, pred: ArrayView3<f64>) -> Result<Vec<f64>> {
    if truth.dim() != pred.dim() {
        return Err(Error::shape("recon_r2", format!("{:?}", truth.dim()), format!("{:?}", pred.dim())));
    }
    let n = truth.dim().2;
    Ok((0..n)
        .map(|c| {
            let t = truth.index_axis(Axis(2), c);
            let p = pred.index_axis(Axis(2), c);
            let mean = t.mean().unwrap_or(0.0);
            let ss_tot: f64 = t.iter().map(|v| (v - mean).powi(2)).sum();
            let ss_res: f64 = t.iter().zip(p.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            if ss_tot <= 1e-12 * t.len() as f64 {
                f64::NAN
            } else {
                1.0 - ss_res / ss_tot
            }
        })
        .collect())
}

/// Mean of the finite entries.
pub fn finite_mean(v: &[f64]) -> f64 {
    let f: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if f.is_empty() {
        f64::NAN
    } else {
        f.iter().sum::<f64>() / f.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array, Array3};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn snr_closed_form() {
        // Conditions at +-1 with within-condition variance 0.01.
        let codes = arr2(&[[0.9], [1.1], [-0.9], [-1.1]]);
        let snr = code_snr(codes.view(), &[0, 0, 1, 1]).unwrap();
        assert!((snr - 101.0).abs() < 1e-9, "{snr}");
    }

    #[test]
    fn snr_collapsed_conditions_is_infinite() {
        let codes = arr2(&[[1.0], [1.0], [-1.0], [-1.0]]);
        assert_eq!(code_snr(codes.view(), &[0, 0, 1, 1]).unwrap(), f64::INFINITY);
        assert!(code_snr(codes.view(), &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn snr_permutation_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut labels: Vec<usize> = (0..600).map(|i| i % 12).collect();
        let codes = Array::from_shape_fn((600, 5), |(i, d)| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (labels[i] * (d + 1)) as f64 * 0.3 + 0.2 * e
        });
        assert!(code_snr(codes.view(), &labels).unwrap() > 10.0);
        let null: Vec<f64> = (0..100)
            .map(|_| {
                labels.shuffle(&mut rng);
                code_snr(codes.view(), &labels).unwrap()
            })
            .collect();
        let mean = null.iter().sum::<f64>() / null.len() as f64;
        let sd = (null.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sd + 0.05, "{mean} {sd}");
    }

    #[test]
    fn snr_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let codes: Array2<f64> = Array::from_shape_simple_fn((40, 2), || StandardNormal.sample(&mut rng));
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = arr2(&[[c, -s], [s, c]]);
        let a = code_snr(codes.view(), &labels).unwrap();
        let b = code_snr(codes.dot(&rot).view(), &labels).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn orthogonality_extremes() {
        assert_eq!(axis_orthogonality(arr2(&[[1.0, 0.0], [0.0, 3.0]]).view()).unwrap(), 0.0);
        assert!((axis_orthogonality(arr2(&[[1.0, 2.0], [2.0, 4.0]]).view()).unwrap() - 1.0).abs() < 1e-15);
        assert!(axis_orthogonality(arr2(&[[1.0, 2.0], [0.0, 0.0]]).view()).is_err());
        assert!(axis_orthogonality(arr2(&[[1.0, 2.0]]).view()).is_err());
    }

    #[test]
    fn random_reference_matches_monte_carlo() {
        assert!((random_orthogonality_reference(2) - 2.0 / std::f64::consts::PI).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let r: Array2<f64> = Array::from_shape_simple_fn((2, 5), || StandardNormal.sample(&mut rng));
            acc += axis_orthogonality(r.view()).unwrap();
        }
        let mc = acc / n as f64;
        let exact = random_orthogonality_reference(5);
        assert!((mc - exact).abs() < 0.005, "mc {mc} exact {exact}");
        // Large-dimension approximation is close but not exact at d = 5.
        let approx = (2.0 / (std::f64::consts::PI * 5.0)).sqrt();
        assert!((exact - 0.3750).abs() < 1e-4 && (approx - 0.3568).abs() < 1e-4);
    }

    #[test]
    fn unintended_movement_cases() {
        let anchor = Array2::from_shape_fn((40, 2), |(t, _)| t as f64 * 0.001);
        let same = vec![anchor.clone(); 3];
        assert_eq!(unintended_movement(&same, anchor.view(), 2).unwrap(), 0.0);
        let mut moved = same.clone();
        moved[1].column_mut(0).mapv_inplace(|v| v + 0.02);
        // Start-x shifts by 0.02; target x is swept so its change is ignored.
        let u = unintended_movement(&moved, anchor.view(), 2).unwrap();
        assert!((u - 0.02).abs() < 1e-12);
        // Swept along y, the same shift also moves end x.
        let u = unintended_movement(&moved, anchor.view(), 3).unwrap();
        assert!((u - 0.04).abs() < 1e-12);
    }

    #[test]
    fn r2_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth: Array3<f64> = Array::from_shape_simple_fn((50, 40, 3), || StandardNormal.sample(&mut rng));
        assert!(recon_r2(truth.view(), truth.view()).unwrap().iter().all(|&r| r == 1.0));
        let mut mean_pred = truth.clone();
        for c in 0..3 {
            let m = truth.index_axis(Axis(2), c).mean().unwrap();
            mean_pred.index_axis_mut(Axis(2), c).fill(m);
        }
        assert!(recon_r2(truth.view(), mean_pred.view()).unwrap().iter().all(|r| r.abs() < 1e-12));
        // Noise with the channel's own variance: R^2 near 0.
        let noise: Array3<f64> = Array::from_shape_simple_fn(truth.dim(), || StandardNormal.sample(&mut rng));
        let noisy = &truth + &noise;
        for r in recon_r2(truth.view(), noisy.view()).unwrap() {
            assert!(r.abs() < 0.1, "{r}");
        }
        let flat = Array3::ones((4, 5, 1));
        let r = recon_r2(flat.view(), flat.view()).unwrap();
        assert!(r[0].is_nan());
        assert!(finite_mean(&[1.0, f64::NAN, 0.0]) == 0.5);
    }

    proptest! {
        #[test]
        fn orthogonality_scale_invariant(seed in 0u64..300, scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r: Array2<f64> = Array::from_shape_simple_fn((3, 5), || StandardNormal.sample(&mut rng));
            let mut scaled = r.clone();
            scaled.row_mut(1).mapv_inplace(|v| v * scale);
            let a = axis_orthogonality(r.view()).unwrap();
            let b = axis_orthogonality(scaled.view()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        }

        #[test]
        fn r2_at_most_one(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t: Array3<f64> = Array::from_shape_simple_fn((3, 4, 2), || StandardNormal.sample(&mut rng));
            let p: Array3<f64> = Array::from_shape_simple_fn((3, 4, 2), || StandardNormal.sample(&mut rng));
            for r in recon_r2(t.view(), p.view()).unwrap() {
                prop_assert!(r <= 1.0);
            }
        }
    }
}
