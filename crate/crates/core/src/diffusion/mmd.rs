use ndarray::{Array2, ArrayView1, ArrayView2};

/// Gaussian RBF kernel `exp(-|a - b|^2 / (2 sigma^2))`.
pub fn rbf_kernel(a: ArrayView1<f64>, b: ArrayView1<f64>, bandwidth_sq: f64) -> f64 {
    debug_assert!(bandwidth_sq > 0.0);
    let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * bandwidth_sq)).exp()
}

fn mean_kernel(x: ArrayView2<f64>, y: ArrayView2<f64>, bw: f64) -> f64 {
    let mut acc = 0.0;
    for a in x.rows() {
        for b in y.rows() {
            acc += rbf_kernel(a, b, bw);
        }
    }
    acc / (x.nrows() * y.nrows()) as f64
}

/// Biased squared MMD between two samples (rows), all pairs including the
/// diagonal.
pub fn mmd(x: ArrayView2<f64>, y: ArrayView2<f64>, bandwidth_sq: f64) -> f64 {
    assert!(x.nrows() > 0 && y.nrows() > 0, "mmd needs non-empty samples");
    mean_kernel(x, x, bandwidth_sq) + mean_kernel(y, y, bandwidth_sq) - 2.0 * mean_kernel(x, y, bandwidth_sq)
}

/// MMD and its gradient with respect to the rows of `x`.
pub fn mmd_with_grad(x: ArrayView2<f64>, y: ArrayView2<f64>, bandwidth_sq: f64) -> (f64, Array2<f64>) {
    let (n, dim) = x.dim();
    let m = y.nrows();
    let mut grad = Array2::zeros((n, dim));
    let (mut kxx, mut kxy) = (0.0, 0.0);
    let wxx = 1.0 / (n * n) as f64;
    let wxy = 2.0 / (n * m) as f64;
    for j in 0..n {
        let xj = x.row(j);
        for k in 0..n {
            let kv = rbf_kernel(xj, x.row(k), bandwidth_sq);
            kxx += kv;
            // x_j appears in both slots of k(x_j, x_k) and k(x_k, x_j).
            for d in 0..dim {
                grad[[j, d]] -= 2.0 * wxx * kv * (xj[d] - x[[k, d]]) / bandwidth_sq;
            }
        }
        for k in 0..m {
            let kv = rbf_kernel(xj, y.row(k), bandwidth_sq);
            kxy += kv;
            for d in 0..dim {
                grad[[j, d]] += wxy * kv * (xj[d] - y[[k, d]]) / bandwidth_sq;
            }
        }
    }
    let value = kxx * wxx + mean_kernel(y, y, bandwidth_sq) - kxy * wxy;
    (value, grad)
}
