use crate::error::{Error, Result};
use crate::nn::Params;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Check at most this many coordinates, evenly strided over the flat vector.
    pub max_coords: usize,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is numerically zero are judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: usize::MAX,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compare `analytic` against central finite differences of `loss` at `params`.
///
/// Relative error per coordinate is `|a - n| / max(|a| + |n|, floor)`.
pub fn grad_check<P, F>(
    params: &P,
    analytic: &P,
    mut loss: F,
    opts: GradCheckOptions,
) -> Result<GradCheck>
where
    P: Params + Clone,
    F: FnMut(&P) -> f64,
{
    let base = params.flatten();
    let grad = analytic.flatten();
    if base.len() != grad.len() {
        return Err(Error::shape("grad_check", base.len(), grad.len()));
    }
    let f0 = loss(params);
    if !f0.is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check loss at base point".into(),
        });
    }
    let n = base.len();
    let stride = n.div_ceil(opts.max_coords.max(1)).max(1);
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
    };
    for i in (0..n).step_by(stride) {
        flat[i] = base[i] + opts.step;
        probe.assign(&flat);
        let fp = loss(&probe);
        flat[i] = base[i] - opts.step;
        probe.assign(&flat);
        let fm = loss(&probe);
        flat[i] = base[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                context: format!("grad_check loss at coordinate {i}"),
            });
        }
        let numeric = (fp - fm) / (2.0 * opts.step);
        let a = grad[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(opts.floor);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}
