//! Central finite-difference verification of hand-derived gradients.

use crate::error::{CoreError, Result};
use crate::opt::Parameters;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// (tensor index, coordinate) of the worst disagreement.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Perturbs every coordinate of `params` by +/- step and compares the central
/// difference of `loss_fn` against `analytic`. Relative error per coordinate is
/// |g_a - g_fd| / (1e-8 + |g_a| + |g_fd|).
pub fn finite_diff_check<P, F>(
    params: &P,
    analytic: &P,
    step: f64,
    mut loss_fn: F,
) -> Result<GradCheck>
where
    P: Parameters + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    assert!(step > 0.0, "step must be positive");
    let n_tensors = params.tensors().len();
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for ti in 0..n_tensors {
        let len = params.tensors()[ti].len();
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[ti][i] += step;
            let lp = loss_fn(&plus)?;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][i] -= step;
            let lm = loss_fn(&minus)?;
            if !lp.is_finite() || !lm.is_finite() {
                return Err(CoreError::NonFinite {
                    what: "finite-difference loss evaluation",
                });
            }
            let g_fd = (lp - lm) / (2.0 * step);
            let g_a = analytic.tensors()[ti][i];
            let rel = libm::fabs(g_a - g_fd) / (1e-8 + libm::fabs(g_a) + libm::fabs(g_fd));
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (ti, i);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
