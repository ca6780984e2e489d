//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so the numeric gradients are
//! independent of every backward rule on the tape.

use crate::error::Result;
use crate::numcore::{ParamId, ParamStore};

/// Outcome of comparing analytic and numeric gradients for one parameter entry.
#[derive(Debug, Clone)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

/// `|a − n| / max(|a|, |n|)`, with differences below `abs_floor` treated as zero.
pub fn relative_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < abs_floor {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Central difference `(f(θ+h) − f(θ−h)) / 2h` for every entry of every listed
/// parameter, compared against `analytic` (same layout as the store's grads).
pub fn check_params<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    analytic: &ParamStore,
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut report = GradCheckReport::default();
    for &id in ids {
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let up = loss(store)?;
            store.value_mut(id).data_mut()[i] = orig - h;
            let down = loss(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.grad(id).data()[i];
            let rel = relative_error(a, numeric, abs_floor);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= rel_tol {
                report.failures.push(GradMismatch {
                    param: store.name(id).to_string(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

/// Convenience wrapper: computes analytic grads with `grad_fn`, then checks all
/// parameters of `store`.
pub fn check_all<G, F>(
    store: &mut ParamStore,
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
    mut grad_fn: G,
    loss: F,
) -> Result<GradCheckReport>
where
    G: FnMut(&mut ParamStore) -> Result<()>,
    F: FnMut(&ParamStore) -> Result<f64>,
{
    store.zero_grad();
    grad_fn(store)?;
    let analytic = store.clone();
    let ids: Vec<ParamId> = store.ids().collect();
    check_params(store, &ids, &analytic, h, rel_tol, abs_floor, loss)
}
