//! Central finite-difference oracle for analytic gradients.

use super::params::{Gradients, ParamStore};
use crate::error::Result;

/// Denominator floor for the relative error, so entries whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Perturbs every scalar of every parameter and compares the fourth-order
/// central difference
/// `(-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h` of `loss` with
/// `analytic`. Parameters absent from `analytic` are expected to have zero
/// gradient.
pub fn check_gradients<F>(
    store: &ParamStore,
    analytic: &Gradients,
    step: f64,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for id in store.ids() {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            let mut at = |offset: f64| -> Result<f64> {
                work.get_mut(id).data_mut()[i] = orig + offset;
                loss(&work)
            };
            let (p2, p1, m1, m2) = (at(2.0 * step)?, at(step)?, at(-step)?, at(-2.0 * step)?);
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            let rel = relative_error(a, numeric);
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = store.name(id).to_string();
                report.worst_index = i;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
