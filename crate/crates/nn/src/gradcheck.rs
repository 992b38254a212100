//! Central finite-difference verification of reverse-mode gradients.

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

/// Denominator floor for the relative error; entries whose analytic and
/// numeric gradients are both below it are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compare `backward` against `(f(x+eps) - f(x-eps)) / (2 eps)` for every
/// scalar in `params` (or only the ids listed in `only`).
pub fn grad_check<F>(
    f: F,
    params: &ParamStore<f64>,
    eps: f64,
    only: Option<&[ParamId]>,
) -> GradCheckReport
where
    F: Fn(&mut Graph<'_, f64>) -> Var,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = f(&mut g);
        g.backward(loss)
    };
    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => params.ids().collect(),
    };
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
    };
    let eval = |store: &ParamStore<f64>| {
        let mut g = Graph::new(store);
        let loss = f(&mut g);
        g.value(loss).item()
    };
    for id in ids {
        let n = params.get(id).len();
        for i in 0..n {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(&work);
            work.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(&work);
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map(|t| t.data()[i]).unwrap_or(0.0);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params.name(id).to_string(), i));
            }
        }
    }
    report
}
