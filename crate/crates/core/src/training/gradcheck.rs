//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::Parameterized;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for the relative error; below this magnitude the
/// comparison is effectively absolute.
pub const DEFAULT_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub denominator_floor: f64,
}

impl GradCheckOptions {
    pub fn strict(tolerance: f64) -> Self {
        Self {
            step: DEFAULT_STEP,
            tolerance,
            denominator_floor: DEFAULT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_path: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` over every
/// scalar of every tensor in `params`. Each entry is restored bit-exactly
/// after probing.
pub fn check_gradients<P, F>(
    params: &mut P,
    analytic: &P,
    mut loss: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    P: Parameterized,
    F: FnMut(&P) -> Result<f64>,
{
    let grads: Vec<(String, Vec<f64>)> = analytic
        .tensors()
        .into_iter()
        .map(|(p, m)| (p, m.as_slice().to_vec()))
        .collect();
    let sizes: Vec<(String, usize)> = params
        .tensors()
        .into_iter()
        .map(|(p, m)| (p, m.len()))
        .collect();
    if sizes.len() != grads.len() {
        return Err(Error::usage("gradient buffer does not match parameters"));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_path: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        tolerance: opts.tolerance,
        passed: true,
    };
    for (k, (path, n)) in sizes.iter().enumerate() {
        if grads[k].0 != *path || grads[k].1.len() != *n {
            return Err(Error::usage(format!("gradient buffer mismatch at `{path}`")));
        }
        for e in 0..*n {
            let original = params.tensors_mut()[k].1.as_slice()[e];
            let mut eval_at = |v: f64, params: &mut P| -> Result<f64> {
                params.tensors_mut()[k].1.as_mut_slice()[e] = v;
                let l = loss(params)?;
                if !l.is_finite() {
                    return Err(Error::numeric(format!(
                        "loss is {l} while probing `{path}`[{e}]"
                    )));
                }
                Ok(l)
            };
            let plus = eval_at(original + opts.step, params);
            let minus = eval_at(original - opts.step, params);
            params.tensors_mut()[k].1.as_mut_slice()[e] = original;
            let numeric = (plus? - minus?) / (2.0 * opts.step);
            let a = grads[k].1[e];
            let rel = relative_error(a, numeric, opts.denominator_floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst_path.is_empty() {
                report.max_rel_error = rel;
                report.worst_path = path.clone();
                report.worst_index = e;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error < opts.tolerance;
    Ok(report)
}
