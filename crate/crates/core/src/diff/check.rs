//! Central finite-difference verification of tape gradients.

use ndarray::Array2;
use serde::Serialize;

use crate::data::Triple;
use crate::error::Result;
use crate::model::{self, EdgeIndex, ModelParams};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest relative error a passing check may report.
pub const PASS_THRESHOLD: f64 = 1e-4;

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamError {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub params: Vec<ParamError>,
    pub max_rel_error: f64,
    pub step: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= PASS_THRESHOLD
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<24} {:>12} {:>8} {:>14} {:>14}", "parameter", "max rel err", "index", "analytic", "numeric")?;
        for p in &self.params {
            writeln!(
                f,
                "{:<24} {:>12.3e} {:>8} {:>14.6e} {:>14.6e}",
                p.name, p.max_rel_error, p.worst_index, p.analytic, p.numeric
            )?;
        }
        write!(
            f,
            "max relative error {:.3e} over {} entries (step {:e}): {}",
            self.max_rel_error,
            self.checked,
            self.step,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Compares `analytic` against central differences of `f` around `point`,
/// one scalar at a time.
pub fn gradcheck_with(
    names: &[String],
    point: &[Array2<f64>],
    analytic: &[Array2<f64>],
    step: f64,
    mut f: impl FnMut(&[Array2<f64>]) -> Result<f64>,
) -> Result<GradReport> {
    let mut work: Vec<Array2<f64>> = point.to_vec();
    let mut params = Vec::with_capacity(point.len());
    let mut checked = 0;
    for (i, name) in names.iter().enumerate() {
        let mut worst = ParamError {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..point[i].len() {
            let orig = point[i].as_slice().expect("standard layout")[k];
            work[i].as_slice_mut().expect("standard layout")[k] = orig + step;
            let plus = f(&work)?;
            work[i].as_slice_mut().expect("standard layout")[k] = orig - step;
            let minus = f(&work)?;
            work[i].as_slice_mut().expect("standard layout")[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i].as_slice().expect("standard layout")[k];
            let err = relative_error(a, numeric);
            checked += 1;
            if err > worst.max_rel_error || err.is_nan() {
                worst = ParamError {
                    name: name.clone(),
                    max_rel_error: err,
                    worst_index: k,
                    analytic: a,
                    numeric,
                };
            }
        }
        params.push(worst);
    }
    let max_rel_error = params
        .iter()
        .map(|p| p.max_rel_error)
        .fold(0.0, |a: f64, b| if b.is_nan() { f64::NAN } else { a.max(b) });
    Ok(GradReport {
        params,
        max_rel_error,
        step,
        checked,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub step: f64,
    pub reg_coeff: f64,
    /// Adds a deliberate error to the analytic gradient, for negative
    /// controls.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: FD_STEP,
            reg_coeff: 0.0,
            corrupt: false,
        }
    }
}

/// Full model check: the batch loss gradient with respect to every raw
/// parameter.
pub fn gradcheck_model(
    params: &ModelParams,
    edges: Option<&EdgeIndex>,
    batch: &[Triple],
    options: GradcheckOptions,
) -> Result<GradReport> {
    let lg = model::loss_and_grad(params, edges, batch, options.reg_coeff)?;
    let mut grads = lg.grads;
    if options.corrupt {
        if let Some(v) = grads.first_mut().and_then(|g| g.iter_mut().next()) {
            *v = *v * 1.5 + 1e-3;
        }
    }
    let mut probe = params.clone();
    gradcheck_with(params.names(), params.arrays(), &grads, options.step, |arrays| {
        for (dst, src) in probe.arrays_mut().iter_mut().zip(arrays) {
            dst.assign(src);
        }
        model::loss_value(&probe, edges, batch, options.reg_coeff)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 3.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-10, 0.0) - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let names = vec!["x".to_string()];
        let x = array![[0.3, -1.2, 2.0]];
        let f = |a: &[Array2<f64>]| Ok(a[0].iter().map(|v| v * v * v).sum::<f64>());
        let good = x.mapv(|v| 3.0 * v * v);
        let r = gradcheck_with(&names, std::slice::from_ref(&x), &[good], FD_STEP, f).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.checked, 3);
        let bad = x.mapv(|v| 3.0 * v * v + 0.01);
        assert!(!gradcheck_with(&names, &[x], &[bad], FD_STEP, f).unwrap().passed());
    }
}
