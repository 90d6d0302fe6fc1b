//! Central finite-difference checks of analytic gradients.

use crate::error::{Error, Result};

use super::{Gradients, ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Indices (into the flattened parameter vector) whose relative error
    /// exceeded the tolerance.
    pub failing: Vec<usize>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }
}

/// Relative error with a floor on the denominator so that entries whose true
/// gradient is (near) zero are judged on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` with central differences of `loss` around `point`.
///
/// `indices` restricts the check to a subset of coordinates; `None` checks
/// all of them.
pub fn finite_diff_check(
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
    point: &[f64],
    analytic: &[f64],
    indices: Option<&[usize]>,
    step: f64,
    tol: f64,
) -> Result<FdReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    if point.len() != analytic.len() {
        return Err(Error::shape(format!(
            "{} coordinates but {} analytic gradients",
            point.len(),
            analytic.len()
        )));
    }
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut x = point.to_vec();
    let mut report = FdReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        failing: Vec::new(),
    };
    for &i in indices {
        let orig = x[i];
        x[i] = orig + step;
        let plus = loss(&x)?;
        x[i] = orig - step;
        let minus = loss(&x)?;
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let rel = relative_error(analytic[i], numeric);
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(rel);
        report.max_abs_error = report.max_abs_error.max((analytic[i] - numeric).abs());
        if rel.is_nan() || rel > tol {
            report.failing.push(i);
        }
    }
    Ok(report)
}

/// Gradient of a tape-built loss with respect to every parameter in `store`.
pub fn tape_gradients(
    store: &ParamStore,
    build: &impl Fn(&mut Tape) -> Result<Var>,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new(store);
    let loss = build(&mut tape)?;
    let value = tape.scalar(loss);
    Ok((value, tape.backward(loss)))
}

/// Finite-difference check of a tape-built loss over all parameters of
/// `store`. When `max_checks` is given, an evenly strided subset of the
/// flattened coordinates is checked.
pub fn check_tape_gradients(
    store: &ParamStore,
    build: impl Fn(&mut Tape) -> Result<Var>,
    step: f64,
    tol: f64,
    max_checks: Option<usize>,
) -> Result<FdReport> {
    let (_, grads) = tape_gradients(store, &build)?;
    let analytic = grads.flatten();
    let point = store.flatten();
    let indices: Vec<usize> = match max_checks {
        Some(k) if k < point.len() => {
            let stride = point.len() as f64 / k as f64;
            (0..k).map(|i| (i as f64 * stride) as usize).collect()
        }
        _ => (0..point.len()).collect(),
    };
    let mut scratch = store.clone();
    finite_diff_check(
        |x| {
            scratch.set_flat(x);
            let mut tape = Tape::new(&scratch);
            let loss = build(&mut tape)?;
            Ok(tape.scalar(loss))
        },
        &point,
        &analytic,
        Some(&indices),
        step,
        tol,
    )
}
