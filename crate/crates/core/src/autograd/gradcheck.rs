//! Central finite-difference gradient checks.

use super::{BoundParams, OpKind, ParameterStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Check at most this many coordinates per tensor (evenly strided);
    /// `None` checks all of them.
    pub max_coords_per_tensor: Option<usize>,
    pub fault: Option<OpKind>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            max_coords_per_tensor: None,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Compares reverse-mode gradients of `f` against central differences at
/// the point given by `store`.
pub fn gradcheck<F>(store: &ParameterStore<f64>, opts: &GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &BoundParams<Var>) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.inject_fault(opts.fault);
    let bound = store.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    let mut grads = tape.backward(loss)?;
    let analytic = bound.gradients(&tape, &mut grads);

    let eval = |probe: &ParameterStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = probe.bind(&mut tape);
        let loss = f(&mut tape, &bound)?;
        let v = tape.tensor(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                op: "function at finite-difference probe".into(),
            });
        }
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let mut probe = store.clone();
    for (name, grad) in &analytic {
        let len = grad.len();
        let stride = match opts.max_coords_per_tensor {
            Some(cap) if cap > 0 && len > cap => len.div_ceil(cap),
            _ => 1,
        };
        for i in (0..len).step_by(stride) {
            let orig = store.get(name)?.data()[i];
            probe.get_mut(name)?.data_mut()[i] = orig + opts.epsilon;
            let plus = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig - opts.epsilon;
            let minus = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((name.clone(), i));
                }
            }
        }
    }
    Ok(report)
}

