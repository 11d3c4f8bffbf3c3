//! Central finite-difference verification of tape gradients.

use std::fmt;

use super::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`
/// so entries whose true gradient is ~0 are judged on absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.entries.is_empty() && self.max_rel_error() < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "  {:<28} n={:<6} max_rel={:.3e} max_abs={:.3e}",
                e.name, e.checked, e.max_rel_error, e.max_abs_error
            )?;
        }
        write!(
            f,
            "  => {} (max_rel {:.3e} vs tol {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error(),
            self.tolerance
        )
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Name, trainable flag, length and analytic gradient of one tensor.
type TensorGrad = (String, bool, usize, Vec<f64>);

/// Checks the gradient of a scalar function of the parameter sets exposed
/// by `params(model)` against central differences.
///
/// `f` must be deterministic: it is re-run twice per checked scalar.
/// Frozen tensors are skipped.
pub fn grad_check<T, F, P>(
    model: &mut T,
    mut f: F,
    mut params: P,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &T) -> Result<Var>,
    P: FnMut(&mut T) -> Vec<&mut ParamSet>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::Argument(format!("epsilon {epsilon} outside (0, 1e-2]")));
    }
    for set in params(model) {
        set.zero_grads();
    }
    let mut tape = Tape::new();
    let loss = f(&mut tape, model)?;
    let grads = tape.backward(loss)?;
    for set in params(model) {
        grads.accumulate_into(set);
    }

    let layout: Vec<Vec<TensorGrad>> = params(model)
        .into_iter()
        .map(|set| {
            (0..set.len())
                .map(|i| {
                    let t = set.get(i);
                    let g = t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
                    (set.name(i).to_string(), t.requires_grad(), t.len(), g)
                })
                .collect()
        })
        .collect();

    let mut eval = |model: &T| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, model)?;
        Ok(tape.value(out).data()[0])
    };

    let mut entries = Vec::new();
    for (s, tensors) in layout.iter().enumerate() {
        for (i, (name, trainable, _, analytic)) in tensors.iter().enumerate() {
            if !trainable {
                continue;
            }
            let mut entry = GradCheckEntry {
                name: name.clone(),
                max_rel_error: 0.0,
                max_abs_error: 0.0,
                checked: analytic.len(),
            };
            for (j, &a) in analytic.iter().enumerate() {
                let original = params(model)[s].get(i).data()[j];
                params(model)[s].get_mut(i).data_mut()[j] = original + epsilon;
                let plus = eval(model)?;
                params(model)[s].get_mut(i).data_mut()[j] = original - epsilon;
                let minus = eval(model)?;
                params(model)[s].get_mut(i).data_mut()[j] = original;
                let numeric = (plus - minus) / (2.0 * epsilon);
                entry.max_abs_error = entry.max_abs_error.max((a - numeric).abs());
                entry.max_rel_error = entry.max_rel_error.max(relative_error(a, numeric));
            }
            entries.push(entry);
        }
    }
    for set in params(model) {
        set.zero_grads();
    }
    Ok(GradCheckReport { entries, epsilon, tolerance })
}

/// Gradient check for a plain function of input tensors.
pub fn grad_check_inputs<F>(
    f: F,
    inputs: Vec<Tensor>,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut set = ParamSet::new();
    for (i, t) in inputs.into_iter().enumerate() {
        set.push(format!("input{i}"), t);
    }
    grad_check(
        &mut set,
        |tape, set| {
            let vars: Vec<Var> = (0..set.len()).map(|i| tape.param(set, i)).collect();
            f(tape, &vars)
        },
        |set| vec![set],
        epsilon,
        tolerance,
    )
}
