use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Agreement between tape and finite-difference gradients for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub index: usize,
    pub numel: usize,
    pub max_abs_error: f64,
    /// `max_abs_error / max(|analytic|_inf, |numeric|_inf, 1e-8)`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

const SCALE_FLOOR: f64 = 1e-8;

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(f64, Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss).data().first().copied().ok_or(Error::EmptyTape)?;
    Ok((value, tape, vars, loss))
}

/// Compares tape gradients of the scalar built by `f` with central
/// differences of step `step` on every parameter entry. The closure is
/// evaluated twice at the base point first and must give bitwise-equal
/// losses.
pub fn grad_check<F>(params: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (loss, tape, vars, root) = evaluate(&f, params)?;
    let again = evaluate(&f, params)?.0;
    if loss.to_bits() != again.to_bits() {
        return Err(Error::Nondeterministic { first: loss, second: again });
    }
    let grads = tape.backward(root)?;

    let mut work = params.to_vec();
    let mut tensors = Vec::with_capacity(params.len());
    for (index, &var) in vars.iter().enumerate() {
        let numel = params[index].numel();
        let analytic = grads.get_or_zeros(var, numel);
        let mut numeric = vec![0.0; numel];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let base = params[index].data()[k];
            work[index].data_mut()[k] = base + step;
            let plus = evaluate(&f, &work)?.0;
            work[index].data_mut()[k] = base - step;
            let minus = evaluate(&f, &work)?.0;
            work[index].data_mut()[k] = base;
            *slot = (plus - minus) / (2.0 * step);
        }
        let max_abs_error = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = analytic
            .iter()
            .chain(&numeric)
            .map(|v| v.abs())
            .fold(SCALE_FLOOR, f64::max);
        tensors.push(TensorCheck {
            index,
            numel,
            max_abs_error,
            rel_error: max_abs_error / scale,
        });
    }
    Ok(GradCheckReport { loss, tensors })
}
