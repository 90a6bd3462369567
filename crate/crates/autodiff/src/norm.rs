use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics and update the running averages.
    Train,
    /// Normalize with the running averages.
    Eval,
}

/// Running statistics of a batch-normalization layer over the rows of a
/// `[rows, features]` input. The affine gain and bias live on the tape as
/// ordinary parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub eps: f64,
    pub momentum: f64,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var, gain: Var, bias: Var, mode: NormMode) -> Result<Var> {
        if tape.value(x).shape().get(1) != Some(&self.features()) {
            return Err(shape_err(
                "batch_norm",
                format!("input {:?} vs {} features", tape.value(x).shape(), self.features()),
            ));
        }
        match mode {
            NormMode::Train => {
                let (y, mean, var) = tape.column_norm(x, gain, bias, self.eps, None)?;
                let m = self.momentum;
                for (r, b) in self.running_mean.iter_mut().zip(&mean) {
                    *r = (1.0 - m) * *r + m * b;
                }
                for (r, b) in self.running_var.iter_mut().zip(&var) {
                    *r = (1.0 - m) * *r + m * b;
                }
                Ok(y)
            }
            NormMode::Eval => {
                let stats = (self.running_mean.as_slice(), self.running_var.as_slice());
                Ok(tape.column_norm(x, gain, bias, self.eps, Some(stats))?.0)
            }
        }
    }
}
