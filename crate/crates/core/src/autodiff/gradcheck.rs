//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it is
//! independent of every backward rule it is used to check.

use super::{Tape, Tensor, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradCheck {
    /// Norm-wise relative error `|a - n| / (|a| + |n|)` over one input,
    /// zero when both gradients vanish.
    pub fn relative_error(&self, input: usize) -> f64 {
        relative_error(&self.analytic[input], &self.numeric[input])
    }

    pub fn max_relative_error(&self) -> f64 {
        (0..self.analytic.len())
            .map(|i| self.relative_error(i))
            .fold(0.0, f64::max)
    }
}

pub fn relative_error(a: &Tensor, n: &Tensor) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(n.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm_a = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_n = n.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = norm_a + norm_n;
    if denom < 1e-12 {
        0.0
    } else {
        diff / denom
    }
}

/// Compares tape gradients of a scalar function against central differences
/// for every entry of every input.
pub fn check<F>(inputs: &[Tensor], step: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        tape.backward(loss)?;
        vars.iter().map(|&v| tape.grad(v)).collect::<Vec<_>>()
    };

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].rows(), inputs[i].cols());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * step);
        }
        numeric.push(g);
    }
    Ok(GradCheck { analytic, numeric })
}
