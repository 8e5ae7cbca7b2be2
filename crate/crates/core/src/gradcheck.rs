//! Central-difference gradient oracle (64-bit).

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;

/// Max over all coordinates of all inputs of
/// `|analytic − numeric| / max(1, |numeric|)`, where `numeric` is the central difference
/// with step `h` and `analytic` comes from a reverse sweep.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic = analytic_grads(&f, inputs)?;
    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let up = eval(&f, &probe)?;
            probe[i].data_mut()[j] = orig - h;
            let down = eval(&f, &probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[j];
            if a.is_nan() || numeric.is_nan() {
                return Err(Error::GradNan {
                    input: i,
                    coord: j,
                    analytic: a,
                    numeric,
                });
            }
            worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    // Trainable leaves, so functions that differentiate internally see the same graph.
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    f(&vars)?.item()
}

/// Reverse-mode gradients of a scalar function for each input.
pub fn analytic_grads<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&vars)?;
    if loss.numel() != 1 {
        return Err(Error::contract(format!(
            "gradcheck needs a scalar function, got shape {:?}",
            loss.shape()
        )));
    }
    let grads = tape.backward(loss)?;
    Ok(vars
        .iter()
        .map(|v| grads.tensor(v).unwrap_or_else(|| Tensor::zeros(&v.shape())))
        .collect())
}
