//! Task losses: softmax cross-entropy for classification and the uncertainty-weighted
//! sum used for two-task training.

use psl_core::{Bound, Error, ParamId, ParamStore, Result, Scalar, Tensor, Var};

/// Log-scale task weights for [`multitask_loss`], stored as one-element tensors.
#[derive(Clone, Copy, Debug)]
pub struct MultiTaskWeights {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl MultiTaskWeights {
    /// Registers both weights, initialized to 0 (equal weighting).
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            w1: store.add(format!("{prefix}.w1"), Tensor::zeros(&[1]))?,
            w2: store.add(format!("{prefix}.w2"), Tensor::zeros(&[1]))?,
        })
    }

    pub fn loss<'t, T: Scalar>(&self, p: &Bound<'t, T>, task1: Var<'t, T>, task2: Var<'t, T>) -> Result<Var<'t, T>> {
        multitask_loss(task1, task2, p.get(self.w1), p.get(self.w2))
    }
}

/// `e^{w1}·L1 + w1 + e^{w2}·L2 + w2`.
///
/// With this sign the derivative `e^{w}·L + 1` is positive for every `L ≥ 0`, so a
/// bracket has no interior minimum and gradient descent drives its weight down
/// without bound. The form `e^{w}·L − w` would settle at `w = −ln L`.
pub fn multitask_loss<'t, T: Scalar>(task1: Var<'t, T>, task2: Var<'t, T>, w1: Var<'t, T>, w2: Var<'t, T>) -> Result<Var<'t, T>> {
    let term = |loss: Var<'t, T>, w: Var<'t, T>| w.exp()?.mul(loss)?.add(w);
    term(task1, w1)?.add(term(task2, w2)?)
}

/// `−log softmax(logits)[target]` for a single sample.
pub fn cross_entropy<'t, T: Scalar>(logits: Var<'t, T>, target: usize) -> Result<Var<'t, T>> {
    let shape = logits.shape();
    if shape.len() != 1 || target >= shape[0] {
        return Err(Error::contract(format!(
            "cross-entropy target {target} is out of range for logits of shape {shape:?}"
        )));
    }
    logits.log_softmax()?.narrow(0, target, 1)?.sum()?.neg()
}
