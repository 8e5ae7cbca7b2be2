use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::tape::{Op, Tape, Unary, Var};

/// Gradients of a scalar loss with respect to the trainable leaves it reaches.
pub struct Gradients<'t, T: Scalar> {
    grads: HashMap<usize, Var<'t, T>>,
}

impl<'t, T: Scalar> Gradients<'t, T> {
    pub fn get(&self, v: &Var<'t, T>) -> Option<Var<'t, T>> {
        self.grads.get(&v.id).copied()
    }

    pub fn tensor(&self, v: &Var<'t, T>) -> Option<Tensor<T>> {
        self.get(v).map(|g| g.tensor())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Restores the tape's recording/counting modes when the reverse sweep exits.
struct ModeGuard<'a, T: Scalar> {
    tape: &'a Tape<T>,
    recording: bool,
    counting: bool,
}

impl<T: Scalar> Drop for ModeGuard<'_, T> {
    fn drop(&mut self) {
        self.tape.recording.set(self.recording);
        self.tape.set_counting(self.counting);
    }
}

impl<T: Scalar> Tape<T> {
    /// Reverse sweep from `loss` populating the gradient of every trainable leaf.
    ///
    /// Backpropagating twice from the same loss is an error until [`Tape::reset_grads`].
    pub fn backward<'t>(&'t self, loss: Var<'t, T>) -> Result<Gradients<'t, T>> {
        let all = self.sweep(loss, None, false)?;
        let nodes = self.nodes.borrow();
        let grads: HashMap<_, _> = all
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| {
                let n = &nodes[i];
                (matches!(n.op, Op::Leaf) && n.requires_grad).then_some((i, g?))
            })
            .collect();
        if grads.is_empty() {
            log::warn!("backward: loss does not depend on any trainable leaf");
        }
        Ok(Gradients { grads })
    }

    /// Gradients of `loss` with respect to `wrt`, zero where unreachable.
    ///
    /// With `create_graph` the gradients are themselves differentiable nodes, so a
    /// loss built from them can be backpropagated again (double backward).
    pub fn grad<'t>(&'t self, loss: Var<'t, T>, wrt: &[Var<'t, T>], create_graph: bool) -> Result<Vec<Var<'t, T>>> {
        let ids: Vec<usize> = wrt.iter().map(|v| v.id).collect();
        let all = self.sweep(loss, Some(&ids), create_graph)?;
        wrt.iter()
            .map(|v| match all.get(v.id).copied().flatten() {
                Some(g) => Ok(g),
                None => Ok(self.constant(Tensor::zeros(&v.shape()))),
            })
            .collect()
    }

    fn sweep<'t>(&'t self, loss: Var<'t, T>, wrt: Option<&[usize]>, create_graph: bool) -> Result<Vec<Option<Var<'t, T>>>> {
        loss.same_tape(&loss)?;
        let lv = loss.value();
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !self.consumed.borrow_mut().insert(loss.id) {
            return Err(Error::contract(
                "backward already ran from this loss; call reset_grads first",
            ));
        }
        let n = loss.id + 1;
        // Constant nodes are recorded as leaves, so `wrt` should name trainable nodes;
        // anything else simply receives a zero gradient.
        let needs: Vec<bool> = {
            let nodes = self.nodes.borrow();
            match wrt {
                None => nodes[..n].iter().map(|nd| nd.requires_grad).collect(),
                Some(ids) => {
                    let mut desc = vec![false; n];
                    for i in 0..n {
                        desc[i] = ids.contains(&i) || nodes[i].op.inputs().iter().any(|&p| desc[p]);
                    }
                    desc
                }
            }
        };

        let _guard = ModeGuard {
            tape: self,
            recording: self.recording.replace(create_graph),
            counting: self.set_counting(false),
        };

        let mut grads: Vec<Option<Var<'t, T>>> = vec![None; n];
        grads[loss.id] = Some(self.constant(Tensor::full(lv.shape(), T::one())));
        for i in (0..n).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let op = self.nodes.borrow()[i].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            for (p, gp) in self.vjp(i, &op, g, &needs, create_graph)? {
                grads[p] = Some(match grads[p] {
                    None => gp,
                    Some(acc) => acc.add(gp)?,
                });
            }
        }
        Ok(grads)
    }

    /// Vector-Jacobian products of node `i` for each input that needs a gradient.
    fn vjp<'t>(&'t self, i: usize, op: &Op, g: Var<'t, T>, needs: &[bool], create_graph: bool) -> Result<Vec<(usize, Var<'t, T>)>> {
        let var = |id: usize| Var { tape: self, id };
        let out = var(i);
        let shape_of = |id: usize| self.value(id).shape().to_vec();
        let mut res = Vec::with_capacity(2);
        let mut push = |id: usize, f: &mut dyn FnMut() -> Result<Var<'t, T>>| -> Result<()> {
            if needs[id] {
                res.push((id, f()?));
            }
            Ok(())
        };
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                push(a, &mut || Ok(g))?;
                push(b, &mut || Ok(g))?;
            }
            Op::Sub(a, b) => {
                push(a, &mut || Ok(g))?;
                push(b, &mut || g.neg())?;
            }
            Op::Mul(a, b) => {
                push(a, &mut || g.mul(var(b)))?;
                push(b, &mut || g.mul(var(a)))?;
            }
            Op::Div(a, b) => {
                push(a, &mut || g.div(var(b)))?;
                push(b, &mut || g.mul(out)?.div(var(b))?.neg())?;
            }
            Op::Scale(a, c) => push(a, &mut || g.scale(c))?,
            Op::AddConst(a) => push(a, &mut || Ok(g))?,
            Op::Unary(a, u) => {
                let x = var(a);
                push(a, &mut || self.unary_vjp(u, x, out, g, create_graph))?;
            }
            Op::Matmul(a, b) => {
                push(a, &mut || g.matmul(var(b).t()?))?;
                push(b, &mut || var(a).t()?.matmul(g))?;
            }
            Op::Transpose(a) => push(a, &mut || g.t())?,
            Op::Reshape(a) => push(a, &mut || g.reshape(&shape_of(a)))?,
            Op::Permute(a, ref perm) => {
                let mut inv = vec![0; perm.len()];
                for (k, &p) in perm.iter().enumerate() {
                    inv[p] = k;
                }
                push(a, &mut || g.permute(&inv))?;
            }
            Op::Narrow { x, axis, start } => {
                push(x, &mut || g.embed(axis, start, shape_of(x)[axis]))?;
            }
            Op::Embed { x, axis, start } => {
                push(x, &mut || g.narrow(axis, start, shape_of(x)[axis]))?;
            }
            Op::Concat(ref xs, axis) => {
                let mut off = 0;
                for &x in xs {
                    let len = shape_of(x)[axis];
                    push(x, &mut || g.narrow(axis, off, len))?;
                    off += len;
                }
            }
            Op::SumAll(a) => push(a, &mut || g.expand_all(&shape_of(a)))?,
            Op::ExpandAll(a) => push(a, &mut || g.sum()?.reshape(&shape_of(a)))?,
            Op::SumAxis(a, axis) => push(a, &mut || g.expand_axis(axis, shape_of(a)[axis]))?,
            Op::ExpandAxis(a, axis) => push(a, &mut || g.sum_axis(axis))?,
            Op::ReduceTo(a, axis) => push(a, &mut || g.broadcast_along(axis, &shape_of(a)))?,
            Op::BroadcastAlong(a, axis) => push(a, &mut || g.reduce_to(axis))?,
            Op::Softmax(a) => {
                push(a, &mut || {
                    let shape = shape_of(a);
                    let last = shape.len() - 1;
                    let dot = g.mul(out)?.sum_axis(last)?.expand_axis(last, shape[last])?;
                    out.mul(g.sub(dot)?)
                })?;
            }
            Op::LogSoftmax(a) => {
                push(a, &mut || {
                    let shape = shape_of(a);
                    let last = shape.len() - 1;
                    let total = g.sum_axis(last)?.expand_axis(last, shape[last])?;
                    g.sub(var(a).softmax()?.mul(total)?)
                })?;
            }
            Op::LayerNorm { x, eps } => {
                push(x, &mut || {
                    if create_graph {
                        return Err(Error::HigherOrder { op: "layernorm" });
                    }
                    let xv = self.value(x);
                    let n = *xv.shape().last().unwrap_or(&1);
                    let (y, rstd) = kernels::layernorm_rows(xv.data(), n, T::lit(eps));
                    let gv = g.value();
                    let dx = kernels::layernorm_rows_backward(&y, &rstd, gv.data(), n);
                    Ok(self.constant(Tensor::new(xv.shape(), dx)?))
                })?;
            }
            Op::Conv2d { x, w, stride, pad } => {
                let xs = shape_of(x);
                let ws = shape_of(w);
                push(x, &mut || g.conv_input_grad(var(w), stride, pad, [xs[2], xs[3]]))?;
                push(w, &mut || Var::conv_weight_grad(var(x), g, stride, pad, [ws[2], ws[3]]))?;
            }
            Op::ConvInputGrad { g: gi, w, stride, pad } => {
                let ws = shape_of(w);
                push(gi, &mut || g.conv2d(var(w), stride, pad))?;
                push(w, &mut || Var::conv_weight_grad(g, var(gi), stride, pad, [ws[2], ws[3]]))?;
            }
            Op::ConvWeightGrad { x, g: gy, stride, pad } => {
                let xs = shape_of(x);
                push(x, &mut || var(gy).conv_input_grad(g, stride, pad, [xs[2], xs[3]]))?;
                push(gy, &mut || var(x).conv2d(g, stride, pad))?;
            }
        }
        Ok(res)
    }

    fn unary_vjp<'t>(&'t self, u: Unary, x: Var<'t, T>, out: Var<'t, T>, g: Var<'t, T>, create_graph: bool) -> Result<Var<'t, T>> {
        let mask = |f: &dyn Fn(T) -> T| self.constant(x.value().map(f));
        match u {
            Unary::Neg => g.neg(),
            Unary::Abs => g.mul(mask(&|v| if v > T::zero() { T::one() } else if v < T::zero() { -T::one() } else { T::zero() })),
            Unary::Cos => g.mul(x.sin()?)?.neg(),
            Unary::Sin => g.mul(x.cos()?),
            Unary::Exp => g.mul(out),
            Unary::Log => g.div(x),
            Unary::Sqrt => g.scale(0.5)?.div(out),
            Unary::Tanh => g.sub(g.mul(out.square()?)?),
            Unary::Sigmoid => g.mul(out.mul(out.neg()?.add_const(1.0)?)?),
            Unary::Relu => g.mul(mask(&|v| if v > T::zero() { T::one() } else { T::zero() })),
            Unary::LeakyRelu(s) => g.mul(mask(&|v| if v > T::zero() { T::one() } else { T::lit(s) })),
            Unary::Gelu => g.mul(x.unary(Unary::GeluGrad)?),
            Unary::GeluGrad => {
                if create_graph {
                    return Err(Error::HigherOrder { op: "gelu_grad" });
                }
                g.mul(mask(&kernels::gelu_grad2))
            }
        }
    }
}
