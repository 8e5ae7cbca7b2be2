//! Differentiable forward ops.
//!
//! Binary elementwise ops take equal shapes, or a one-element operand which is
//! broadcast with [`Var::expand_all`]. Anything richer goes through the explicit
//! `broadcast_along` / `expand_axis` ops so every adjoint stays a single op.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

use super::tape::{checks_enabled, Op, Unary, Var};

fn unary_value<T: Scalar>(u: Unary, x: T) -> T {
    match u {
        Unary::Neg => -x,
        Unary::Abs => x.abs(),
        Unary::Cos => x.cos(),
        Unary::Sin => x.sin(),
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Sqrt => x.sqrt(),
        Unary::Tanh => x.tanh(),
        Unary::Sigmoid => T::one() / (T::one() + (-x).exp()),
        Unary::Relu => x.max(T::zero()),
        Unary::LeakyRelu(slope) => {
            if x > T::zero() {
                x
            } else {
                T::lit(slope) * x
            }
        }
        Unary::Gelu => kernels::gelu(x),
        Unary::GeluGrad => kernels::gelu_grad(x),
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    fn binary(self, other: Var<'t, T>, name: &str, make: fn(usize, usize) -> Op, f: fn(T, T) -> T) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() == b.shape() {
            let out = a.zip_map(&b, f)?;
            return self.tape.push(out, make(self.id, other.id));
        }
        if b.numel() == 1 {
            let b = other.expand_all(a.shape())?;
            return self.binary(b, name, make, f);
        }
        if a.numel() == 1 {
            let a = self.expand_all(b.shape())?;
            return a.binary(other, name, make, f);
        }
        Err(Error::dim(format!(
            "{name}: shapes {:?} and {:?} are neither equal nor scalar",
            a.shape(),
            b.shape()
        )))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    /// Multiply by a constant.
    pub fn scale(self, c: f64) -> Result<Var<'t, T>> {
        let k = T::lit(c);
        let out = self.value().map(|v| v * k);
        self.tape.push(out, Op::Scale(self.id, c))
    }

    pub fn add_const(self, c: f64) -> Result<Var<'t, T>> {
        let k = T::lit(c);
        let out = self.value().map(|v| v + k);
        self.tape.push(out, Op::AddConst(self.id))
    }

    pub(crate) fn unary(self, u: Unary) -> Result<Var<'t, T>> {
        let x = self.value();
        if checks_enabled() && u == Unary::Log {
            if let Some(bad) = x.data().iter().find(|v| **v <= T::zero()) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
        }
        let out = x.map(|v| unary_value(u, v));
        self.tape.push(out, Op::Unary(self.id, u))
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.unary(Unary::Neg)
    }

    pub fn abs(self) -> Result<Var<'t, T>> {
        self.unary(Unary::Abs)
    }

    pub fn cos(self) -> Result<Var<'t, T>> {
        self.unary(Unary::Cos)
    }

    pub fn sin(self) -> Result<Var<'t, T>> {
        self.unary(Unary::Sin)
    }

    pub fn exp(self) -> Result<Var<'t, T>> {
        self.unary(Unary::Exp)
    }

    pub fn log(self) -> Result<Var<'t, T>> {
        self.unary(Unary::Log)
    }

    pub fn sqrt(self) -> Result<Var<'t, T>> {
        self.unary(Unary::Sqrt)
    }

    pub fn tanh(self) -> Result<Var<'t, T>> {
        self.unary(Unary::Tanh)
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        self.unary(Unary::Sigmoid)
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        self.unary(Unary::Relu)
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t, T>> {
        self.unary(Unary::LeakyRelu(slope))
    }

    /// GELU, tanh approximation with cubic coefficient 0.044715.
    pub fn gelu(self) -> Result<Var<'t, T>> {
        self.unary(Unary::Gelu)
    }

    pub fn square(self) -> Result<Var<'t, T>> {
        self.mul(self)
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        self.tape.add_macs((m * k * n) as u64);
        let out = Tensor::new([m, n], kernels::matmul(a.data(), b.data(), m, k, n))?;
        self.tape.push(out, Op::Matmul(self.id, other.id))
    }

    /// Transpose of a matrix.
    pub fn t(self) -> Result<Var<'t, T>> {
        let a = self.value();
        if a.rank() != 2 {
            return Err(Error::dim(format!("transpose of {:?}", a.shape())));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let out = Tensor::new([c, r], kernels::transpose(a.data(), r, c))?;
        self.tape.push(out, Op::Transpose(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = self.value().reshape(shape)?;
        self.tape.push(out, Op::Reshape(self.id))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let a = self.value();
        let mut seen = vec![false; a.rank()];
        if perm.len() != a.rank() || perm.iter().any(|&p| p >= a.rank() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim(format!("permutation {perm:?} of {:?}", a.shape())));
        }
        let (data, shape) = kernels::permute(a.data(), a.shape(), perm);
        self.tape.push(Tensor::new(shape, data)?, Op::Permute(self.id, perm.to_vec()))
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        let shape = a.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(format!("narrow({axis}, {start}, {len}) of {shape:?}")));
        }
        let (outer, n, inner) = kernels::axis_blocks(shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&a.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        self.tape.push(Tensor::new(out_shape, data)?, Op::Narrow { x: self.id, axis, start })
    }

    /// Zero-pads along `axis` so that this tensor occupies `[start, start+len)` of `full`.
    pub fn embed(self, axis: usize, start: usize, full: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        let shape = a.shape();
        if axis >= shape.len() || start + shape[axis] > full {
            return Err(Error::dim(format!("embed({axis}, {start}, {full}) of {shape:?}")));
        }
        let (outer, len, inner) = kernels::axis_blocks(shape, axis);
        let mut data = vec![T::zero(); outer * full * inner];
        for o in 0..outer {
            let dst = o * full * inner + start * inner;
            data[dst..dst + len * inner].copy_from_slice(&a.data()[o * len * inner..(o + 1) * len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = full;
        self.tape.push(Tensor::new(out_shape, data)?, Op::Embed { x: self.id, axis, start })
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base = vals[0].shape();
        if axis >= base.len() {
            return Err(Error::dim(format!("concat axis {axis} of {base:?}")));
        }
        for (p, v) in parts.iter().zip(&vals) {
            first.same_tape(p)?;
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!("concat of {base:?} and {s:?} along {axis}")));
            }
        }
        let (outer, _, inner) = kernels::axis_blocks(base, axis);
        let total: usize = vals.iter().map(|v| v.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &vals {
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base.to_vec();
        shape[axis] = total;
        first
            .tape
            .push(Tensor::new(shape, data)?, Op::Concat(parts.iter().map(|p| p.id).collect(), axis))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(self) -> Result<Var<'t, T>> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::SumAll(self.id))
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let n = self.numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Broadcast a one-element tensor to `shape`.
    pub fn expand_all(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let a = self.value();
        if a.numel() != 1 {
            return Err(Error::dim(format!("expand_all of non-scalar {:?}", a.shape())));
        }
        let out = Tensor::full(shape, a.data()[0]);
        self.tape.push(out, Op::ExpandAll(self.id))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        let shape = a.shape();
        if axis >= shape.len() {
            return Err(Error::dim(format!("sum_axis({axis}) of {shape:?}")));
        }
        let (outer, n, inner) = kernels::axis_blocks(shape, axis);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &a.data()[(o * n + k) * inner..][..inner];
                for (d, &s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        self.tape.push(Tensor::new(out_shape, data)?, Op::SumAxis(self.id, axis))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let n = self.value().shape().get(axis).copied().unwrap_or(1) as f64;
        self.sum_axis(axis)?.scale(1.0 / n)
    }

    /// Insert a new `axis` of extent `n`, repeating the values.
    pub fn expand_axis(self, axis: usize, n: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        let mut shape = a.shape().to_vec();
        if axis > shape.len() || n == 0 {
            return Err(Error::dim(format!("expand_axis({axis}, {n}) of {shape:?}")));
        }
        shape.insert(axis, n);
        let (outer, _, inner) = kernels::axis_blocks(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            let src = &a.data()[o * inner..(o + 1) * inner];
            for _ in 0..n {
                data.extend_from_slice(src);
            }
        }
        self.tape.push(Tensor::new(shape, data)?, Op::ExpandAxis(self.id, axis))
    }

    /// Sum over every axis except `axis`, leaving a vector of length `shape[axis]`.
    pub fn reduce_to(self, axis: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        let shape = a.shape();
        if axis >= shape.len() {
            return Err(Error::dim(format!("reduce_to({axis}) of {shape:?}")));
        }
        let (outer, n, inner) = kernels::axis_blocks(shape, axis);
        let mut data = vec![T::zero(); n];
        for o in 0..outer {
            for (k, d) in data.iter_mut().enumerate() {
                *d += a.data()[(o * n + k) * inner..][..inner].iter().copied().sum::<T>();
            }
        }
        self.tape.push(Tensor::new([n], data)?, Op::ReduceTo(self.id, axis))
    }

    /// Broadcast a vector over `shape`, aligning it with `axis`.
    pub fn broadcast_along(self, axis: usize, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value();
        if v.rank() != 1 || axis >= shape.len() || shape[axis] != v.numel() {
            return Err(Error::dim(format!(
                "broadcast_along({axis}) of {:?} into {shape:?}",
                v.shape()
            )));
        }
        let (outer, n, inner) = kernels::axis_blocks(shape, axis);
        let mut data = Vec::with_capacity(numel(shape));
        for _ in 0..outer {
            for k in 0..n {
                data.extend(std::iter::repeat(v.data()[k]).take(inner));
            }
        }
        self.tape.push(Tensor::new(shape, data)?, Op::BroadcastAlong(self.id, axis))
    }

    /// `x + b` with `b` broadcast along `axis` (bias add).
    pub fn add_along(self, b: Var<'t, T>, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        self.add(b.broadcast_along(axis, &shape)?)
    }

    /// `x ⊙ g` with `g` broadcast along `axis` (per-channel gain).
    pub fn mul_along(self, g: Var<'t, T>, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        self.mul(g.broadcast_along(axis, &shape)?)
    }

    fn last_axis(&self, name: &str) -> Result<usize> {
        let shape = self.shape();
        match shape.last() {
            Some(&n) if n >= 1 => Ok(n),
            _ => Err(Error::dim(format!("{name} needs a non-empty last axis, got {shape:?}"))),
        }
    }

    /// Softmax over the last axis, stabilized by max-subtraction.
    pub fn softmax(self) -> Result<Var<'t, T>> {
        let n = self.last_axis("softmax")?;
        let a = self.value();
        let out = Tensor::new(a.shape(), kernels::softmax_rows(a.data(), n))?;
        self.tape.push(out, Op::Softmax(self.id))
    }

    pub fn log_softmax(self) -> Result<Var<'t, T>> {
        let n = self.last_axis("log_softmax")?;
        let a = self.value();
        let out = Tensor::new(a.shape(), kernels::log_softmax_rows(a.data(), n))?;
        self.tape.push(out, Op::LogSoftmax(self.id))
    }

    /// Normalizes each slice along the last axis to mean 0, variance 1 (no affine).
    pub fn normalize_last(self, eps: f64) -> Result<Var<'t, T>> {
        let n = self.last_axis("layernorm")?;
        let a = self.value();
        let (y, _) = kernels::layernorm_rows(a.data(), n, T::lit(eps));
        self.tape.push(Tensor::new(a.shape(), y)?, Op::LayerNorm { x: self.id, eps })
    }

    /// Layer normalization over the last axis with gain and bias of length `d`.
    pub fn layernorm(self, gain: Var<'t, T>, bias: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let axis = self.shape().len() - 1;
        self.normalize_last(eps)?.mul_along(gain, axis)?.add_along(bias, axis)
    }

    fn conv_geom(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
        if x.len() != 4 || w.len() != 4 || x[1] != w[1] || stride == 0 {
            return Err(Error::dim(format!(
                "conv2d input {x:?} with weight {w:?} (stride {stride})"
            )));
        }
        let (h, wd, kh, kw) = (x[2], x[3], w[2], w[3]);
        if kh > h + 2 * pad || kw > wd + 2 * pad {
            return Err(Error::dim(format!(
                "kernel {kh}×{kw} larger than padded input {}×{}",
                h + 2 * pad,
                wd + 2 * pad
            )));
        }
        Ok(ConvGeom {
            batch: x[0],
            in_ch: x[1],
            out_ch: w[0],
            h,
            w: wd,
            kh,
            kw,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (wd + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        })
    }

    /// Cross-correlation `x[B×C×H×W] ⋆ w[O×C×kh×kw]`.
    pub fn conv2d(self, w: Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        self.same_tape(&w)?;
        let (xv, wv) = (self.value(), w.value());
        let g = Self::conv_geom(xv.shape(), wv.shape(), stride, pad)?;
        self.tape.add_macs(g.macs());
        let out = Tensor::new([g.batch, g.out_ch, g.oh, g.ow], kernels::conv2d(xv.data(), wv.data(), &g))?;
        self.tape.push(out, Op::Conv2d { x: self.id, w: w.id, stride, pad })
    }

    /// Transposed convolution: the adjoint of `conv2d` with the same `w[O×C×kh×kw]`,
    /// mapping `x[B×O×h×w]` to `[B×C×H×W]` with `H = (h−1)·stride − 2·pad + kh`.
    pub fn conv_transpose2d(self, w: Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        self.conv_transpose2d_padded(w, stride, pad, 0)
    }

    /// As [`Var::conv_transpose2d`] with `output_padding` extra rows/cols.
    pub fn conv_transpose2d_padded(
        self,
        w: Var<'t, T>,
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Result<Var<'t, T>> {
        let (xs, ws) = (self.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 || stride == 0 {
            return Err(Error::dim(format!("conv_transpose2d input {xs:?} with weight {ws:?}")));
        }
        let full = |n: usize, k: usize| ((n - 1) * stride + k + output_padding).checked_sub(2 * pad);
        match (full(xs[2], ws[2]), full(xs[3], ws[3])) {
            (Some(h), Some(wd)) if h > 0 && wd > 0 => self.conv_input_grad(w, stride, pad, [h, wd]),
            _ => Err(Error::dim(format!(
                "conv_transpose2d: padding {pad} consumes the whole output for input {xs:?}"
            ))),
        }
    }

    /// `conv_transpose2d` with an explicit output extent.
    pub(crate) fn conv_input_grad(self, w: Var<'t, T>, stride: usize, pad: usize, hw: [usize; 2]) -> Result<Var<'t, T>> {
        self.same_tape(&w)?;
        let (gv, wv) = (self.value(), w.value());
        let gs = gv.shape();
        let ws = wv.shape();
        if gs.len() != 4 || ws.len() != 4 || gs[1] != ws[0] {
            return Err(Error::dim(format!("conv_transpose2d input {gs:?} with weight {ws:?}")));
        }
        let geom = Self::conv_geom(&[gs[0], ws[1], hw[0], hw[1]], ws, stride, pad)?;
        if geom.oh != gs[2] || geom.ow != gs[3] {
            return Err(Error::dim(format!(
                "conv_transpose2d: output {hw:?} does not map back onto input {gs:?}"
            )));
        }
        self.tape.add_macs(geom.macs());
        let out = Tensor::new(
            [geom.batch, geom.in_ch, geom.h, geom.w],
            kernels::conv2d_input_grad(gv.data(), wv.data(), &geom),
        )?;
        self.tape.push(out, Op::ConvInputGrad { g: self.id, w: w.id, stride, pad })
    }

    /// Weight gradient of `conv2d(x, w)` for upstream `g`; `kernel` is `[kh, kw]`.
    pub(crate) fn conv_weight_grad(x: Var<'t, T>, g: Var<'t, T>, stride: usize, pad: usize, kernel: [usize; 2]) -> Result<Var<'t, T>> {
        x.same_tape(&g)?;
        let (xv, gv) = (x.value(), g.value());
        let (xs, gs) = (xv.shape(), gv.shape());
        let ws = [gs[1], xs[1], kernel[0], kernel[1]];
        let geom = Self::conv_geom(xs, &ws, stride, pad)?;
        let out = Tensor::new(ws, kernels::conv2d_weight_grad(xv.data(), gv.data(), &geom))?;
        x.tape.push(out, Op::ConvWeightGrad { x: x.id, g: g.id, stride, pad })
    }
}
