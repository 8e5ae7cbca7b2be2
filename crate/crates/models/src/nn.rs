//! Small layers shared by the models: affine maps, layer norm, dropout.

use psl_core::{Bound, ParamId, ParamStore, Result, Scalar, Tensor, Var};
use rand::Rng;

/// Epsilon of every normalization layer.
pub const NORM_EPS: f64 = 1e-5;

/// Uniform in `±1/√fan_in`.
pub fn init_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// `y = x·Wᵀ + b` on the rows of `x`, with `W` stored as `[d_out × d_in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init_uniform(&[d_out, d_in], d_in, rng))?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), init_uniform(&[d_out], d_in, rng))?)
        } else {
            None
        };
        Ok(Self { weight, bias, d_in, d_out })
    }

    pub fn num_params(d_in: usize, d_out: usize, bias: bool) -> usize {
        d_in * d_out + if bias { d_out } else { 0 }
    }

    /// `x` is `[rows × d_in]`; a rank-1 input is treated as a single row and stays rank-1.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let single = x.shape().len() == 1;
        let rows = if single { x.reshape(&[1, x.numel()])? } else { x };
        let y = affine(rows, p.get(self.weight), self.bias.map(|b| p.get(b)))?;
        if single {
            y.reshape(&[self.d_out])
        } else {
            Ok(y)
        }
    }
}

/// `x·wᵀ (+ b)` for `x: [rows × d_in]`, `w: [d_out × d_in]`.
pub fn affine<'t, T: Scalar>(x: Var<'t, T>, w: Var<'t, T>, b: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
    let y = x.matmul(w.t()?)?;
    match b {
        Some(b) => y.add_along(b, 1),
        None => Ok(y),
    }
}

/// Layer normalization over the last axis with learned gain (init 1) and bias (init 0).
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[dim]))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim]))?,
            dim,
        })
    }

    pub fn num_params(dim: usize) -> usize {
        2 * dim
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layernorm(p.get(self.gain), p.get(self.bias), NORM_EPS)
    }
}

/// Inverted dropout: zeroes each element with probability `rate` and rescales the rest.
pub fn dropout<'t, T: Scalar, R: Rng + ?Sized>(x: Var<'t, T>, rate: f64, rng: &mut R) -> Result<Var<'t, T>> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Tensor::from_fn(&x.shape(), |_| if rng.gen_bool(rate) { T::zero() } else { T::lit(keep) });
    x.mul(x.tape().constant(mask))
}
