//! Dense tensors with reverse-mode automatic differentiation, generic over the scalar
//! type. Training code uses the `f32` aliases; gradient checks run in `f64`.

pub mod autograd;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use params::{Bound, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
