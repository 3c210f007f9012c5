//! Dense tensors, a reverse-mode tape, and a finite-difference gradient checker.
//!
//! Everything numeric in the crate is generic over [`Real`], so the same model
//! code runs in `f32` for training and in `f64` for gradient checks.

pub mod flops;
pub mod gradcheck;
pub mod init;
pub mod kernels;
pub mod params;
mod shape;
pub mod tape;
pub mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use init::{Init, ParamSpec};
pub use params::{Bound, ParamStore};
pub use shape::broadcast_shape;
pub use tape::{Padding, Tape, UnaryKind, Var};
pub use tensor::Tensor;

/// Element precision tag, stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

/// Scalar element type of a tensor.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    /// Lossy conversion from `f64`; used for constants.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;
}
