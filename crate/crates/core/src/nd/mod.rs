//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod conv;
mod gradcheck;
mod kernels;
mod linalg;
mod lstm;
mod ops;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use lstm::LstmWeights;
pub use ops::{pad_source, PadMode};
pub use params::{Bound, Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{Tensor, WeightInit};
