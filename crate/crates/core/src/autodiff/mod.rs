//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, operator_suite, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use params::{Param, ParamGrads, ParamKind, ParamStore, PARAMS_MAGIC, PARAMS_SCHEMA_VERSION};
pub use tape::{Tape, Var};
pub use tensor::{Shape, Tensor};
