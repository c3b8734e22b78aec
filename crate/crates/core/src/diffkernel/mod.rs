//! Dense double-precision kernels with reverse-mode gradients.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use params::{Gradients, Param, ParamId, ParamSet};
pub use tape::{log_sigmoid, sigmoid, Tape, Var, LOG_SIGMOID_CLAMP};
pub use tensor::{matmul, Tensor};

/// Variance epsilon used by every layer norm in the model.
pub const LAYER_NORM_EPS: f64 = 1e-8;
