//! Dense `f64` tensors, a reverse-mode tape, small MLPs and Adam.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod nn;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, finite_diff_check_prefixes, GRADCHECK_FLOOR};
pub use nn::{forward_mlp, Activation, LayerSpec, Mlp};
pub use params::ParamSet;
pub use tape::{Bind, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::cosine;
