//! Tensor train / tensor ring factorized linear maps, recurrent cells built
//! on them, and the experiment harness validating recovery quality and
//! contraction complexity.

pub mod cell;
pub mod format;
pub mod io;
pub mod layer;
pub mod sweep;
pub mod synth;
pub mod tensor;
pub mod train;

pub use format::{
    compression_ratio, plan_param_count, random_tr, tr_reconstruct_grad, FormatError, TrFormat,
    TtFormat,
};
pub use layer::{LayerError, LayerGradients, TrLayer};
pub use tensor::{flat_index, DenseTensor, FlopReport, TensorError};
