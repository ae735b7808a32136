//! Dense tensors, a reverse-mode autodiff tape, and the Adam optimizer.

mod adam;
mod data;
pub mod ops;
mod param;
mod scalar;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use data::Tensor;
pub use ops::conv::conv_output_size;
pub use ops::elementwise::Activation;
pub use ops::norm::{BatchStats, NormStats, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM};
pub use ops::shuffle::{pixel_shuffle, pixel_unshuffle};
pub use param::{he_uniform, BatchStatsUpdate, Bound, ParamGrads, ParamKind, ParamSet};
pub use scalar::Scalar;
pub use tape::{BackwardCtx, BackwardFn, Gradients, Tape, Var};
