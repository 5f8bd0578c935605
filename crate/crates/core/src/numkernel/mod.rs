//! Dense tensors, a conv/relu/maxpool/gap/fc layer stack, SGD training and
//! the geometry helpers the mining stages rely on.

pub mod checkpoint;
pub mod geometry;
pub mod model;
pub mod ops;
pub mod resample;
pub mod tensor;
pub mod train;

pub use geometry::{receptive_field, Rect};
pub use model::{ForwardPass, LayerSpec, Model, ModelSpec, ParamSet, Params, CLASS_COUNT};
pub use resample::upsample_bilinear;
pub use tensor::{argmax, cmp_f64, softmax, Tensor};
pub use train::{
    batch_gradients, grad_check, grad_check_with, sgd_update, train, train_step, EpochStats, MomentumState, SgdConfig,
};
