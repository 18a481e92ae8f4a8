//! Texture classification with a learnable lifting-wavelet branch beside a
//! residual CNN backbone.

pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod param;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use backbone::{Backbone, BackboneConfig, TapInfo, TapPoint};
pub use model::{Model, ModelConfig, ModelError, ModelOutput, Variant};
pub use ops::Mode;
pub use param::{sgd_step, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{Float, Tensor, TensorError};
