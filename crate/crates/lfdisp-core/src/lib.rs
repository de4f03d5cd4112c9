//! Light field disparity estimation toolkit.
//!
//! A self-contained stack for estimating per-pixel disparity from lenslet
//! light fields: a dense tensor engine with reverse-mode autodiff, the
//! multi-scale dilated-convolution disparity network, a light field data
//! layer (SAI stacking, EPIs, PFM maps, augmentation), geometric training
//! losses, a synthetic scene generator with exact ground truth, and a
//! deterministic training/evaluation pipeline.

pub mod error;
pub mod graph;
pub mod imageio;
pub mod kernels;
pub mod lightfield;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod pfm;
pub mod serialize;
pub mod synth;
pub mod tensor;
pub mod train;

mod parallel;

pub use error::{Error, Result};
pub use graph::{BnId, Graph, NodeId, ParamId};
pub use kernels::{batch_norm, BatchNormState, ConvSpec, Mode};
pub use lightfield::{
    augment, extract_epi, load_lightfield, load_scene, stack_sais, AugmentOp, DisparityMap, Epi,
    EpiOrientation, LightField, Sample, Scene, ViewPattern,
};
pub use loss::{combined_loss, loss_grad, loss_mae, loss_normal, LossWeights};
pub use metrics::{badpix, mse_x100, MetricsReport};
pub use model::{build_model, load_model, Model, ModelConfig, PyramidConfig, Variant};
pub use tensor::{DType, Element, Shape, Tensor};
