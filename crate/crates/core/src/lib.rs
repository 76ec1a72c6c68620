//! Two-stage landslide mapping from SAR amplitude chips: a Siamese chip
//! classifier whose frozen embeddings feed a pixel segmentation network.
//!
//! The numerical core is generic over [`Scalar`]; the aliases below fix
//! it to `f32`, the precision used for training.

pub mod chipstore;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod metrics;
pub mod nets;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type TensorF32 = Tensor<f32>;
pub type Stage1ParamsF32 = nets::Stage1Params<f32>;
pub type Stage2ParamsF32 = nets::Stage2Params<f32>;
pub type CheckpointF32 = trainer::Checkpoint<f32>;
