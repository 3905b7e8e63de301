pub mod ablate;
pub mod autograd;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type TensorF32 = Tensor<f32>;
pub type TensorF64 = Tensor<f64>;
pub type ParamStoreF32 = nn::ParamStore<f32>;
pub type ParamStoreF64 = nn::ParamStore<f64>;
pub type BatchF32 = data::Batch<f32>;
pub type BatchF64 = data::Batch<f64>;
pub type TrainerF32 = train::Trainer<f32>;
pub type TrainerF64 = train::Trainer<f64>;
pub type CheckpointF32 = train::Checkpoint<f32>;
pub type CheckpointF64 = train::Checkpoint<f64>;
