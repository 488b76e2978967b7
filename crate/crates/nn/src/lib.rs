//! Network, differentiation engine, training and inference.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
mod gemm;
pub mod graph;
pub mod infer;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{EncoderKind, FlowSource, NetConfig, Preset, TrainConfig};
pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, Var};
pub use model::Network;
pub use params::{ParamId, ParamKind, ParamStore};
pub use tensor::Tensor;
pub use train::Trainer;
