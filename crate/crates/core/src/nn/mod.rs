//! Minimal differentiable-model kernel: dense networks, an LSTM cell,
//! class embeddings, two losses and first-order optimizers. Everything is
//! double precision and deterministic given an explicit random stream.

pub mod embedding;
pub mod init;
pub mod loss;
pub mod lstm;
pub mod mlp;
pub mod optim;

pub use embedding::EmbeddingParams;
pub use loss::{loss_mse, loss_nll, Target};
pub use lstm::{LstmParams, LstmShape};
pub use mlp::{
    backward, per_sample_grad_norm, sample_gradient, standard_layers, Activation, Example,
    GradBundle, LayerSpec, MlpParams,
};
pub use optim::{adam_step, sgd_step, OptimizerConfig, OptimizerKind, OptimizerState};
