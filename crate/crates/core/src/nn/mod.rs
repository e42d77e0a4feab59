//! Minimal dense-tensor and reverse-mode differentiation engine.
//!
//! Covers exactly what the model families need: embeddings, dense layers,
//! layer norm, dropout, multi-head attention (optionally causal), an LSTM
//! cell, softmax cross-entropy and an Adam optimizer. Double precision
//! throughout; forward kernels are shared between the training graph and
//! the frozen-model scoring paths.

pub mod functional;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, GraphError, Mode, NodeId};
pub use layers::{AttentionConfig, ConfigError, Dense, LayerNormLayer, LstmCell, MultiHeadAttention, TransformerBlock, TransformerStack};
pub use optim::{Adam, Gradients, ParamStore};
pub use tensor::{canonical_sum, Tensor};
