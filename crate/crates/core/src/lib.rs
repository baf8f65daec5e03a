//! HSA-Net at desk scale: a molecular graph encoder whose per-layer features
//! are routed through a hard-gated choice of cross-attention or graph-SSM
//! projector, then fused by a sparse top-2 mixture of experts.
//!
//! The pipeline, leaf to root:
//!
//! - [`molgraph`]: SMILES parsing, structure matrices, fragmentation, serialization
//! - [`tensor`]: dense tensors with a reverse-mode tape and checkpointing
//! - [`encoder`]: message-passing layers and the motif encoder
//! - [`projectors`]: cross-attention and graph-SSM projectors to `K` tokens
//! - [`hap`]: the per-layer projector gate
//! - [`saf`]: top-2 expert fusion
//! - [`model`], [`tasks`], [`train`]: the full model, losses and the training loop
//! - [`dataset`], [`diagnostics`], [`config`], [`cli`]: data, analyses and the command line

pub mod cli;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod hap;
pub mod model;
pub mod molgraph;
pub mod projectors;
pub mod saf;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use error::{HsaError, HsaResult};
pub use model::{HsaModel, ModelConfig, Variant};
