//! The story-ending scoring network and its loss.

mod aoa;
mod config;
mod encode;
mod network;
mod params;

use thiserror::Error;

pub use aoa::{attend, modified_aoa, AttentionTrace, TraceVars};
pub use config::{Activation, AoaMode, FeatureSet, ModelConfig};
pub use encode::{encode_dataset, EncodedInstance, ExternalFeatures};
pub use network::{
    embed_with_features, embedding_penalty, encode_contextual, enrich, highway_head, instance_loss,
    BatchGradient, DiffNet, EndingVars, LossComponents, LossVars, PairVars, Prediction,
};
pub use params::{ModelParams, ParamId, ParamSet, ParamVars};

use crate::tensor::TensorError;
use crate::text::TextError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("instance {id}: {reason}")]
    Input { id: String, reason: String },
}
