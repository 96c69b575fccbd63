//! Tokenization, stemming, match features, vocabularies, embeddings,
//! dataset I/O, story perturbations and synthetic data.

mod dataset;
mod embeddings;
mod features;
mod porter;
mod synthetic;
mod tokenize;
mod transform;
mod vocab;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use dataset::{
    load_dataset, read_dataset, save_dataset, write_dataset, Label, StoryInstance, StoryRecord,
};
pub use embeddings::{load_embeddings, read_embeddings, Coverage, EmbeddingMatrix, OOV_INIT_RANGE};
pub use features::{compute_features, FeatureAnnotation, TokenFeatures};
pub use porter::porter_stem;
pub use synthetic::{generate_synthetic, NEGATIVE, POSITIVE};
pub use tokenize::{detokenize, tokenize, PUNCTUATION};
pub use transform::{transform_dataset, transform_instance, TransformMode};
pub use vocab::{Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

#[derive(Debug, Error)]
pub enum TextError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("instance {id}: {reason}")]
    InvalidInstance { id: String, reason: String },
    #[error("embeddings line {line}: {reason}")]
    MalformedEmbedding { line: usize, reason: String },
    #[error("embeddings line {line}: expected {expected} dimensions, found {found}")]
    EmbeddingDimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown transform mode {0:?}")]
    UnknownMode(String),
}

impl TextError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TextError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
