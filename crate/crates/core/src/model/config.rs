use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;

/// Nonlinearity of the enrichment layer and highway head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Selu,
    Tanh,
}

/// Which attention mechanism the match and discriminative modules use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AoaMode {
    /// cosine similarity, max-pooled row attention
    Modified,
    /// dot-product similarity, average-pooled row attention
    Original,
    /// dot product followed by max-pooling, no second attention level
    Dot,
}

macro_rules! impl_str_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(ModelError::Config(format!("unknown {} {other:?}", $what))),
                }
            }
        }
    };
}

impl_str_enum!(Activation, "activation", Activation::Selu => "selu", Activation::Tanh => "tanh");
impl_str_enum!(AoaMode, "aoa mode", AoaMode::Modified => "modified", AoaMode::Original => "original", AoaMode::Dot => "dot");

/// Which binary match features are appended to ending embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSet {
    pub end_end: bool,
    pub end_story: bool,
    pub end_story_fuzzy: bool,
}

impl FeatureSet {
    pub const ALL: FeatureSet = FeatureSet {
        end_end: true,
        end_story: true,
        end_story_fuzzy: true,
    };
    pub const NONE: FeatureSet = FeatureSet {
        end_end: false,
        end_story: false,
        end_story_fuzzy: false,
    };

    pub fn mask(&self) -> [bool; 3] {
        [self.end_end, self.end_story, self.end_story_fuzzy]
    }

    pub fn count(&self) -> usize {
        self.mask().iter().filter(|&&on| on).count()
    }
}

impl Default for FeatureSet {
    fn default() -> Self {
        FeatureSet::ALL
    }
}

/// Architecture hyperparameters and ablation switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// word embedding size `e`
    pub embed_dim: usize,
    /// recurrent size per direction `h`
    pub hidden: usize,
    /// enriched representation size `r`
    pub enriched: usize,
    pub dropout: f64,
    pub activation: Activation,
    pub aoa: AoaMode,
    pub use_match: bool,
    pub use_diff: bool,
    pub use_cosine_loss: bool,
    pub features: FeatureSet,
    pub external_feature_dim: usize,
    /// coefficient of the squared L2 penalty on the embedding matrix
    pub l2_embedding: f64,
    pub train_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 300,
            hidden: 200,
            enriched: 200,
            dropout: 0.5,
            activation: Activation::Selu,
            aoa: AoaMode::Modified,
            use_match: true,
            use_diff: true,
            use_cosine_loss: true,
            features: FeatureSet::ALL,
            external_feature_dim: 0,
            l2_embedding: 0.001,
            train_embeddings: true,
        }
    }
}

impl ModelConfig {
    /// Defaults with `e`, `h` and `r = h` replaced.
    pub fn with_sizes(embed_dim: usize, hidden: usize) -> Self {
        ModelConfig {
            embed_dim,
            hidden,
            enriched: hidden,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.hidden == 0 || self.enriched == 0 {
            return Err(ModelError::Config(
                "embed_dim, hidden and enriched must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.l2_embedding < 0.0 {
            return Err(ModelError::Config(
                "l2_embedding must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Width of an ending's input row: embedding plus enabled features.
    pub fn ending_input_dim(&self) -> usize {
        self.embed_dim + self.features.count()
    }

    /// Width of the highway input `[H; M; D; external]`.
    pub fn hybrid_dim(&self) -> usize {
        2 * self.hidden
            + if self.use_match { self.enriched } else { 0 }
            + if self.use_diff { self.enriched } else { 0 }
            + self.external_feature_dim
    }

    /// Stable hash of every field, used to tag checkpoints and reports.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Names of top-level fields whose values differ between two configs.
    pub fn diff_fields(&self, other: &ModelConfig) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        let (Some(a), Some(b)) = (a.as_object(), b.as_object()) else {
            return Vec::new();
        };
        a.iter()
            .filter(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect()
    }
}
