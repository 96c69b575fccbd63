use std::ops::{Index, IndexMut};

use super::{ModelConfig, ModelError};
use crate::tensor::{Rng, Tape, Tensor, Var};
use crate::text::EmbeddingMatrix;

/// Every trainable tensor of the network.
///
/// Affine weights are stored `in x out` and applied as `x W + b` to row
/// vectors. LSTM weights are `(in + h) x 4h` with gate blocks ordered
/// input, forget, candidate, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamId {
    Embedding,
    StoryFwdWeight,
    StoryFwdBias,
    StoryBwdWeight,
    StoryBwdBias,
    EndingFwdWeight,
    EndingFwdBias,
    EndingBwdWeight,
    EndingBwdBias,
    StoryEnrichWeight,
    StoryEnrichBias,
    EndingEnrichWeight,
    EndingEnrichBias,
    GateWeight,
    GateBias,
    TransformWeight,
    TransformBias,
    ScoreWeight,
    ScoreBias,
}

impl ParamId {
    pub const ALL: [ParamId; 19] = [
        ParamId::Embedding,
        ParamId::StoryFwdWeight,
        ParamId::StoryFwdBias,
        ParamId::StoryBwdWeight,
        ParamId::StoryBwdBias,
        ParamId::EndingFwdWeight,
        ParamId::EndingFwdBias,
        ParamId::EndingBwdWeight,
        ParamId::EndingBwdBias,
        ParamId::StoryEnrichWeight,
        ParamId::StoryEnrichBias,
        ParamId::EndingEnrichWeight,
        ParamId::EndingEnrichBias,
        ParamId::GateWeight,
        ParamId::GateBias,
        ParamId::TransformWeight,
        ParamId::TransformBias,
        ParamId::ScoreWeight,
        ParamId::ScoreBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Embedding => "embedding",
            ParamId::StoryFwdWeight => "story_lstm_fwd.weight",
            ParamId::StoryFwdBias => "story_lstm_fwd.bias",
            ParamId::StoryBwdWeight => "story_lstm_bwd.weight",
            ParamId::StoryBwdBias => "story_lstm_bwd.bias",
            ParamId::EndingFwdWeight => "ending_lstm_fwd.weight",
            ParamId::EndingFwdBias => "ending_lstm_fwd.bias",
            ParamId::EndingBwdWeight => "ending_lstm_bwd.weight",
            ParamId::EndingBwdBias => "ending_lstm_bwd.bias",
            ParamId::StoryEnrichWeight => "story_enrich.weight",
            ParamId::StoryEnrichBias => "story_enrich.bias",
            ParamId::EndingEnrichWeight => "ending_enrich.weight",
            ParamId::EndingEnrichBias => "ending_enrich.bias",
            ParamId::GateWeight => "highway_gate.weight",
            ParamId::GateBias => "highway_gate.bias",
            ParamId::TransformWeight => "highway_transform.weight",
            ParamId::TransformBias => "highway_transform.bias",
            ParamId::ScoreWeight => "score.weight",
            ParamId::ScoreBias => "score.bias",
        }
    }

    fn position(self) -> usize {
        self as usize
    }

    /// Expected shape under `config` with a vocabulary of `vocab` rows.
    pub fn shape(self, config: &ModelConfig, vocab: usize) -> [usize; 2] {
        let (e, h, r, d) = (
            config.embed_dim,
            config.hidden,
            config.enriched,
            config.hybrid_dim(),
        );
        match self {
            ParamId::Embedding => [vocab, e],
            ParamId::StoryFwdWeight | ParamId::StoryBwdWeight => [e + h, 4 * h],
            ParamId::EndingFwdWeight | ParamId::EndingBwdWeight => {
                [config.ending_input_dim() + h, 4 * h]
            }
            ParamId::StoryFwdBias
            | ParamId::StoryBwdBias
            | ParamId::EndingFwdBias
            | ParamId::EndingBwdBias => [1, 4 * h],
            ParamId::StoryEnrichWeight | ParamId::EndingEnrichWeight => [2 * h, r],
            ParamId::StoryEnrichBias | ParamId::EndingEnrichBias => [1, r],
            ParamId::GateWeight | ParamId::TransformWeight => [d, d],
            ParamId::GateBias | ParamId::TransformBias => [1, d],
            ParamId::ScoreWeight => [d, 1],
            ParamId::ScoreBias => [1, 1],
        }
    }

    fn is_lstm_bias(self) -> bool {
        matches!(
            self,
            ParamId::StoryFwdBias
                | ParamId::StoryBwdBias
                | ParamId::EndingFwdBias
                | ParamId::EndingBwdBias
        )
    }
}

/// One value per [`ParamId`], in [`ParamId::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    items: Vec<T>,
}

impl<T> ParamSet<T> {
    pub fn from_fn(mut f: impl FnMut(ParamId) -> T) -> Self {
        ParamSet {
            items: ParamId::ALL.iter().map(|&id| f(id)).collect(),
        }
    }

    /// Panics unless `items` has one entry per parameter.
    pub fn from_vec(items: Vec<T>) -> Self {
        assert_eq!(items.len(), ParamId::ALL.len(), "one entry per parameter");
        ParamSet { items }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &T)> {
        ParamId::ALL.iter().copied().zip(&self.items)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut T)> {
        ParamId::ALL.iter().copied().zip(self.items.iter_mut())
    }

    pub fn map<U>(&self, mut f: impl FnMut(ParamId, &T) -> U) -> ParamSet<U> {
        ParamSet {
            items: self.iter().map(|(id, t)| f(id, t)).collect(),
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.items
    }

    pub fn into_vec(self) -> Vec<T> {
        self.items
    }
}

impl<T> Index<ParamId> for ParamSet<T> {
    type Output = T;

    fn index(&self, id: ParamId) -> &T {
        &self.items[id.position()]
    }
}

impl<T> IndexMut<ParamId> for ParamSet<T> {
    fn index_mut(&mut self, id: ParamId) -> &mut T {
        &mut self.items[id.position()]
    }
}

pub type ModelParams = ParamSet<Tensor>;
/// Parameter leaves registered on a tape.
pub type ParamVars = ParamSet<Var>;

impl ParamSet<Tensor> {
    /// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1, and the
    /// supplied embedding matrix.
    pub fn init(
        config: &ModelConfig,
        embedding: &EmbeddingMatrix,
        rng: &mut Rng,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if embedding.dim() != config.embed_dim {
            return Err(ModelError::Config(format!(
                "embedding width {} does not match embed_dim {}",
                embedding.dim(),
                config.embed_dim
            )));
        }
        let vocab = embedding.values.rows();
        Ok(ParamSet::from_fn(|id| {
            let [rows, cols] = id.shape(config, vocab);
            if id == ParamId::Embedding {
                return embedding.values.clone();
            }
            let mut t = Tensor::zeros(&[rows, cols]);
            if rows > 1 {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                for x in t.data_mut() {
                    *x = rng.uniform(-limit, limit);
                }
            } else if id.is_lstm_bias() {
                let h = cols / 4;
                t.data_mut()[h..2 * h].fill(1.0);
            }
            t
        }))
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Tensor::zeros_like(t))
    }

    /// Register every tensor as a borrowed leaf on `tape`.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>) -> ParamVars {
        ParamSet {
            items: self.items.iter().map(|t| tape.param(t)).collect(),
        }
    }

    /// Check every tensor against the shape implied by `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let vocab = self[ParamId::Embedding].rows();
        for (id, t) in self.iter() {
            let expected = id.shape(config, vocab);
            if t.shape() != expected {
                return Err(ModelError::Config(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    id.name(),
                    t.shape(),
                    expected
                )));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.items.iter().map(Tensor::len).sum()
    }

    /// Global L2 norm over all tensors.
    pub fn global_norm(&self) -> f64 {
        self.items
            .iter()
            .map(Tensor::sum_squares)
            .sum::<f64>()
            .sqrt()
    }
}
