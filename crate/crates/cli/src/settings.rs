//! Flat run settings shared by the command line and the config file.
//!
//! Every key of the config file is the long flag name with dashes replaced
//! by underscores. Flags win over file values; boolean switches are ORed.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use diffnet_core::model::{Activation, AoaMode, FeatureSet, ModelConfig};
use diffnet_core::text::TransformMode;
use diffnet_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureName {
    Ee,
    Es,
    EsFuzzy,
}

#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Knobs {
    /// Flat TOML file with default values for any of these flags
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Directory that receives every artifact [default: out]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, help_heading = "Training")]
    pub epochs: Option<usize>,
    #[arg(long, global = true, help_heading = "Training")]
    pub batch_size: Option<usize>,
    #[arg(long, global = true, help_heading = "Training")]
    pub lr: Option<f64>,
    #[arg(long, global = true, help_heading = "Training")]
    pub lr_decay: Option<f64>,
    #[arg(long, global = true, help_heading = "Training")]
    pub clip_norm: Option<f64>,
    #[arg(long, global = true, help_heading = "Training")]
    pub beta1: Option<f64>,
    #[arg(long, global = true, help_heading = "Training")]
    pub beta2: Option<f64>,
    #[arg(long, global = true, help_heading = "Training")]
    pub eps: Option<f64>,

    #[arg(long, global = true, help_heading = "Model")]
    pub embed_dim: Option<usize>,
    #[arg(long, global = true, help_heading = "Model")]
    pub hidden: Option<usize>,
    #[arg(long, global = true, help_heading = "Model")]
    pub enriched: Option<usize>,
    #[arg(long, global = true, help_heading = "Model")]
    pub dropout: Option<f64>,
    /// selu or tanh
    #[arg(long, global = true, help_heading = "Model")]
    pub activation: Option<Activation>,
    /// modified, original or dot
    #[arg(long, global = true, help_heading = "Model")]
    pub aoa: Option<AoaMode>,
    #[arg(long, global = true, help_heading = "Model")]
    pub l2_embedding: Option<f64>,
    #[arg(long, global = true, help_heading = "Model")]
    pub no_match: bool,
    #[arg(long, global = true, help_heading = "Model")]
    pub no_diff: bool,
    #[arg(long, global = true, help_heading = "Model")]
    pub no_cosine_loss: bool,
    /// Drop all three binary match features
    #[arg(long, global = true, help_heading = "Model")]
    pub no_features: bool,
    /// Drop one binary match feature (repeatable)
    #[arg(long, global = true, value_enum, help_heading = "Model")]
    pub no_feature: Vec<FeatureName>,
    /// Keep word vectors fixed during training
    #[arg(long, global = true, help_heading = "Model")]
    pub freeze_embeddings: bool,
    /// Width of the external feature vectors (inferred from the file when unset)
    #[arg(long, global = true, help_heading = "Model")]
    pub external_feature_dim: Option<usize>,

    #[arg(long, global = true, help_heading = "Data")]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true, help_heading = "Data")]
    pub eval_dataset: Option<PathBuf>,
    /// Whitespace-separated word vectors, one word per line
    #[arg(long, global = true, help_heading = "Data")]
    pub embeddings: Option<PathBuf>,
    /// JSON lines of {"id", "ending", "features"}
    #[arg(long, global = true, help_heading = "Data")]
    pub external_features: Option<PathBuf>,
    #[arg(long, global = true, help_heading = "Data")]
    pub checkpoint: Option<PathBuf>,
    /// Number of synthetic training stories
    #[arg(long, global = true, help_heading = "Data")]
    pub n: Option<usize>,
    /// Number of synthetic held-out stories
    #[arg(long, global = true, help_heading = "Data")]
    pub eval_n: Option<usize>,
    /// Probability that the synthetic cue sits in the last sentence
    #[arg(long, global = true, help_heading = "Data")]
    pub cue_prob: Option<f64>,

    /// Story perturbations for analyze (repeatable or comma separated)
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        help_heading = "Experiments"
    )]
    pub mode: Vec<String>,
    /// Ablation ids for ablate, e.g. L1,L4,F2
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        help_heading = "Experiments"
    )]
    pub ablation: Vec<String>,
    /// Ensemble size
    #[arg(long, global = true, help_heading = "Experiments")]
    pub members: Option<usize>,
    /// Explicit seed list for grids
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        help_heading = "Experiments"
    )]
    pub seeds: Vec<u64>,
    /// Number of consecutive seeds starting at --seed when --seeds is absent
    #[arg(long, global = true, help_heading = "Experiments")]
    pub runs: Option<usize>,
    /// Worker threads for grid commands
    #[arg(long, global = true, help_heading = "Experiments")]
    pub jobs: Option<usize>,
}

macro_rules! overlay {
    ($flags:ident, $file:ident; opt: $($o:ident),*; vec: $($v:ident),*; flag: $($b:ident),*) => {
        Knobs {
            config: $flags.config.clone(),
            $($o: $flags.$o.clone().or($file.$o),)*
            $($v: if $flags.$v.is_empty() { $file.$v } else { $flags.$v.clone() },)*
            $($b: $flags.$b || $file.$b,)*
        }
    };
}

impl Knobs {
    /// Fill gaps in `self` from the config file, if one was given.
    pub fn with_file(&self) -> Result<Knobs, Failure> {
        let Some(path) = &self.config else {
            return Ok(self.clone());
        };
        let text = std::fs::read_to_string(path).map_err(|e| crate::at(path, e))?;
        let file: Knobs = toml::from_str(&text)
            .map_err(|e| Failure::Usage(format!("{}: {}", path.display(), e.message())))?;
        let flags = self;
        Ok(overlay!(flags, file;
            opt: out, seed, epochs, batch_size, lr, lr_decay, clip_norm, beta1, beta2, eps, embed_dim, hidden,
                enriched, dropout, activation, aoa, l2_embedding, external_feature_dim, dataset, eval_dataset,
                embeddings, external_features, checkpoint, n, eval_n, cue_prob, members, runs, jobs;
            vec: no_feature, mode, ablation, seeds;
            flag: no_match, no_diff, no_cosine_loss, no_features, freeze_embeddings))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn model_config(&self) -> Result<ModelConfig, Failure> {
        let d = ModelConfig::default();
        let mut features = if self.no_features {
            FeatureSet::NONE
        } else {
            FeatureSet::ALL
        };
        for f in &self.no_feature {
            match f {
                FeatureName::Ee => features.end_end = false,
                FeatureName::Es => features.end_story = false,
                FeatureName::EsFuzzy => features.end_story_fuzzy = false,
            }
        }
        let config = ModelConfig {
            embed_dim: self.embed_dim.unwrap_or(d.embed_dim),
            hidden: self.hidden.unwrap_or(d.hidden),
            enriched: self.enriched.or(self.hidden).unwrap_or(d.enriched),
            dropout: self.dropout.unwrap_or(d.dropout),
            activation: self.activation.unwrap_or(d.activation),
            aoa: self.aoa.unwrap_or(d.aoa),
            use_match: !self.no_match,
            use_diff: !self.no_diff,
            use_cosine_loss: !self.no_cosine_loss,
            features,
            external_feature_dim: self.external_feature_dim.unwrap_or(0),
            l2_embedding: self.l2_embedding.unwrap_or(d.l2_embedding),
            train_embeddings: !self.freeze_embeddings,
        };
        config
            .validate()
            .map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(config)
    }

    pub fn train_config(&self) -> Result<TrainConfig, Failure> {
        let d = TrainConfig::default();
        let config = TrainConfig {
            lr: self.lr.unwrap_or(d.lr),
            lr_decay: self.lr_decay.unwrap_or(d.lr_decay),
            clip_norm: self.clip_norm.unwrap_or(d.clip_norm),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed: self.seed(),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            eps: self.eps.unwrap_or(d.eps),
        };
        config
            .validate()
            .map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(config)
    }

    /// `--seeds` if given, else `--runs` consecutive seeds from `--seed`.
    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            let start = self.seed();
            (0..self.runs.unwrap_or(1) as u64)
                .map(|k| start + k)
                .collect()
        } else {
            self.seeds.clone()
        }
    }

    pub fn modes(&self) -> Result<Vec<TransformMode>, Failure> {
        if self.mode.is_empty() {
            return Ok(TransformMode::analysis_modes());
        }
        self.mode
            .iter()
            .map(|m| {
                m.parse()
                    .map_err(|e: diffnet_core::text::TextError| Failure::Usage(e.to_string()))
            })
            .collect()
    }

    /// Every value the command ran with, for the echoed config file.
    pub fn resolved(&self, model: &ModelConfig, train: &TrainConfig) -> Knobs {
        let f = model.features;
        let mut no_feature = Vec::new();
        if model.features != FeatureSet::NONE {
            for (on, name) in [
                (f.end_end, FeatureName::Ee),
                (f.end_story, FeatureName::Es),
                (f.end_story_fuzzy, FeatureName::EsFuzzy),
            ] {
                if !on {
                    no_feature.push(name);
                }
            }
        }
        Knobs {
            config: None,
            out: Some(self.out_dir()),
            seed: Some(train.seed),
            epochs: Some(train.epochs),
            batch_size: Some(train.batch_size),
            lr: Some(train.lr),
            lr_decay: Some(train.lr_decay),
            clip_norm: Some(train.clip_norm),
            beta1: Some(train.beta1),
            beta2: Some(train.beta2),
            eps: Some(train.eps),
            embed_dim: Some(model.embed_dim),
            hidden: Some(model.hidden),
            enriched: Some(model.enriched),
            dropout: Some(model.dropout),
            activation: Some(model.activation),
            aoa: Some(model.aoa),
            l2_embedding: Some(model.l2_embedding),
            no_match: !model.use_match,
            no_diff: !model.use_diff,
            no_cosine_loss: !model.use_cosine_loss,
            no_features: model.features == FeatureSet::NONE,
            no_feature,
            freeze_embeddings: !model.train_embeddings,
            external_feature_dim: Some(model.external_feature_dim),
            ..self.clone()
        }
    }

    pub fn echo(&self, dir: &Path) -> Result<(), Failure> {
        let text = toml::to_string(self).map_err(|e| Failure::data(format!("config echo: {e}")))?;
        crate::write_file(&dir.join("config.toml"), text.as_bytes())
    }
}
