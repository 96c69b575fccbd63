use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, summarize, EvalError, EvalReport, MultiSeedSummary};
use crate::model::{encode_dataset, AoaMode, DiffNet, ExternalFeatures, ModelConfig};
use crate::tensor::Rng;
use crate::text::{
    load_embeddings, transform_dataset, EmbeddingMatrix, StoryInstance, TransformMode, Vocabulary,
};
use crate::train::{train, TrainConfig, TrainOutcome};

/// Named variants of the base configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationId {
    Full,
    L1,
    L2,
    L3,
    L4,
    L5,
    L6,
    L7,
    F1,
    F2,
    F3,
}

impl AblationId {
    pub const ALL: [AblationId; 11] = [
        AblationId::Full,
        AblationId::L1,
        AblationId::L2,
        AblationId::L3,
        AblationId::L4,
        AblationId::L5,
        AblationId::L6,
        AblationId::L7,
        AblationId::F1,
        AblationId::F2,
        AblationId::F3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationId::Full => "full",
            AblationId::L1 => "L1",
            AblationId::L2 => "L2",
            AblationId::L3 => "L3",
            AblationId::L4 => "L4",
            AblationId::L5 => "L5",
            AblationId::L6 => "L6",
            AblationId::L7 => "L7",
            AblationId::F1 => "F1",
            AblationId::F2 => "F2",
            AblationId::F3 => "F3",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            AblationId::Full => "full model",
            AblationId::L1 => "tanh instead of selu",
            AblationId::L2 => "no cosine loss term",
            AblationId::L3 => "original attention pooling",
            AblationId::L4 => "no match module",
            AblationId::L5 => "no discriminative module",
            AblationId::L6 => "dot-product attention",
            AblationId::L7 => "no binary match features",
            AblationId::F1 => "no end-end feature",
            AblationId::F2 => "no end-story feature",
            AblationId::F3 => "no fuzzy end-story feature",
        }
    }

    pub fn is_feature_row(self) -> bool {
        matches!(self, AblationId::F1 | AblationId::F2 | AblationId::F3)
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            AblationId::Full => {}
            AblationId::L1 => c.activation = crate::model::Activation::Tanh,
            AblationId::L2 => c.use_cosine_loss = false,
            AblationId::L3 => c.aoa = AoaMode::Original,
            AblationId::L4 => c.use_match = false,
            AblationId::L5 => c.use_diff = false,
            AblationId::L6 => c.aoa = AoaMode::Dot,
            AblationId::L7 => c.features = crate::model::FeatureSet::NONE,
            AblationId::F1 => c.features.end_end = false,
            AblationId::F2 => c.features.end_story = false,
            AblationId::F3 => c.features.end_story_fuzzy = false,
        }
        c
    }
}

impl fmt::Display for AblationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationId {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationId::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| EvalError::UnknownAblation(s.to_string()))
    }
}

/// Everything a grid point needs besides its model config and seed.
#[derive(Clone, Copy)]
pub struct Experiment<'a> {
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub train_data: &'a [StoryInstance],
    pub eval_data: &'a [StoryInstance],
    pub embeddings: Option<&'a Path>,
    pub external: Option<&'a ExternalFeatures>,
}

/// One trained and evaluated model. `report` scores the best epoch.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub report: EvalReport,
    pub outcome: TrainOutcome,
    pub model: DiffNet,
}

/// Train from `seed` with `config` on the given splits and evaluate the
/// best epoch on the evaluation split.
pub fn run_single(
    exp: &Experiment<'_>,
    config: &ModelConfig,
    train_data: &[StoryInstance],
    eval_data: &[StoryInstance],
    seed: u64,
) -> Result<RunResult, EvalError> {
    if train_data.is_empty() || eval_data.is_empty() {
        return Err(EvalError::Empty("train or evaluate on"));
    }
    let all: Vec<StoryInstance> = train_data.iter().chain(eval_data).cloned().collect();
    let vocab = Vocabulary::build(&all);
    let mut rng = Rng::new(seed);
    let embedding = match exp.embeddings {
        Some(path) => load_embeddings(path, &vocab, config.embed_dim, &mut rng)?,
        None => EmbeddingMatrix::random(&vocab, config.embed_dim, &mut rng),
    };
    let mut model = DiffNet::new(config.clone(), vocab, &embedding, &mut rng)?;
    let train_enc = encode_dataset(train_data, &model.vocab, exp.external)?;
    let eval_enc = encode_dataset(eval_data, &model.vocab, exp.external)?;
    let train_cfg = TrainConfig {
        seed,
        ..exp.train.clone()
    };
    let outcome = train(&mut model, &train_enc, Some(&eval_enc), &train_cfg)?;
    if let Some(best) = outcome.best_params() {
        model.params = best.clone();
    }
    let mut report = evaluate(&model, &eval_enc)?;
    report.seed = Some(seed);
    Ok(RunResult {
        seed,
        report,
        outcome,
        model,
    })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, EvalError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub id: AblationId,
    pub description: String,
    pub fingerprint: String,
    pub accuracies: Vec<f64>,
    pub summary: MultiSeedSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    /// descending by mean accuracy
    pub rows: Vec<AblationRow>,
}

fn percent(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn mean_pm(s: &MultiSeedSummary) -> String {
    format!("{} ± {}", percent(s.mean), percent(s.stdev))
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let cells: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.id.name().to_string(),
                    r.description.clone(),
                    percent(r.summary.best),
                    mean_pm(&r.summary),
                    r.summary.k.to_string(),
                ]
            })
            .collect();
        render(&["id", "model", "best", "mean ± stdev", "runs"], &cells)
    }

    pub fn row(&self, id: AblationId) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.id == id)
    }
}

/// Train and evaluate each ablation under each seed. Points run on up to
/// `jobs` threads; results do not depend on `jobs`.
pub fn run_ablation(
    exp: &Experiment<'_>,
    ids: &[AblationId],
    seeds: &[u64],
    jobs: usize,
) -> Result<AblationTable, EvalError> {
    if ids.is_empty() || seeds.is_empty() {
        return Err(EvalError::Empty("ablate"));
    }
    let points: Vec<(AblationId, u64)> = ids
        .iter()
        .flat_map(|&id| seeds.iter().map(move |&s| (id, s)))
        .collect();
    let results: Vec<Result<f64, EvalError>> = pool(jobs)?.install(|| {
        points
            .par_iter()
            .map(|&(id, seed)| {
                let config = id.apply(exp.model);
                run_single(exp, &config, exp.train_data, exp.eval_data, seed)
                    .map(|r| r.report.accuracy)
            })
            .collect()
    });
    let accuracies: Vec<f64> = results.into_iter().collect::<Result<_, _>>()?;
    let mut rows = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let accs = accuracies[i * seeds.len()..(i + 1) * seeds.len()].to_vec();
            Ok(AblationRow {
                id,
                description: id.description().to_string(),
                fingerprint: id.apply(exp.model).fingerprint(),
                summary: summarize(&accs)?,
                accuracies: accs,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    rows.sort_by(|a, b| b.summary.mean.total_cmp(&a.summary.mean));
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantRow {
    pub mode: TransformMode,
    pub accuracies: Vec<f64>,
    pub summary: MultiSeedSummary,
    /// mean accuracy minus the entire-story mean
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<QuantRow>,
}

impl QuantTable {
    pub fn to_text(&self) -> String {
        let cells: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                let delta = format!("({:+.2})", 100.0 * r.delta);
                [
                    r.mode.label(),
                    percent(r.summary.best),
                    mean_pm(&r.summary),
                    delta,
                    r.summary.k.to_string(),
                ]
            })
            .collect();
        render(&["mode", "best", "mean ± stdev", "delta", "runs"], &cells)
    }

    pub fn row(&self, mode: TransformMode) -> Option<&QuantRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

/// Retrain and evaluate with both splits transformed by each mode. The
/// entire-story baseline is always run and listed first.
pub fn run_quantitative(
    exp: &Experiment<'_>,
    modes: &[TransformMode],
    seeds: &[u64],
    jobs: usize,
) -> Result<QuantTable, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::Empty("analyze"));
    }
    let mut all_modes = vec![TransformMode::Identity];
    all_modes.extend(
        modes
            .iter()
            .copied()
            .filter(|&m| m != TransformMode::Identity),
    );
    let points: Vec<(TransformMode, u64)> = all_modes
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let results: Vec<Result<f64, EvalError>> = pool(jobs)?.install(|| {
        points
            .par_iter()
            .map(|&(mode, seed)| {
                let train = transform_dataset(exp.train_data, mode, seed);
                let eval = transform_dataset(exp.eval_data, mode, seed ^ 0x5eed);
                run_single(exp, exp.model, &train, &eval, seed).map(|r| r.report.accuracy)
            })
            .collect()
    });
    let accuracies: Vec<f64> = results.into_iter().collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(all_modes.len());
    for (i, &mode) in all_modes.iter().enumerate() {
        let accs = accuracies[i * seeds.len()..(i + 1) * seeds.len()].to_vec();
        rows.push(QuantRow {
            mode,
            summary: summarize(&accs)?,
            accuracies: accs,
            delta: 0.0,
        });
    }
    let base = rows[0].summary.mean;
    for row in &mut rows {
        row.delta = row.summary.mean - base;
    }
    Ok(QuantTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

fn render<const N: usize>(header: &[&str; N], cells: &[[String; N]]) -> String {
    let mut widths = header.map(|h| h.chars().count());
    for row in cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        let padded: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        writeln!(out, "{}", padded.join("  ").trim_end()).expect("string write");
    };
    line(&mut out, header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(
        &mut out,
        &rule.iter().map(String::as_str).collect::<Vec<_>>(),
    );
    for row in cells {
        line(
            &mut out,
            &row.iter().map(String::as_str).collect::<Vec<_>>(),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_ids_parse_and_apply() {
        assert_eq!("l7".parse::<AblationId>().unwrap(), AblationId::L7);
        assert!("L8".parse::<AblationId>().is_err());
        let base = ModelConfig::default();
        assert_eq!(
            AblationId::L7.apply(&base).ending_input_dim(),
            base.embed_dim
        );
        assert_eq!(
            AblationId::F2.apply(&base).ending_input_dim(),
            base.embed_dim + 2
        );
        assert_eq!(AblationId::Full.apply(&base), base);
        let fingerprints: std::collections::HashSet<_> = AblationId::ALL
            .iter()
            .map(|id| id.apply(&base).fingerprint())
            .collect();
        assert_eq!(fingerprints.len(), 11);
    }

    #[test]
    fn table_renders_aligned() {
        let text = render(
            &["a", "bb"],
            &[
                ["xxx".to_string(), "y".to_string()],
                ["z".to_string(), "ww".to_string()],
            ],
        );
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "a    bb");
        assert_eq!(lines[1], "---  --");
        assert_eq!(lines[2], "xxx  y");
    }
}
