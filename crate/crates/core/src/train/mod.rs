//! Mini-batch training with Adam, per-epoch decay and gradient clipping.

mod checkpoint;
mod optim;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
};
pub use optim::{adam_step, adam_update, clip_gradients, global_norm, AdamState, TrainConfig};

use crate::eval::evaluate;
use crate::model::{DiffNet, EncodedInstance, ModelError, ModelParams, ParamId};
use crate::tensor::Rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint was written with a different model config (fields: {})", fields.join(", "))]
    ConfigMismatch { fields: Vec<String> },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub cce: f64,
    pub cosine: f64,
    pub l2: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
    pub eval_cosine: Option<f64>,
    /// largest gradient norm after clipping within the epoch
    pub max_grad_norm: f64,
}

/// Per-update record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

/// Accuracy and mean ending cosine on the evaluation set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub accuracy: f64,
    pub mean_cosine: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestModel {
    pub epoch: usize,
    pub snapshot: EvalSnapshot,
    pub params: ModelParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<StepRecord>,
    pub initial_eval: Option<EvalSnapshot>,
    pub best: Option<BestModel>,
}

impl TrainOutcome {
    /// Parameters of the best epoch, or `None` without an evaluation set.
    pub fn best_params(&self) -> Option<&ModelParams> {
        self.best.as_ref().map(|b| &b.params)
    }
}

fn snapshot(model: &DiffNet, data: &[EncodedInstance]) -> Result<EvalSnapshot, TrainError> {
    let report = evaluate(model, data)?;
    Ok(EvalSnapshot {
        accuracy: report.accuracy,
        mean_cosine: report.mean_cosine,
    })
}

pub fn train(
    model: &mut DiffNet,
    data: &[EncodedInstance],
    eval: Option<&[EncodedInstance]>,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with(model, data, eval, config, &mut |_| {})
}

/// Train `model` in place. `on_epoch` sees each log line as it is produced.
///
/// Batches come from a fresh permutation of `data` every epoch; the last
/// batch may be short. The best epoch is the one with the highest
/// evaluation accuracy, the earliest winning ties.
pub fn train_with(
    model: &mut DiffNet,
    data: &[EncodedInstance],
    eval: Option<&[EncodedInstance]>,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let eval = eval.filter(|e| !e.is_empty());
    let frozen: &[ParamId] = if model.config.train_embeddings {
        &[]
    } else {
        &[ParamId::Embedding]
    };
    let mut shuffle_rng = Rng::with_stream(config.seed, 1);
    let mut dropout_rng = Rng::with_stream(config.seed, 2);
    let mut adam = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let initial_eval = eval.map(|e| snapshot(model, e)).transpose()?;
    let mut outcome = TrainOutcome {
        epochs: Vec::with_capacity(config.epochs),
        steps: Vec::new(),
        initial_eval,
        best: None,
    };

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        shuffle_rng.shuffle(&mut order);
        let (mut loss, mut cce, mut cosine, mut l2) = (0.0, 0.0, 0.0, 0.0);
        let mut correct = 0;
        let mut max_norm: f64 = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedInstance> = chunk.iter().map(|&i| &data[i]).collect();
            let mut out = model.batch_gradient(&batch, Some(&mut dropout_rng))?;
            for &id in frozen {
                out.grads[id].data_mut().fill(0.0);
            }
            let (grad_norm, clipped_norm) = clip_gradients(&mut out.grads, config.clip_norm);
            adam_step(&mut model.params, &out.grads, &mut adam, lr, config, frozen)?;

            let n = batch.len() as f64;
            loss += (out.loss.total - out.loss.l2) * n;
            cce += out.loss.cce * n;
            cosine += out.loss.cosine * n;
            l2 += out.loss.l2;
            correct += out.correct;
            batches += 1;
            max_norm = max_norm.max(clipped_norm);
            outcome.steps.push(StepRecord {
                epoch,
                lr,
                loss: out.loss.total,
                grad_norm,
                clipped_norm,
            });
        }
        let total = data.len() as f64;
        let l2 = l2 / batches as f64;
        let eval_snap = eval.map(|e| snapshot(model, e)).transpose()?;
        let line = EpochLog {
            epoch,
            lr,
            loss: loss / total + l2,
            cce: cce / total,
            cosine: cosine / total,
            l2,
            train_acc: correct as f64 / total,
            eval_acc: eval_snap.map(|s| s.accuracy),
            eval_cosine: eval_snap.map(|s| s.mean_cosine),
            max_grad_norm: max_norm,
        };
        if let Some(snap) = eval_snap {
            let improved = outcome
                .best
                .as_ref()
                .is_none_or(|b| snap.accuracy > b.snapshot.accuracy);
            if improved {
                outcome.best = Some(BestModel {
                    epoch,
                    snapshot: snap,
                    params: model.params.clone(),
                });
            }
        }
        on_epoch(&line);
        outcome.epochs.push(line);
    }
    Ok(outcome)
}

/// Write one JSON object per epoch.
pub fn write_log(path: &Path, epochs: &[EpochLog]) -> Result<(), TrainError> {
    let file = File::create(path).map_err(|e| TrainError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in epochs {
        let json = serde_json::to_string(line).expect("log line serializes");
        writeln!(w, "{json}").map_err(|e| TrainError::io(path, e))?;
    }
    w.flush().map_err(|e| TrainError::io(path, e))
}
