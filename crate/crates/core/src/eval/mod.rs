//! Accuracy reports, multi-seed statistics, ensembling and experiment grids.

mod grid;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{
    run_ablation, run_quantitative, run_single, AblationId, AblationRow, AblationTable, Experiment,
    QuantRow, QuantTable, RunResult,
};

use crate::model::{DiffNet, EncodedInstance, ModelError};
use crate::text::{Label, TextError};
use crate::train::TrainError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("nothing to {0}")]
    Empty(&'static str),
    #[error("reports disagree on instance {0}")]
    Mismatch(String),
    #[error("unknown ablation id {0:?}")]
    UnknownAblation(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// One scored instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub p1: f64,
    pub p2: f64,
    pub predicted: u8,
    pub gold: u8,
    /// `p1 == p2`; the prediction then defaults to ending 1
    pub tie: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n: usize,
    pub correct: usize,
    pub ties: usize,
    /// mean cosine similarity between the two endings' hybrid outputs
    pub mean_cosine: f64,
    pub fingerprint: String,
    pub seed: Option<u64>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    fn from_rows(
        rows: Vec<EvalRow>,
        mean_cosine: f64,
        fingerprint: String,
        seed: Option<u64>,
    ) -> Self {
        let n = rows.len();
        let correct = rows.iter().filter(|r| r.predicted == r.gold).count();
        let ties = rows.iter().filter(|r| r.tie).count();
        EvalReport {
            accuracy: correct as f64 / n as f64,
            n,
            correct,
            ties,
            mean_cosine,
            fingerprint,
            seed,
            rows,
        }
    }

    /// Per-instance rows as CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,p1,p2,predicted,gold,tie\n");
        for r in &self.rows {
            let id = if r.id.contains([',', '"', '\n']) {
                format!("\"{}\"", r.id.replace('"', "\"\""))
            } else {
                r.id.clone()
            };
            writeln!(
                out,
                "{id},{},{},{},{},{}",
                r.p1, r.p2, r.predicted, r.gold, r.tie
            )
            .expect("string write");
        }
        out
    }

    pub fn save(&self, json: &Path, csv: Option<&Path>) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(json, text).map_err(|e| io(json, e))?;
        if let Some(csv) = csv {
            std::fs::write(csv, self.to_csv()).map_err(|e| io(csv, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            EvalError::Text(TextError::Json {
                line: e.line(),
                message: e.to_string(),
            })
        })
    }
}

pub(crate) fn io(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Score every instance with dropout off.
pub fn evaluate(model: &DiffNet, data: &[EncodedInstance]) -> Result<EvalReport, ModelError> {
    if data.is_empty() {
        return Err(ModelError::Config("evaluation set is empty".into()));
    }
    let mut rows = Vec::with_capacity(data.len());
    let mut cosine = 0.0;
    for inst in data {
        let pred = model.predict(inst)?;
        cosine += pred.cosine;
        rows.push(EvalRow {
            id: inst.id.clone(),
            p1: pred.probs[0],
            p2: pred.probs[1],
            predicted: pred.label().number(),
            gold: inst.label.number(),
            tie: pred.is_tie(),
        });
    }
    Ok(EvalReport::from_rows(
        rows,
        cosine / data.len() as f64,
        model.config.fingerprint(),
        None,
    ))
}

/// Best, mean and sample standard deviation of per-run accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedSummary {
    pub best: f64,
    pub mean: f64,
    pub stdev: f64,
    pub k: usize,
    /// set when `k == 1`, where the deviation is reported as 0
    pub single_run: bool,
}

pub fn summarize(values: &[f64]) -> Result<MultiSeedSummary, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty("summarize"));
    }
    let k = values.len();
    let mean = values.iter().sum::<f64>() / k as f64;
    let stdev = if k > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(MultiSeedSummary {
        best: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        stdev,
        k,
        single_run: k == 1,
    })
}

/// Combine runs over the same instances by majority vote. Split votes go
/// to the ending with the larger summed probability, then to ending 1.
pub fn majority_vote(reports: &[EvalReport]) -> Result<EvalReport, EvalError> {
    let first = reports.first().ok_or(EvalError::Empty("vote over"))?;
    let k = reports.len() as f64;
    let mut lookup: Vec<HashMap<&str, &EvalRow>> = Vec::with_capacity(reports.len());
    for r in reports {
        if r.n != first.n {
            return Err(EvalError::Mismatch(format!(
                "report sizes {} and {}",
                first.n, r.n
            )));
        }
        lookup.push(r.rows.iter().map(|row| (row.id.as_str(), row)).collect());
    }
    let mut rows = Vec::with_capacity(first.n);
    for base in &first.rows {
        let mut members = Vec::with_capacity(reports.len());
        for table in &lookup {
            let row = table
                .get(base.id.as_str())
                .ok_or_else(|| EvalError::Mismatch(base.id.clone()))?;
            if row.gold != base.gold {
                return Err(EvalError::Mismatch(base.id.clone()));
            }
            members.push(*row);
        }
        let votes1 = members.iter().filter(|r| r.predicted == 1).count();
        let votes2 = members.len() - votes1;
        let mass1: f64 = members.iter().map(|r| r.p1).sum();
        let mass2: f64 = members.iter().map(|r| r.p2).sum();
        let predicted = match votes1.cmp(&votes2) {
            std::cmp::Ordering::Greater => Label::First,
            std::cmp::Ordering::Less => Label::Second,
            std::cmp::Ordering::Equal if mass2 > mass1 => Label::Second,
            std::cmp::Ordering::Equal => Label::First,
        };
        let (p1, p2) = (mass1 / k, mass2 / k);
        rows.push(EvalRow {
            id: base.id.clone(),
            p1,
            p2,
            predicted: predicted.number(),
            gold: base.gold,
            tie: p1 == p2,
        });
    }
    let fingerprint = if reports.iter().all(|r| r.fingerprint == first.fingerprint) {
        first.fingerprint.clone()
    } else {
        "ensemble".to_string()
    };
    let mean_cosine = reports.iter().map(|r| r.mean_cosine).sum::<f64>() / k;
    let seed = if reports.len() == 1 { first.seed } else { None };
    Ok(EvalReport::from_rows(rows, mean_cosine, fingerprint, seed))
}
