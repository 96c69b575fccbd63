use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::ModelError;
use crate::text::{compute_features, Label, StoryInstance, TextError, Vocabulary};

/// An instance mapped to vocabulary ids with its match features attached.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedInstance {
    pub id: String,
    pub story: Vec<usize>,
    pub endings: [Vec<usize>; 2],
    pub features: [Vec<[f64; 3]>; 2],
    pub external: Option<[Vec<f64>; 2]>,
    pub label: Label,
}

impl EncodedInstance {
    pub fn encode(
        inst: &StoryInstance,
        vocab: &Vocabulary,
        external: Option<&ExternalFeatures>,
    ) -> Result<Self, ModelError> {
        if inst.ending1.is_empty() || inst.ending2.is_empty() {
            return Err(ModelError::Input {
                id: inst.id.clone(),
                reason: "empty ending".into(),
            });
        }
        let story = inst.story_tokens();
        let feats = |a: &[String], b: &[String]| -> Vec<[f64; 3]> {
            compute_features(a, b, &story)
                .0
                .iter()
                .map(|f| f.as_array())
                .collect()
        };
        let external = match external {
            Some(ext) => Some([
                ext.lookup(&inst.id, Label::First)?,
                ext.lookup(&inst.id, Label::Second)?,
            ]),
            None => None,
        };
        Ok(EncodedInstance {
            id: inst.id.clone(),
            story: vocab.ids(&story),
            endings: [vocab.ids(&inst.ending1), vocab.ids(&inst.ending2)],
            features: [
                feats(&inst.ending1, &inst.ending2),
                feats(&inst.ending2, &inst.ending1),
            ],
            external,
            label: inst.label,
        })
    }

    /// Same instance with the endings (and everything attached to them) exchanged.
    pub fn swapped(&self) -> Self {
        let [e1, e2] = self.endings.clone();
        let [f1, f2] = self.features.clone();
        EncodedInstance {
            id: self.id.clone(),
            story: self.story.clone(),
            endings: [e2, e1],
            features: [f2, f1],
            external: self.external.clone().map(|[a, b]| [b, a]),
            label: self.label.other(),
        }
    }
}

pub fn encode_dataset(
    data: &[StoryInstance],
    vocab: &Vocabulary,
    external: Option<&ExternalFeatures>,
) -> Result<Vec<EncodedInstance>, ModelError> {
    data.iter()
        .map(|inst| EncodedInstance::encode(inst, vocab, external))
        .collect()
}

#[derive(Deserialize)]
struct ExternalRecord {
    id: String,
    ending: u8,
    features: Vec<f64>,
}

/// Fixed-width per-ending vectors keyed by instance id and ending number.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExternalFeatures {
    dim: usize,
    map: HashMap<(String, u8), Vec<f64>>,
}

impl ExternalFeatures {
    pub fn new(dim: usize) -> Self {
        ExternalFeatures {
            dim,
            map: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, id: &str, ending: Label, values: Vec<f64>) -> Result<(), ModelError> {
        if values.len() != self.dim {
            return Err(ModelError::Input {
                id: id.to_string(),
                reason: format!(
                    "external feature width {} differs from {}",
                    values.len(),
                    self.dim
                ),
            });
        }
        self.map.insert((id.to_string(), ending.number()), values);
        Ok(())
    }

    pub fn lookup(&self, id: &str, ending: Label) -> Result<Vec<f64>, ModelError> {
        self.map
            .get(&(id.to_string(), ending.number()))
            .cloned()
            .ok_or_else(|| ModelError::Input {
                id: id.to_string(),
                reason: format!("no external features for ending {}", ending.number()),
            })
    }

    pub fn load(path: &Path, dim: usize) -> Result<Self, ModelError> {
        let file = File::open(path).map_err(|e| TextError::io(path, e))?;
        Self::read(BufReader::new(file), dim)
    }

    /// Parse `{"id": .., "ending": 1|2, "features": [..]}` lines.
    pub fn read<R: BufRead>(reader: R, dim: usize) -> Result<Self, ModelError> {
        let mut out = ExternalFeatures::new(dim);
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| TextError::Io {
                path: "<external features>".into(),
                source: e,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ExternalRecord = serde_json::from_str(&line).map_err(|e| TextError::Json {
                line: n + 1,
                message: e.to_string(),
            })?;
            let ending = Label::from_number(rec.ending).ok_or_else(|| ModelError::Input {
                id: rec.id.clone(),
                reason: format!("ending must be 1 or 2, got {}", rec.ending),
            })?;
            out.insert(&rec.id, ending, rec.features)?;
        }
        Ok(out)
    }
}
