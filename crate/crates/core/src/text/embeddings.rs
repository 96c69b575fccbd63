use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::vocab::{Vocabulary, PAD};
use super::TextError;
use crate::tensor::{Rng, Tensor};

/// Half-width of the uniform range for rows not found in a pretrained file.
pub const OOV_INIT_RANGE: f64 = 0.05;

/// How many vocabulary rows came from the pretrained file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Coverage {
    pub found: usize,
    pub missing: usize,
}

/// `|V| x e` word vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: Tensor,
    pub trainable: bool,
    pub coverage: Coverage,
}

impl EmbeddingMatrix {
    /// All non-padding rows uniform in `(-0.05, 0.05)`; padding row zero.
    pub fn random(vocab: &Vocabulary, dim: usize, rng: &mut Rng) -> Self {
        let mut values = Tensor::zeros(&[vocab.len(), dim]);
        fill_random_rows(&mut values, dim, &vec![false; vocab.len()], rng);
        EmbeddingMatrix {
            values,
            trainable: true,
            coverage: Coverage {
                found: 0,
                missing: vocab.len() - 2,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

fn fill_random_rows(values: &mut Tensor, dim: usize, found: &[bool], rng: &mut Rng) {
    let data = values.data_mut();
    for (id, &hit) in found.iter().enumerate() {
        if id == PAD || hit {
            continue;
        }
        for x in &mut data[id * dim..(id + 1) * dim] {
            *x = rng.uniform(-OOV_INIT_RANGE, OOV_INIT_RANGE);
        }
    }
}

/// Load GloVe-format vectors (`token v1 ... ve` per line) for `vocab`.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut Rng,
) -> Result<EmbeddingMatrix, TextError> {
    let file = File::open(path).map_err(|e| TextError::io(path, e))?;
    read_embeddings(BufReader::new(file), vocab, dim, rng)
}

/// [`load_embeddings`] over any buffered reader. Blank lines are skipped;
/// any other line must hold a token followed by exactly `dim` numbers.
pub fn read_embeddings<R: BufRead>(
    reader: R,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut Rng,
) -> Result<EmbeddingMatrix, TextError> {
    let mut values = Tensor::zeros(&[vocab.len(), dim]);
    let mut found = vec![false; vocab.len()];
    let mut file_dim: Option<usize> = None;
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| TextError::Io {
            path: "<embeddings>".into(),
            source: e,
        })?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let numbers: Vec<&str> = fields.collect();
        if numbers.is_empty() {
            return Err(TextError::MalformedEmbedding {
                line: line_no,
                reason: "token without a vector".into(),
            });
        }
        match file_dim {
            None => {
                if numbers.len() != dim {
                    return Err(TextError::EmbeddingDimension {
                        line: line_no,
                        expected: dim,
                        found: numbers.len(),
                    });
                }
                file_dim = Some(numbers.len());
            }
            Some(d) if d != numbers.len() => {
                return Err(TextError::MalformedEmbedding {
                    line: line_no,
                    reason: format!("expected {} fields, found {}", d + 1, numbers.len() + 1),
                });
            }
            Some(_) => {}
        }
        let id = vocab.id(token);
        if !vocab.contains(token) || id == PAD {
            continue;
        }
        let row = &mut values.data_mut()[id * dim..(id + 1) * dim];
        for (slot, field) in row.iter_mut().zip(&numbers) {
            *slot = field.parse().map_err(|_| TextError::MalformedEmbedding {
                line: line_no,
                reason: format!("not a number: {field:?}"),
            })?;
        }
        found[id] = true;
    }
    fill_random_rows(&mut values, dim, &found, rng);
    let hits = found.iter().filter(|&&f| f).count();
    Ok(EmbeddingMatrix {
        values,
        trainable: true,
        coverage: Coverage {
            found: hits,
            missing: vocab.len() - 2 - hits.min(vocab.len() - 2),
        },
    })
}
