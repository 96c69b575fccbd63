//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `DNCK`, format version `u32`, then
//! length-prefixed UTF-8 blocks for the config fingerprint, the model config
//! (JSON) and the vocabulary (JSON), the seed `u64` and epoch `u32`, the
//! tensor count `u32` and for each tensor its rows and cols (`u32`) followed
//! by the raw `f64` payload. A SHA-256 digest of everything before it closes
//! the file.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::TrainError;
use crate::model::{DiffNet, ModelConfig, ModelParams, ParamId};
use crate::tensor::Tensor;
use crate::text::Vocabulary;

const MAGIC: &[u8; 4] = b"DNCK";
const VERSION: u32 = 1;

/// A stored model together with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: DiffNet,
    pub seed: u64,
    pub epoch: u32,
}

pub fn encode_checkpoint(model: &DiffNet, seed: u64, epoch: u32) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let block = |out: &mut Vec<u8>, bytes: &[u8]| {
        out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(bytes);
    };
    block(&mut out, model.config.fingerprint().as_bytes());
    block(
        &mut out,
        serde_json::to_string(&model.config)
            .expect("config serializes")
            .as_bytes(),
    );
    block(
        &mut out,
        serde_json::to_string(&model.vocab)
            .expect("vocab serializes")
            .as_bytes(),
    );
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&epoch.to_le_bytes());
    out.extend_from_slice(&(ParamId::ALL.len() as u32).to_le_bytes());
    for (_, t) in model.params.iter() {
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| TrainError::Format("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn text(&mut self) -> Result<&'a str, TrainError> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?)
            .map_err(|_| TrainError::Format("invalid UTF-8 block".into()))
    }
}

/// Parse checkpoint bytes. When `expected` is given, a configuration that
/// differs from it is rejected with the names of the differing fields.
pub fn decode_checkpoint(
    bytes: &[u8],
    expected: Option<&ModelConfig>,
) -> Result<Checkpoint, TrainError> {
    if bytes.len() < 32 + 8 {
        return Err(TrainError::Format("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(TrainError::Checksum);
    }
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(TrainError::Format("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(TrainError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let fingerprint = r.text()?.to_string();
    let config: ModelConfig = serde_json::from_str(r.text()?)
        .map_err(|e| TrainError::Format(format!("config block: {e}")))?;
    if config.fingerprint() != fingerprint {
        return Err(TrainError::Format(
            "stored fingerprint does not match stored config".into(),
        ));
    }
    if let Some(expected) = expected {
        if expected.fingerprint() != fingerprint {
            return Err(TrainError::ConfigMismatch {
                fields: expected.diff_fields(&config),
            });
        }
    }
    let vocab: Vocabulary = serde_json::from_str(r.text()?)
        .map_err(|e| TrainError::Format(format!("vocabulary block: {e}")))?;
    let seed = r.u64()?;
    let epoch = r.u32()?;
    let count = r.u32()? as usize;
    if count != ParamId::ALL.len() {
        return Err(TrainError::Format(format!(
            "expected {} tensors, found {count}",
            ParamId::ALL.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(
            Tensor::new(vec![rows, cols], data).map_err(|e| TrainError::Format(e.to_string()))?,
        );
    }
    if r.pos != body.len() {
        return Err(TrainError::Format("trailing bytes".into()));
    }
    let model = DiffNet::from_parts(config, vocab, ModelParams::from_vec(tensors))?;
    Ok(Checkpoint { model, seed, epoch })
}

pub fn save_checkpoint(
    path: &Path,
    model: &DiffNet,
    seed: u64,
    epoch: u32,
) -> Result<(), TrainError> {
    fs::write(path, encode_checkpoint(model, seed, epoch)).map_err(|e| TrainError::io(path, e))
}

pub fn load_checkpoint(
    path: &Path,
    expected: Option<&ModelConfig>,
) -> Result<Checkpoint, TrainError> {
    let bytes = fs::read(path).map_err(|e| TrainError::io(path, e))?;
    decode_checkpoint(&bytes, expected)
}
