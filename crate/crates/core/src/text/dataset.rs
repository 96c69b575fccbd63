use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::{detokenize, tokenize};
use super::TextError;

/// Which of the two candidate endings is meant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    First,
    Second,
}

impl Label {
    pub fn from_number(n: u8) -> Option<Label> {
        match n {
            1 => Some(Label::First),
            2 => Some(Label::Second),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Label::First => 1,
            Label::Second => 2,
        }
    }

    /// 0 for the first ending, 1 for the second.
    pub fn index(self) -> usize {
        usize::from(self.number() - 1)
    }

    pub fn other(self) -> Label {
        match self {
            Label::First => Label::Second,
            Label::Second => Label::First,
        }
    }
}

/// A tokenized story with two candidate endings.
///
/// Freshly loaded instances have exactly four sentences; transformed copies
/// may have fewer (or none), so consumers read the actual length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoryInstance {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
    pub ending1: Vec<String>,
    pub ending2: Vec<String>,
    pub label: Label,
}

impl StoryInstance {
    /// The story as one token sequence.
    pub fn story_tokens(&self) -> Vec<String> {
        self.sentences.concat()
    }

    pub fn ending(&self, which: Label) -> &[String] {
        match which {
            Label::First => &self.ending1,
            Label::Second => &self.ending2,
        }
    }

    /// Same story with the endings (and label) exchanged.
    pub fn swapped(&self) -> StoryInstance {
        StoryInstance {
            id: self.id.clone(),
            sentences: self.sentences.clone(),
            ending1: self.ending2.clone(),
            ending2: self.ending1.clone(),
            label: self.label.other(),
        }
    }
}

/// One JSON-lines record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoryRecord {
    pub id: String,
    pub sentences: Vec<String>,
    pub ending1: String,
    pub ending2: String,
    pub label: u8,
}

impl StoryRecord {
    pub fn from_instance(inst: &StoryInstance) -> Self {
        StoryRecord {
            id: inst.id.clone(),
            sentences: inst.sentences.iter().map(|s| detokenize(s)).collect(),
            ending1: detokenize(&inst.ending1),
            ending2: detokenize(&inst.ending2),
            label: inst.label.number(),
        }
    }

    /// Validate and tokenize.
    pub fn into_instance(self) -> Result<StoryInstance, TextError> {
        let invalid = |reason: String| TextError::InvalidInstance {
            id: self.id.clone(),
            reason,
        };
        if self.sentences.len() != 4 {
            return Err(invalid(format!(
                "expected 4 story sentences, found {}",
                self.sentences.len()
            )));
        }
        let label = Label::from_number(self.label)
            .ok_or_else(|| invalid(format!("label must be 1 or 2, found {}", self.label)))?;
        let ending1 = tokenize(&self.ending1);
        let ending2 = tokenize(&self.ending2);
        if ending1.is_empty() || ending2.is_empty() {
            return Err(invalid("empty ending".into()));
        }
        Ok(StoryInstance {
            sentences: self.sentences.iter().map(|s| tokenize(s)).collect(),
            id: self.id,
            ending1,
            ending2,
            label,
        })
    }
}

pub fn load_dataset(path: &Path) -> Result<Vec<StoryInstance>, TextError> {
    let file = File::open(path).map_err(|e| TextError::io(path, e))?;
    read_dataset(BufReader::new(file)).map_err(|e| match e {
        TextError::Io { source, .. } => TextError::io(path, source),
        other => other,
    })
}

/// Parse JSON-lines story records; blank lines are ignored.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<StoryInstance>, TextError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TextError::Io {
            path: "<dataset>".into(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: StoryRecord = serde_json::from_str(&line).map_err(|e| TextError::Json {
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(record.into_instance()?);
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, instances: &[StoryInstance]) -> Result<(), TextError> {
    let file = File::create(path).map_err(|e| TextError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, instances).map_err(|e| TextError::io(path, e))?;
    w.flush().map_err(|e| TextError::io(path, e))
}

pub fn write_dataset<W: Write>(w: &mut W, instances: &[StoryInstance]) -> std::io::Result<()> {
    for inst in instances {
        let line = serde_json::to_string(&StoryRecord::from_instance(inst))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}
