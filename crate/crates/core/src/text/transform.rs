use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{StoryInstance, TextError};
use crate::tensor::Rng;

/// Story perturbations used by the sentence-importance analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TransformMode {
    Identity,
    /// Remove the k-th sentence (1-based).
    DropSentence(u8),
    EndingOnly,
    Reverse,
    RandomOrder,
}

impl TransformMode {
    /// All modes of the analysis in presentation order.
    pub fn analysis_modes() -> Vec<TransformMode> {
        vec![
            TransformMode::Identity,
            TransformMode::DropSentence(1),
            TransformMode::DropSentence(2),
            TransformMode::DropSentence(3),
            TransformMode::DropSentence(4),
            TransformMode::EndingOnly,
            TransformMode::Reverse,
            TransformMode::RandomOrder,
        ]
    }

    pub fn label(self) -> String {
        match self {
            TransformMode::Identity => "entire story".into(),
            TransformMode::DropSentence(k) => format!("without sentence {k}"),
            TransformMode::EndingOnly => "ending only".into(),
            TransformMode::Reverse => "reversed story".into(),
            TransformMode::RandomOrder => "shuffled sentences".into(),
        }
    }
}

impl fmt::Display for TransformMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformMode::Identity => write!(f, "entire"),
            TransformMode::DropSentence(k) => write!(f, "drop-{k}"),
            TransformMode::EndingOnly => write!(f, "ending-only"),
            TransformMode::Reverse => write!(f, "reverse"),
            TransformMode::RandomOrder => write!(f, "random-order"),
        }
    }
}

impl FromStr for TransformMode {
    type Err = TextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "entire" | "identity" => Ok(TransformMode::Identity),
            "ending-only" => Ok(TransformMode::EndingOnly),
            "reverse" => Ok(TransformMode::Reverse),
            "random-order" => Ok(TransformMode::RandomOrder),
            other => match other.strip_prefix("drop-").map(str::parse::<u8>) {
                Some(Ok(k @ 1..=4)) => Ok(TransformMode::DropSentence(k)),
                _ => Err(TextError::UnknownMode(s.to_string())),
            },
        }
    }
}

impl From<TransformMode> for String {
    fn from(m: TransformMode) -> Self {
        m.to_string()
    }
}

impl TryFrom<String> for TransformMode {
    type Error = TextError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Apply `mode` to the story of `inst`; endings and label are untouched.
pub fn transform_instance(
    inst: &StoryInstance,
    mode: TransformMode,
    rng: &mut Rng,
) -> StoryInstance {
    let mut out = inst.clone();
    match mode {
        TransformMode::Identity => {}
        TransformMode::DropSentence(k) => {
            let k = usize::from(k);
            if (1..=out.sentences.len()).contains(&k) {
                out.sentences.remove(k - 1);
            }
        }
        TransformMode::EndingOnly => out.sentences.clear(),
        TransformMode::Reverse => out.sentences.reverse(),
        TransformMode::RandomOrder => rng.shuffle(&mut out.sentences),
    }
    out
}

/// Transform a whole dataset. Random-order draws use one stream per
/// instance derived from `seed`, so the result does not depend on the
/// dataset's size or slicing.
pub fn transform_dataset(
    data: &[StoryInstance],
    mode: TransformMode,
    seed: u64,
) -> Vec<StoryInstance> {
    data.iter()
        .enumerate()
        .map(|(i, inst)| transform_instance(inst, mode, &mut Rng::with_stream(seed, i as u64)))
        .collect()
}
