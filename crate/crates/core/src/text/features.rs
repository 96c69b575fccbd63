use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::porter::porter_stem;

/// The three binary match indicators of one ending token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenFeatures {
    /// token occurs in the other ending
    pub end_end: bool,
    /// token occurs in the story
    pub end_story: bool,
    /// token's stem matches the stem of some story token
    pub end_story_fuzzy: bool,
}

impl TokenFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [
            f64::from(u8::from(self.end_end)),
            f64::from(u8::from(self.end_story)),
            f64::from(u8::from(self.end_story_fuzzy)),
        ]
    }
}

/// Per-token features of one ending, aligned with its tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureAnnotation(pub Vec<TokenFeatures>);

impl FeatureAnnotation {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn end_end(&self) -> Vec<u8> {
        self.0.iter().map(|f| u8::from(f.end_end)).collect()
    }

    pub fn end_story(&self) -> Vec<u8> {
        self.0.iter().map(|f| u8::from(f.end_story)).collect()
    }

    pub fn end_story_fuzzy(&self) -> Vec<u8> {
        self.0.iter().map(|f| u8::from(f.end_story_fuzzy)).collect()
    }
}

/// Membership features for `ending`. Tests are set-based: multiplicity is
/// ignored and punctuation tokens take part like any other token.
pub fn compute_features(
    ending: &[String],
    other_ending: &[String],
    story: &[String],
) -> FeatureAnnotation {
    let other: HashSet<&str> = other_ending.iter().map(String::as_str).collect();
    let story_set: HashSet<&str> = story.iter().map(String::as_str).collect();
    let story_stems: HashSet<String> = story.iter().map(|w| porter_stem(w)).collect();
    FeatureAnnotation(
        ending
            .iter()
            .map(|t| TokenFeatures {
                end_end: other.contains(t.as_str()),
                end_story: story_set.contains(t.as_str()),
                end_story_fuzzy: story_stems.contains(&porter_stem(t)),
            })
            .collect(),
    )
}
