//! Template-generated stories with a planted sentiment cue.
//!
//! Each story has three neutral filler sentences and one cue sentence that
//! carries a sentiment word. The real ending repeats that word; the fake
//! ending carries a word of the opposite polarity. Where the cue
//! sits is controlled by `cue_position_prob`, which lets experiments plant
//! a last-sentence bias of known strength.

use super::tokenize::tokenize;
use super::{Label, StoryInstance};
use crate::tensor::Rng;

const NAMES: &[&str] = &[
    "nora", "dave", "priya", "tom", "maria", "kevin", "lucy", "sam", "anna", "ben", "olivia",
    "mark",
];
const PLACES: &[&str] = &[
    "park", "store", "school", "office", "beach", "library", "market", "gym",
];
const THINGS: &[&str] = &[
    "game", "book", "movie", "test", "trip", "party", "concert", "meal",
];

const FILLERS: &[&str] = &[
    "{name} went to the {place} on saturday.",
    "{name} met a friend at the {place}.",
    "There was a {thing} planned for the afternoon.",
    "{name} had been waiting for the {thing} all week.",
    "The {place} was busy that day.",
    "{name} called {other} to talk about the {thing}.",
    "They drove to the {place} together.",
    "{name} packed a bag and left early.",
];

const CUES: &[&str] = &[
    "In the end the {thing} made {name} feel {word}.",
    "{name} felt {word} about the {thing}.",
    "After the {thing} {name} was {word}.",
];

const ENDINGS: &[&str] = &[
    "{name} ended the day {word}.",
    "{name} felt {word} afterwards.",
];

pub const POSITIVE: &[&str] = &["happy", "glad", "proud", "excited", "cheerful", "thrilled"];
pub const NEGATIVE: &[&str] = &["sad", "angry", "upset", "worried", "gloomy", "miserable"];

struct Slots<'a> {
    name: &'a str,
    other: &'a str,
    place: &'a str,
    thing: &'a str,
}

fn fill(template: &str, slots: &Slots<'_>, word: &str) -> Vec<String> {
    tokenize(
        &template
            .replace("{name}", slots.name)
            .replace("{other}", slots.other)
            .replace("{place}", slots.place)
            .replace("{thing}", slots.thing)
            .replace("{word}", word),
    )
}

/// Generate `n` stories deterministically from `seed`.
///
/// Labels are balanced: `n / 2` (rounded up) have the real ending first.
pub fn generate_synthetic(n: usize, seed: u64, cue_position_prob: f64) -> Vec<StoryInstance> {
    let mut rng = Rng::new(seed);
    let mut labels: Vec<Label> = (0..n)
        .map(|i| {
            if i < n.div_ceil(2) {
                Label::First
            } else {
                Label::Second
            }
        })
        .collect();
    rng.shuffle(&mut labels);

    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let name = *rng.choose(NAMES);
            let mut other = *rng.choose(NAMES);
            while other == name {
                other = *rng.choose(NAMES);
            }
            let slots = Slots {
                name,
                other,
                place: rng.choose(PLACES),
                thing: rng.choose(THINGS),
            };

            let positive = rng.bernoulli(0.5);
            let (same, opposite) = if positive {
                (POSITIVE, NEGATIVE)
            } else {
                (NEGATIVE, POSITIVE)
            };
            let cue_word = *rng.choose(same);
            let fake_word = *rng.choose(opposite);

            let mut filler_ids: Vec<usize> = (0..FILLERS.len()).collect();
            rng.shuffle(&mut filler_ids);
            let mut sentences: Vec<Vec<String>> = filler_ids[..3]
                .iter()
                .map(|&k| fill(FILLERS[k], &slots, ""))
                .collect();
            let cue = fill(rng.choose(CUES), &slots, cue_word);
            let position = if rng.bernoulli(cue_position_prob) {
                3
            } else {
                rng.below(3)
            };
            sentences.insert(position, cue);

            let ending_template = *rng.choose(ENDINGS);
            let real = fill(ending_template, &slots, cue_word);
            let fake = fill(ending_template, &slots, fake_word);
            let (ending1, ending2) = match label {
                Label::First => (real, fake),
                Label::Second => (fake, real),
            };
            StoryInstance {
                id: format!("syn-{seed}-{i:05}"),
                sentences,
                ending1,
                ending2,
                label,
            }
        })
        .collect()
}
