mod common;

use common::PORTER_REFERENCE;
use diffnet_core::tensor::Rng;
use diffnet_core::text::{
    compute_features, porter_stem, transform_instance, Label, StoryInstance, TransformMode,
};
use proptest::prelude::*;

#[test]
fn porter_reference_vectors() {
    let failures: Vec<_> = PORTER_REFERENCE
        .iter()
        .filter(|(w, s)| porter_stem(w) != *s)
        .map(|(w, s)| format!("{w}: expected {s}, got {}", porter_stem(w)))
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn porter_idempotent_on_reference_outputs() {
    for (_, stem) in PORTER_REFERENCE {
        // stem(stem(w)) == stem(w) for the canonical list
        let twice = porter_stem(&porter_stem(stem));
        assert_eq!(twice, porter_stem(stem), "{stem}");
    }
}

fn token() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "gina", "was", "very", "angry", "calm", ".", "pencil", "pencils", "happy", "happier",
        "run", "running", "dave", "the",
    ])
    .prop_map(String::from)
}

fn tokens(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(token(), 1..max)
}

fn instance() -> impl Strategy<Value = StoryInstance> {
    (
        prop::collection::vec(tokens(6), 4),
        tokens(6),
        tokens(6),
        any::<bool>(),
    )
        .prop_map(|(sentences, ending1, ending2, first)| StoryInstance {
            id: "p".into(),
            sentences,
            ending1,
            ending2,
            label: if first { Label::First } else { Label::Second },
        })
}

proptest! {
    #[test]
    fn features_swap_with_endings(a in tokens(8), b in tokens(8), story in tokens(20)) {
        let pair = (compute_features(&a, &b, &story), compute_features(&b, &a, &story));
        let swapped = (compute_features(&b, &a, &story), compute_features(&a, &b, &story));
        prop_assert_eq!(&pair.0, &swapped.1);
        prop_assert_eq!(&pair.1, &swapped.0);
        prop_assert_eq!(pair.0.len(), a.len());
    }

    #[test]
    fn exact_match_implies_fuzzy(a in tokens(8), b in tokens(8), story in tokens(20)) {
        for f in compute_features(&a, &b, &story).0 {
            prop_assert!(!f.end_story || f.end_story_fuzzy);
        }
    }

    #[test]
    fn transforms_keep_endings_and_label(inst in instance(), mode_idx in 0usize..8, seed in any::<u64>()) {
        let mode = TransformMode::analysis_modes()[mode_idx];
        let out = transform_instance(&inst, mode, &mut Rng::new(seed));
        prop_assert_eq!(&out.ending1, &inst.ending1);
        prop_assert_eq!(&out.ending2, &inst.ending2);
        prop_assert_eq!(out.label, inst.label);
    }
}
