mod common;

use common::{
    aoa_oracle, gradcheck, lstm_oracle, max_norm_error, random_encoded, random_rows, tiny_config,
    tiny_net, VOCAB,
};
use diffnet_core::model::{
    encode_contextual, enrich, highway_head, modified_aoa, Activation, AoaMode, FeatureSet,
    ModelConfig, ParamId,
};
use diffnet_core::tensor::{Rng, Tape, Tensor};
use proptest::prelude::*;

#[test]
fn full_model_gradient_matches_finite_differences() {
    let variants: Vec<(&str, ModelConfig)> = vec![
        ("default", tiny_config()),
        (
            "tanh",
            ModelConfig {
                activation: Activation::Tanh,
                ..tiny_config()
            },
        ),
        (
            "original",
            ModelConfig {
                aoa: AoaMode::Original,
                ..tiny_config()
            },
        ),
        (
            "dot",
            ModelConfig {
                aoa: AoaMode::Dot,
                ..tiny_config()
            },
        ),
        (
            "no-cosine",
            ModelConfig {
                use_cosine_loss: false,
                ..tiny_config()
            },
        ),
    ];
    for (k, (name, config)) in variants.into_iter().enumerate() {
        let err = gradcheck(&tiny_net(config, 10 + k as u64), 100 + k as u64);
        assert!(err < 1e-6, "{name}: {err}");
    }
}

#[test]
fn lstm_encoder_matches_stepwise_oracle() {
    let mut rng = Rng::new(21);
    let (t, input, h) = (5, 6, 3);
    let x = random_rows(&mut rng, t, input);
    let wf = random_rows(&mut rng, input + h, 4 * h);
    let wb = random_rows(&mut rng, input + h, 4 * h);
    let bf = random_rows(&mut rng, 1, 4 * h).remove(0);
    let bb = random_rows(&mut rng, 1, 4 * h).remove(0);

    let tensors = [
        Tensor::from_rows(&x),
        Tensor::from_rows(&wf),
        Tensor::row(bf.clone()),
        Tensor::from_rows(&wb),
        Tensor::row(bb.clone()),
    ];
    let mut tape = Tape::new();
    let v: Vec<_> = tensors.iter().map(|p| tape.param(p)).collect();
    let (seq, pooled) = encode_contextual(&mut tape, v[0], (v[1], v[2]), (v[3], v[4])).unwrap();

    let fwd = lstm_oracle(&x, &wf, &bf);
    let rev: Vec<_> = x.iter().rev().cloned().collect();
    let mut bwd = lstm_oracle(&rev, &wb, &bb);
    bwd.reverse();
    let seq = tape.value(seq);
    for step in 0..t {
        let expect: Vec<f64> = fwd[step].iter().chain(&bwd[step]).cloned().collect();
        for (a, b) in seq.row_slice(step).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    for j in 0..2 * h {
        let best = (0..t)
            .map(|s| seq.get(s, j))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(tape.value(pooled).data()[j], best);
    }
}

#[test]
fn lstm_encoder_single_step_and_zero_weights() {
    let x = Tensor::row(vec![0.4, -0.7]);
    let zw = Tensor::zeros(&[5, 12]);
    let zb = Tensor::zeros(&[1, 12]);
    let mut tape = Tape::new();
    let (xv, w, b) = (tape.param(&x), tape.param(&zw), tape.param(&zb));
    let (seq, pooled) = encode_contextual(&mut tape, xv, (w, b), (w, b)).unwrap();
    assert_eq!(tape.value(seq).data(), tape.value(pooled).data());
    assert!(tape.value(seq).data().iter().all(|&v| v == 0.0));
}

#[test]
fn enrich_zero_and_tanh_range() {
    let mut rng = Rng::new(2);
    let seq = rng.uniform_tensor(&[4, 6], -3.0, 3.0);
    let zw = Tensor::zeros(&[6, 3]);
    let zb = Tensor::zeros(&[1, 3]);
    let w = rng.uniform_tensor(&[6, 3], -1.0, 1.0);
    let mut tape = Tape::new();
    let s = tape.param(&seq);
    let (zwv, zbv, wv) = (tape.param(&zw), tape.param(&zb), tape.param(&w));
    for act in [Activation::Selu, Activation::Tanh] {
        let out = enrich(&mut tape, s, zwv, zbv, act).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }
    let out = enrich(&mut tape, s, wv, zbv, Activation::Tanh).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v > -1.0 && v < 1.0));
    let bad = Tensor::zeros(&[5, 3]);
    let bv = tape.param(&bad);
    assert!(enrich(&mut tape, s, bv, zbv, Activation::Selu).is_err());
}

#[test]
fn highway_carry_and_transform_paths() {
    let mut rng = Rng::new(5);
    let d = 6;
    let x = rng.uniform_tensor(&[1, d], -1.0, 1.0);
    let wt = rng.uniform_tensor(&[d, d], -0.1, 0.1);
    let wh = rng.uniform_tensor(&[d, d], -1.0, 1.0);
    let bh = rng.uniform_tensor(&[1, d], -1.0, 1.0);
    for (bias, carry) in [(-20.0, true), (20.0, false)] {
        let bt = Tensor::filled(&[1, d], bias);
        let mut tape = Tape::new();
        let v: Vec<_> = [&x, &wt, &bt, &wh, &bh]
            .iter()
            .map(|p| tape.param(p))
            .collect();
        let out = highway_head(
            &mut tape,
            v[0],
            (v[1], v[2]),
            (v[3], v[4]),
            Activation::Selu,
        )
        .unwrap();
        let expect = if carry {
            diffnet_core::tensor::selu(&x)
        } else {
            let mut z = x.matmul(&wh).unwrap();
            z.add_scaled(&bh, 1.0).unwrap();
            diffnet_core::tensor::selu(&diffnet_core::tensor::selu(&z))
        };
        assert!(tape.value(out).max_abs_diff(&expect) < 1e-7, "bias {bias}");
    }
    let zero = Tensor::zeros(&[1, d]);
    let zw = Tensor::zeros(&[d, d]);
    let mut tape = Tape::new();
    let (z, w) = (tape.param(&zero), tape.param(&zw));
    let out = highway_head(&mut tape, z, (w, z), (w, z), Activation::Selu).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn attention_matches_reference_on_small_inputs() {
    let mut rng = Rng::new(8);
    for mode in [AoaMode::Modified, AoaMode::Original, AoaMode::Dot] {
        for negate in [false, true] {
            let td1 = random_rows(&mut rng, 3, 4);
            let td2 = random_rows(&mut rng, 2, 4);
            let (out, trace) = modified_aoa(
                &Tensor::from_rows(&td1),
                &Tensor::from_rows(&td2),
                mode,
                negate,
            )
            .unwrap();
            let (o, sim, alpha, beta, gamma) = aoa_oracle(&td1, &td2, mode, negate);
            assert!(out.max_abs_diff(&Tensor::row(o)) < 1e-12);
            assert!(trace.sim.max_abs_diff(&Tensor::from_rows(&sim)) < 1e-12);
            for (a, b) in trace.gamma.iter().zip(&gamma) {
                assert!((a - b).abs() < 1e-12);
            }
            if mode != AoaMode::Dot {
                assert!(
                    trace
                        .alpha
                        .unwrap()
                        .max_abs_diff(&Tensor::from_rows(&alpha))
                        < 1e-12
                );
                for (a, b) in trace.beta.unwrap().iter().zip(&beta) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn ending_width_tracks_features() {
    let mut c = ModelConfig::default();
    assert_eq!(c.ending_input_dim(), c.embed_dim + 3);
    c.features = FeatureSet::NONE;
    assert_eq!(c.ending_input_dim(), c.embed_dim);
}

#[test]
fn identical_endings_split_evenly() {
    let net = tiny_net(tiny_config(), 3);
    let mut inst = random_encoded(&mut Rng::new(4), VOCAB, 6, 3);
    inst.endings[1] = inst.endings[0].clone();
    inst.features[1] = inst.features[0].clone();
    let pred = net.predict(&inst).unwrap();
    assert_eq!(pred.probs, [0.5, 0.5]);
    assert!(pred.is_tie());
    assert!((pred.cosine - 1.0).abs() < 1e-12);
    let diff = pred.diff_traces;
    let (a, b) = (diff[0].as_ref().unwrap(), diff[1].as_ref().unwrap());
    assert_eq!(a.gamma, b.gamma);
}

#[test]
fn zero_network_loss_is_ln2() {
    let config = ModelConfig {
        use_cosine_loss: false,
        ..tiny_config()
    };
    let mut net = tiny_net(config, 1);
    for (_, t) in net.params.iter_mut() {
        t.data_mut().fill(0.0);
    }
    let inst = random_encoded(&mut Rng::new(2), VOCAB, 6, 3);
    let loss = net.loss(&inst).unwrap();
    assert!((loss.total - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(loss.l2, 0.0);
}

#[test]
fn empty_story_zero_fills_match() {
    let net = tiny_net(tiny_config(), 6);
    let mut inst = random_encoded(&mut Rng::new(7), VOCAB, 6, 3);
    inst.story.clear();
    let pred = net.predict(&inst).unwrap();
    assert!(pred.match_traces.iter().all(Option::is_none));
    assert!((pred.probs[0] + pred.probs[1] - 1.0).abs() < 1e-12);
    inst.endings[0].clear();
    assert!(net.predict(&inst).is_err());
}

#[test]
fn out_of_range_token_rejected() {
    let net = tiny_net(tiny_config(), 6);
    let mut inst = random_encoded(&mut Rng::new(7), VOCAB, 6, 3);
    inst.story[0] = VOCAB;
    assert!(net.predict(&inst).is_err());
}

#[test]
fn disabled_paths_receive_no_gradient() {
    let mut rng = Rng::new(31);
    let inst = random_encoded(&mut rng, VOCAB, 6, 3);
    let story_params = [
        ParamId::StoryFwdWeight,
        ParamId::StoryFwdBias,
        ParamId::StoryBwdWeight,
        ParamId::StoryBwdBias,
        ParamId::StoryEnrichWeight,
        ParamId::StoryEnrichBias,
    ];

    let no_match = tiny_net(
        ModelConfig {
            use_match: false,
            ..tiny_config()
        },
        1,
    );
    let g = no_match.batch_gradient(&[&inst], None).unwrap().grads;
    for id in story_params {
        assert!(g[id].data().iter().all(|&x| x == 0.0), "{}", id.name());
    }
    assert!(g[ParamId::EndingEnrichWeight]
        .data()
        .iter()
        .any(|&x| x != 0.0));

    let neither = tiny_net(
        ModelConfig {
            use_match: false,
            use_diff: false,
            ..tiny_config()
        },
        1,
    );
    let g = neither.batch_gradient(&[&inst], None).unwrap().grads;
    for id in [ParamId::EndingEnrichWeight, ParamId::EndingEnrichBias] {
        assert!(g[id].data().iter().all(|&x| x == 0.0), "{}", id.name());
    }

    let full = tiny_net(tiny_config(), 1);
    let g = full.batch_gradient(&[&inst], None).unwrap().grads;
    for id in story_params {
        assert!(g[id].data().iter().any(|&x| x != 0.0), "{}", id.name());
    }
}

#[test]
fn disabled_features_have_no_effect() {
    let net = tiny_net(
        ModelConfig {
            features: FeatureSet::NONE,
            ..tiny_config()
        },
        2,
    );
    let mut inst = random_encoded(&mut Rng::new(3), VOCAB, 6, 3);
    let before = net.predict(&inst).unwrap().probs;
    for f in inst.features.iter_mut().flatten() {
        *f = [1.0 - f[0], 1.0 - f[1], 1.0 - f[2]];
    }
    assert_eq!(net.predict(&inst).unwrap().probs, before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn swap_equivariance(seed in any::<u64>()) {
        let net = tiny_net(tiny_config(), 9);
        let mut rng = Rng::new(seed);
        let (s, e) = (1 + rng.below(8), 1 + rng.below(5));
        let inst = random_encoded(&mut rng, VOCAB, s, e);
        let a = net.predict(&inst).unwrap().probs;
        let b = net.predict(&inst.swapped()).unwrap().probs;
        prop_assert!((a[0] - b[1]).abs() < 1e-12 && (a[1] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn traces_are_distributions(seed in any::<u64>()) {
        let net = tiny_net(tiny_config(), 11);
        prop_assert!(max_norm_error(&net, seed) < 1e-9);
    }
}

#[test]
fn loss_components_reported() {
    let net = tiny_net(tiny_config(), 12);
    let inst = random_encoded(&mut Rng::new(12), VOCAB, 6, 3);
    let loss = net.loss(&inst).unwrap();
    let pred = net.predict(&inst).unwrap();
    let p = pred.probs[inst.label.index()];
    assert!((loss.cce + p.ln()).abs() < 1e-12);
    assert!((loss.cosine - pred.cosine).abs() < 1e-12);
    assert!((loss.total - (loss.cce + loss.cosine + loss.l2)).abs() < 1e-12);
}
