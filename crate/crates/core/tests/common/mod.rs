//! Independent reference computations shared by the integration tests.
//! Everything here works on plain `Vec<f64>` rows and never touches the tape.
#![allow(dead_code, unused_imports)]

mod porter_ref;

pub use porter_ref::PORTER_REFERENCE;

use diffnet_core::model::{
    encode_dataset, AoaMode, DiffNet, EncodedInstance, ModelConfig, ModelParams, ParamId,
};
use diffnet_core::tensor::Rng;
use diffnet_core::tensor::{finite_diff_check, Tensor, TensorError};
use diffnet_core::text::{generate_synthetic, EmbeddingMatrix, Label, StoryInstance, Vocabulary};

pub type Rows = Vec<Vec<f64>>;

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Reference attention: returns `(output, sim, alpha, beta, gamma)` with
/// `alpha` as `M x N` and `beta` empty in dot mode.
pub fn aoa_oracle(
    td1: &Rows,
    td2: &Rows,
    mode: AoaMode,
    negate: bool,
) -> (Vec<f64>, Rows, Rows, Vec<f64>, Vec<f64>) {
    let (m, n) = (td1.len(), td2.len());
    let mut sim = vec![vec![0.0; n]; m];
    for i in 0..m {
        for t in 0..n {
            let s = match mode {
                AoaMode::Modified => cosine(&td1[i], &td2[t]),
                _ => dot(&td1[i], &td2[t]),
            };
            sim[i][t] = if negate { -s } else { s };
        }
    }
    let (gamma, alpha, beta) = if mode == AoaMode::Dot {
        let pooled: Vec<f64> = (0..n)
            .map(|t| (0..m).map(|i| sim[i][t]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        (softmax(&pooled), Vec::new(), Vec::new())
    } else {
        let mut alpha = vec![vec![0.0; n]; m];
        for t in 0..n {
            let col: Vec<f64> = (0..m).map(|i| sim[i][t]).collect();
            for (i, a) in softmax(&col).into_iter().enumerate() {
                alpha[i][t] = a;
            }
        }
        let pooled: Vec<f64> = sim
            .iter()
            .map(|row| match mode {
                AoaMode::Modified => row.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                _ => row.iter().sum::<f64>() / n as f64,
            })
            .collect();
        let beta = softmax(&pooled);
        let scores: Vec<f64> = (0..n)
            .map(|t| (0..m).map(|i| alpha[i][t] * beta[i]).sum())
            .collect();
        (softmax(&scores), alpha, beta)
    };
    let r = td2[0].len();
    let out: Vec<f64> = (0..r)
        .map(|k| (0..n).map(|t| gamma[t] * td2[t][k]).sum())
        .collect();
    (out, sim, alpha, beta, gamma)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One direction of an LSTM, weight laid out `(in + h) x 4h` with gates
/// input, forget, candidate, output. Returns the hidden state per step.
pub fn lstm_oracle(xs: &Rows, weight: &Rows, bias: &[f64]) -> Rows {
    let h = bias.len() / 4;
    let input = xs[0].len();
    let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
    let mut out = Vec::new();
    for x in xs {
        let joined: Vec<f64> = x.iter().chain(hs.iter()).cloned().collect();
        assert_eq!(joined.len(), input + h);
        let z: Vec<f64> = (0..4 * h)
            .map(|j| {
                bias[j]
                    + (0..input + h)
                        .map(|k| joined[k] * weight[k][j])
                        .sum::<f64>()
            })
            .collect();
        for j in 0..h {
            let (i, f, g, o) = (
                sigmoid(z[j]),
                sigmoid(z[h + j]),
                z[2 * h + j].tanh(),
                sigmoid(z[3 * h + j]),
            );
            cs[j] = f * cs[j] + i * g;
            hs[j] = o * cs[j].tanh();
        }
        out.push(hs.clone());
    }
    out
}

pub fn random_rows(rng: &mut Rng, rows: usize, cols: usize) -> Rows {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect()
}

/// Instance with random token ids in `2..vocab` and random binary features.
pub fn random_encoded(rng: &mut Rng, vocab: usize, story: usize, ending: usize) -> EncodedInstance {
    let mut ids = |n: usize| (0..n).map(|_| 2 + rng.below(vocab - 2)).collect::<Vec<_>>();
    let (s, e1, e2) = (ids(story), ids(ending), ids(ending));
    let mut feats = |n: usize| {
        (0..n)
            .map(|_| [0, 1, 2].map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }))
            .collect::<Vec<_>>()
    };
    let (f1, f2) = (feats(ending), feats(ending));
    EncodedInstance {
        id: "t".into(),
        story: s,
        endings: [e1, e2],
        features: [f1, f2],
        external: None,
        label: if rng.bernoulli(0.5) {
            Label::First
        } else {
            Label::Second
        },
    }
}

/// Small model settings for training-level tests.
pub fn small_config(dim: usize) -> ModelConfig {
    ModelConfig::with_sizes(dim, dim)
}

/// Synthetic corpus split into train and held-out parts.
pub fn synthetic_split(
    n: usize,
    n_train: usize,
    seed: u64,
    cue_prob: f64,
) -> (Vec<StoryInstance>, Vec<StoryInstance>) {
    let mut data = generate_synthetic(n, seed, cue_prob);
    let eval = data.split_off(n_train);
    (data, eval)
}

/// Vocabulary, model and encoded splits for a synthetic training run.
pub fn synthetic_setup(
    config: ModelConfig,
    train: &[StoryInstance],
    eval: &[StoryInstance],
    seed: u64,
) -> (DiffNet, Vec<EncodedInstance>, Vec<EncodedInstance>) {
    let all: Vec<StoryInstance> = train.iter().chain(eval).cloned().collect();
    let vocab = Vocabulary::build(&all);
    let mut rng = Rng::new(seed);
    let emb = EmbeddingMatrix::random(&vocab, config.embed_dim, &mut rng);
    let model = DiffNet::new(config, vocab, &emb, &mut rng).unwrap();
    let tr = encode_dataset(train, &model.vocab, None).unwrap();
    let ev = encode_dataset(eval, &model.vocab, None).unwrap();
    (model, tr, ev)
}

pub const VOCAB: usize = 20;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        dropout: 0.0,
        ..ModelConfig::with_sizes(8, 4)
    }
}

pub fn tiny_vocab() -> Vocabulary {
    Vocabulary::from_tokens((0..VOCAB - 2).map(|i| format!("w{i}")))
}

pub fn tiny_net(config: ModelConfig, seed: u64) -> DiffNet {
    let mut net = DiffNet::random(config, tiny_vocab(), &mut Rng::new(seed)).unwrap();
    // biases away from zero so every path carries signal
    let mut rng = Rng::new(seed ^ 0xabc);
    for (id, t) in net.params.iter_mut() {
        if id != ParamId::Embedding {
            for x in t.data_mut() {
                *x += rng.uniform(-0.3, 0.3);
            }
        }
    }
    net
}

pub fn gradcheck(net: &DiffNet, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let batch = [
        random_encoded(&mut rng, VOCAB, 6, 3),
        random_encoded(&mut rng, VOCAB, 6, 3),
    ];
    let refs: Vec<_> = batch.iter().collect();
    let params = net.params.clone().into_vec();
    let f = |ps: &[Tensor]| {
        let candidate = DiffNet {
            config: net.config.clone(),
            vocab: net.vocab.clone(),
            params: ModelParams::from_vec(ps.to_vec()),
        };
        let out = candidate
            .batch_gradient(&refs, None)
            .map_err(|e| TensorError::Invalid {
                op: "objective",
                reason: e.to_string(),
            })?;
        Ok((out.loss.total, out.grads.into_vec()))
    };
    finite_diff_check(f, &params, 1e-5).unwrap().max_rel_error
}

pub fn max_norm_error(net: &DiffNet, seed: u64) -> f64 {
    let inst = random_encoded(
        &mut Rng::new(seed),
        VOCAB,
        1 + seed as usize % 7,
        1 + seed as usize % 4,
    );
    let pred = net.predict(&inst).unwrap();
    let mut worst = (pred.probs.iter().sum::<f64>() - 1.0).abs();
    for trace in pred.match_traces.iter().chain(&pred.diff_traces).flatten() {
        worst = worst.max((trace.gamma.iter().sum::<f64>() - 1.0).abs());
        if let Some(beta) = &trace.beta {
            worst = worst.max((beta.iter().sum::<f64>() - 1.0).abs());
        }
        if let Some(alpha) = &trace.alpha {
            for j in 0..alpha.cols() {
                let col: f64 = (0..alpha.rows()).map(|i| alpha.get(i, j)).sum();
                worst = worst.max((col - 1.0).abs());
            }
        }
    }
    worst
}
