use super::aoa::{attend, AttentionTrace, TraceVars};
use super::{
    Activation, EncodedInstance, ModelConfig, ModelError, ModelParams, ParamId, ParamVars,
};
use crate::tensor::{dropout_mask, Rng, Tape, Tensor, TensorError, Var};
use crate::text::{EmbeddingMatrix, Label, Vocabulary};

fn activate(tape: &mut Tape<'_>, x: Var, activation: Activation) -> Var {
    match activation {
        Activation::Selu => tape.selu(x),
        Activation::Tanh => tape.tanh(x),
    }
}

/// Look up `ids` and append the enabled feature columns. Dropout, when an
/// RNG is supplied, is applied to the word vectors only.
pub fn embed_with_features(
    tape: &mut Tape<'_>,
    embedding: Var,
    ids: &[usize],
    features: Option<(&[[f64; 3]], [bool; 3])>,
    dropout: Option<(&mut Rng, f64)>,
) -> Result<Var, ModelError> {
    if ids.is_empty() {
        return Err(ModelError::Tensor(TensorError::invalid(
            "embed",
            "empty token sequence",
        )));
    }
    let vocab = tape.value(embedding).rows();
    if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
        return Err(ModelError::Tensor(TensorError::invalid(
            "embed",
            format!("token id {bad} outside vocabulary of {vocab}"),
        )));
    }
    let mut x = tape.gather_rows(embedding, ids)?;
    if let Some((rng, rate)) = dropout {
        if rate > 0.0 {
            let mask = dropout_mask(tape.value(x).shape(), rate, rng, true)?;
            let mask = tape.constant(mask);
            x = tape.mul(x, mask)?;
        }
    }
    let Some((feats, mask)) = features else {
        return Ok(x);
    };
    if feats.len() != ids.len() {
        return Err(ModelError::Tensor(TensorError::invalid(
            "embed",
            format!("{} feature rows for {} tokens", feats.len(), ids.len()),
        )));
    }
    let cols: Vec<usize> = (0..3).filter(|&k| mask[k]).collect();
    if cols.is_empty() {
        return Ok(x);
    }
    let data = feats
        .iter()
        .flat_map(|f| cols.iter().map(move |&k| f[k]))
        .collect();
    let f = tape.constant(Tensor::matrix(ids.len(), cols.len(), data));
    Ok(tape.concat_cols(&[x, f])?)
}

/// Bidirectional LSTM over the rows of `x`. Returns the `T x 2h` sequence
/// and its `1 x 2h` max-over-time pooling.
pub fn encode_contextual(
    tape: &mut Tape<'_>,
    x: Var,
    forward: (Var, Var),
    backward: (Var, Var),
) -> Result<(Var, Var), TensorError> {
    let steps = tape.value(x).rows();
    let hidden = tape.value(forward.1).cols() / 4;
    let run = |tape: &mut Tape<'_>, order: &mut dyn Iterator<Item = usize>, (w, b): (Var, Var)| {
        let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
        let mut c = tape.constant(Tensor::zeros(&[1, hidden]));
        let mut out = vec![h; steps];
        for t in order {
            let xt = tape.gather_rows(x, &[t])?;
            let hc = tape.lstm_step(xt, h, c, w, b)?;
            h = tape.slice_cols(hc, 0, hidden)?;
            c = tape.slice_cols(hc, hidden, hidden)?;
            out[t] = h;
        }
        tape.concat_rows(&out)
    };
    let fwd = run(tape, &mut (0..steps), forward)?;
    let bwd = run(tape, &mut (0..steps).rev(), backward)?;
    let seq = tape.concat_cols(&[fwd, bwd])?;
    let pooled = tape.max_over_time(seq)?;
    Ok((seq, pooled))
}

/// Per-step `activation(x W + b)`.
pub fn enrich(
    tape: &mut Tape<'_>,
    seq: Var,
    w: Var,
    b: Var,
    activation: Activation,
) -> Result<Var, TensorError> {
    let z = tape.affine(seq, w, b)?;
    Ok(activate(tape, z, activation))
}

/// One highway layer followed by the output activation.
pub fn highway_head(
    tape: &mut Tape<'_>,
    x: Var,
    gate: (Var, Var),
    transform: (Var, Var),
    activation: Activation,
) -> Result<Var, TensorError> {
    let zt = tape.affine(x, gate.0, gate.1)?;
    let t = tape.sigmoid(zt);
    let zh = tape.affine(x, transform.0, transform.1)?;
    let g = activate(tape, zh, activation);
    let delta = tape.sub(g, x)?;
    let moved = tape.mul(t, delta)?;
    let y = tape.add(x, moved)?;
    Ok(activate(tape, y, activation))
}

/// Tape handles for one ending's representations.
#[derive(Clone, Copy, Debug)]
pub struct EndingVars {
    pub contextual: Var,
    pub story_aware: Option<Var>,
    pub discriminative: Option<Var>,
    pub hybrid: Var,
    pub score: Var,
}

/// Tape handles for a scored pair.
#[derive(Clone, Copy, Debug)]
pub struct PairVars {
    pub endings: [EndingVars; 2],
    pub scores: Var,
    pub probs: Var,
    pub log_probs: Var,
    pub match_traces: [Option<TraceVars>; 2],
    pub diff_traces: [Option<TraceVars>; 2],
}

/// Tape handles for the loss terms of one instance.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub cce: Var,
    pub cosine: Var,
    /// `cce` plus the cosine term when enabled; excludes the embedding penalty
    pub data: Var,
}

/// Scalar loss components of one instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossComponents {
    pub cce: f64,
    pub cosine: f64,
    pub l2: f64,
    pub total: f64,
}

/// Mean loss components and the objective's gradient over one batch.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub loss: LossComponents,
    pub grads: ModelParams,
    /// instances whose higher-probability ending is the gold one
    pub correct: usize,
}

/// Result of scoring one instance in evaluation mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: [f64; 2],
    pub scores: [f64; 2],
    /// cosine similarity of the two hybrid outputs
    pub cosine: f64,
    pub match_traces: [Option<AttentionTrace>; 2],
    pub diff_traces: [Option<AttentionTrace>; 2],
}

impl Prediction {
    /// Ending with the larger probability; the first wins exact ties.
    pub fn label(&self) -> Label {
        if self.probs[1] > self.probs[0] {
            Label::Second
        } else {
            Label::First
        }
    }

    pub fn is_tie(&self) -> bool {
        self.probs[0] == self.probs[1]
    }
}

/// Per-ending cross entropy and cosine terms.
pub fn instance_loss(
    tape: &mut Tape<'_>,
    pair: &PairVars,
    label: Label,
    use_cosine_loss: bool,
) -> Result<LossVars, TensorError> {
    let lp = tape.pick(pair.log_probs, label.index())?;
    let cce = tape.neg(lp);
    let cosine = tape.cosine_matrix(pair.endings[0].hybrid, pair.endings[1].hybrid)?;
    let data = if use_cosine_loss {
        tape.add(cce, cosine)?
    } else {
        cce
    };
    Ok(LossVars { cce, cosine, data })
}

/// `coef * ||embedding||^2`.
pub fn embedding_penalty(tape: &mut Tape<'_>, embedding: Var, coef: f64) -> Var {
    let sq = tape.sum_squares(embedding);
    tape.scale(sq, coef)
}

/// The full network: configuration, vocabulary and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffNet {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

impl DiffNet {
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        embedding: &EmbeddingMatrix,
        rng: &mut Rng,
    ) -> Result<Self, ModelError> {
        if embedding.values.rows() != vocab.len() {
            return Err(ModelError::Config(format!(
                "embedding has {} rows for a vocabulary of {}",
                embedding.values.rows(),
                vocab.len()
            )));
        }
        let params = ModelParams::init(&config, embedding, rng)?;
        Ok(DiffNet {
            config,
            vocab,
            params,
        })
    }

    /// Random embeddings drawn from `rng` before the other weights.
    pub fn random(
        config: ModelConfig,
        vocab: Vocabulary,
        rng: &mut Rng,
    ) -> Result<Self, ModelError> {
        let embedding = EmbeddingMatrix::random(&vocab, config.embed_dim, rng);
        Self::new(config, vocab, &embedding, rng)
    }

    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        params: ModelParams,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        params.check_shapes(&config)?;
        if params[ParamId::Embedding].rows() != vocab.len() {
            return Err(ModelError::Config(
                "embedding rows differ from vocabulary size".into(),
            ));
        }
        Ok(DiffNet {
            config,
            vocab,
            params,
        })
    }

    /// Record the scoring of both endings on `tape`. Dropout is active when
    /// `dropout_rng` is supplied.
    pub fn forward<'a>(
        &self,
        tape: &mut Tape<'a>,
        vars: &ParamVars,
        inst: &EncodedInstance,
        mut dropout_rng: Option<&mut Rng>,
    ) -> Result<PairVars, ModelError> {
        let cfg = &self.config;
        let p = |id: ParamId| vars[id];
        let rate = cfg.dropout;
        if inst.endings.iter().any(Vec::is_empty) {
            return Err(ModelError::Input {
                id: inst.id.clone(),
                reason: "empty ending".into(),
            });
        }
        match (&inst.external, cfg.external_feature_dim) {
            (None, 0) => {}
            (Some([a, b]), d) if a.len() == d && b.len() == d => {}
            _ => {
                return Err(ModelError::Input {
                    id: inst.id.clone(),
                    reason: format!(
                        "expected external features of width {}",
                        cfg.external_feature_dim
                    ),
                })
            }
        }

        let story_enriched = if cfg.use_match && !inst.story.is_empty() {
            let x = embed_with_features(
                tape,
                p(ParamId::Embedding),
                &inst.story,
                None,
                dropout_rng.as_deref_mut().map(|r| (r, rate)),
            )?;
            let (seq, _) = encode_contextual(
                tape,
                x,
                (p(ParamId::StoryFwdWeight), p(ParamId::StoryFwdBias)),
                (p(ParamId::StoryBwdWeight), p(ParamId::StoryBwdBias)),
            )?;
            Some(enrich(
                tape,
                seq,
                p(ParamId::StoryEnrichWeight),
                p(ParamId::StoryEnrichBias),
                cfg.activation,
            )?)
        } else {
            None
        };

        let mut pooled = Vec::with_capacity(2);
        let mut enriched = Vec::with_capacity(2);
        for k in 0..2 {
            let x = embed_with_features(
                tape,
                p(ParamId::Embedding),
                &inst.endings[k],
                Some((&inst.features[k], cfg.features.mask())),
                dropout_rng.as_deref_mut().map(|r| (r, rate)),
            )?;
            let (seq, pool) = encode_contextual(
                tape,
                x,
                (p(ParamId::EndingFwdWeight), p(ParamId::EndingFwdBias)),
                (p(ParamId::EndingBwdWeight), p(ParamId::EndingBwdBias)),
            )?;
            pooled.push(pool);
            if cfg.use_match || cfg.use_diff {
                enriched.push(enrich(
                    tape,
                    seq,
                    p(ParamId::EndingEnrichWeight),
                    p(ParamId::EndingEnrichBias),
                    cfg.activation,
                )?);
            }
        }

        let mut match_traces = [None, None];
        let mut diff_traces = [None, None];
        let mut endings = Vec::with_capacity(2);
        for k in 0..2 {
            let mut parts = vec![pooled[k]];
            let story_aware = if cfg.use_match {
                let m = match story_enriched {
                    Some(rs) => {
                        let (m, trace) = attend(tape, rs, enriched[k], cfg.aoa, false)?;
                        match_traces[k] = Some(trace);
                        m
                    }
                    None => tape.constant(Tensor::zeros(&[1, cfg.enriched])),
                };
                parts.push(m);
                Some(m)
            } else {
                None
            };
            let discriminative = if cfg.use_diff {
                let (d, trace) = attend(tape, enriched[1 - k], enriched[k], cfg.aoa, true)?;
                diff_traces[k] = Some(trace);
                parts.push(d);
                Some(d)
            } else {
                None
            };
            if let Some(ext) = &inst.external {
                if cfg.external_feature_dim > 0 {
                    parts.push(tape.constant(Tensor::row(ext[k].clone())));
                }
            }
            let x = tape.concat_cols(&parts)?;
            let hybrid = highway_head(
                tape,
                x,
                (p(ParamId::GateWeight), p(ParamId::GateBias)),
                (p(ParamId::TransformWeight), p(ParamId::TransformBias)),
                cfg.activation,
            )?;
            let score = tape.affine(hybrid, p(ParamId::ScoreWeight), p(ParamId::ScoreBias))?;
            endings.push(EndingVars {
                contextual: pooled[k],
                story_aware,
                discriminative,
                hybrid,
                score,
            });
        }

        let scores = tape.concat_cols(&[endings[0].score, endings[1].score])?;
        let probs = tape.softmax(scores)?;
        let log_probs = tape.log_softmax(scores)?;
        Ok(PairVars {
            endings: [endings[0], endings[1]],
            scores,
            probs,
            log_probs,
            match_traces,
            diff_traces,
        })
    }

    /// Inference-mode scoring (no dropout).
    pub fn predict(&self, inst: &EncodedInstance) -> Result<Prediction, ModelError> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let pair = self.forward(&mut tape, &vars, inst, None)?;
        let probs = tape.value(pair.probs).data();
        let scores = tape.value(pair.scores).data();
        let o1 = tape.value(pair.endings[0].hybrid);
        let o2 = tape.value(pair.endings[1].hybrid);
        let cosine = crate::tensor::cosine_matrix(o1, o2)?.item();
        let read =
            |t: &[Option<TraceVars>; 2]| [t[0].map(|v| v.read(&tape)), t[1].map(|v| v.read(&tape))];
        Ok(Prediction {
            probs: [probs[0], probs[1]],
            scores: [scores[0], scores[1]],
            cosine,
            match_traces: read(&pair.match_traces),
            diff_traces: read(&pair.diff_traces),
        })
    }

    /// Full single-instance objective, including the embedding penalty.
    pub fn loss(&self, inst: &EncodedInstance) -> Result<LossComponents, ModelError> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let pair = self.forward(&mut tape, &vars, inst, None)?;
        let terms = instance_loss(&mut tape, &pair, inst.label, self.config.use_cosine_loss)?;
        let l2 = embedding_penalty(
            &mut tape,
            vars[ParamId::Embedding],
            self.config.l2_embedding,
        );
        let cce = tape.value(terms.cce).item();
        let cosine = tape.value(terms.cosine).item();
        let l2 = tape.value(l2).item();
        let data = tape.value(terms.data).item();
        Ok(LossComponents {
            cce,
            cosine,
            l2,
            total: data + l2,
        })
    }

    /// Batch objective `mean(data loss) + embedding penalty` and its gradient
    /// with respect to every parameter.
    pub fn batch_gradient(
        &self,
        batch: &[&EncodedInstance],
        mut dropout_rng: Option<&mut Rng>,
    ) -> Result<BatchGradient, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Config("empty batch".into()));
        }
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let mut data = Vec::with_capacity(batch.len());
        let (mut cce, mut cosine) = (0.0, 0.0);
        let mut correct = 0;
        for inst in batch {
            let pair = self.forward(&mut tape, &vars, inst, dropout_rng.as_deref_mut())?;
            let p = tape.value(pair.probs).data();
            let predicted = if p[1] > p[0] {
                Label::Second
            } else {
                Label::First
            };
            correct += usize::from(predicted == inst.label);
            let terms = instance_loss(&mut tape, &pair, inst.label, self.config.use_cosine_loss)?;
            cce += tape.value(terms.cce).item();
            cosine += tape.value(terms.cosine).item();
            data.push(terms.data);
        }
        let n = batch.len() as f64;
        let stacked = tape.concat_cols(&data)?;
        let summed = tape.sum(stacked);
        let mean = tape.scale(summed, 1.0 / n);
        let l2 = embedding_penalty(
            &mut tape,
            vars[ParamId::Embedding],
            self.config.l2_embedding,
        );
        let root = tape.add(mean, l2)?;
        let g = tape.backward(root)?;
        let grads = vars.map(|_, &v| g.wrt(v));
        Ok(BatchGradient {
            loss: LossComponents {
                cce: cce / n,
                cosine: cosine / n,
                l2: tape.value(l2).item(),
                total: tape.value(root).item(),
            },
            grads,
            correct,
        })
    }
}
