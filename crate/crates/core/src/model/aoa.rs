use super::{AoaMode, ModelError};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Attention weights recorded by one attention call.
///
/// `alpha` is `M x N` with columns summing to one; `beta` has length `M`.
/// Both are absent in [`AoaMode::Dot`].
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub sim: Tensor,
    pub alpha: Option<Tensor>,
    pub beta: Option<Vec<f64>>,
    pub gamma: Vec<f64>,
}

/// Tape handles behind an [`AttentionTrace`]. `alpha_t` is the transposed
/// (`N x M`, row-stochastic) attention matrix.
#[derive(Clone, Copy, Debug)]
pub struct TraceVars {
    pub sim: Var,
    pub alpha_t: Option<Var>,
    pub beta: Option<Var>,
    pub gamma: Var,
}

impl TraceVars {
    pub fn read(&self, tape: &Tape<'_>) -> AttentionTrace {
        AttentionTrace {
            sim: tape.value(self.sim).clone(),
            alpha: self
                .alpha_t
                .map(|a| tape.value(a).transpose().expect("alpha is a matrix")),
            beta: self.beta.map(|b| tape.value(b).data().to_vec()),
            gamma: tape.value(self.gamma).data().to_vec(),
        }
    }
}

/// Attention of `td2` (`N x r`) guided by `td1` (`M x r`), returning the
/// `1 x r` summary `td2^T gamma`. With `negate` the similarity matrix is
/// replaced by its negation before any attention is taken.
pub fn attend(
    tape: &mut Tape<'_>,
    td1: Var,
    td2: Var,
    mode: AoaMode,
    negate: bool,
) -> Result<(Var, TraceVars), TensorError> {
    let raw = match mode {
        AoaMode::Modified => tape.cosine_matrix(td1, td2)?,
        AoaMode::Original | AoaMode::Dot => {
            let t2 = tape.transpose(td2)?;
            tape.matmul(td1, t2)?
        }
    };
    let sim = if negate { tape.neg(raw) } else { raw };

    let (gamma, alpha_t, beta) = match mode {
        AoaMode::Dot => {
            let pooled = tape.max_over_time(sim)?;
            (tape.softmax(pooled)?, None, None)
        }
        AoaMode::Modified | AoaMode::Original => {
            let sim_t = tape.transpose(sim)?;
            let alpha_t = tape.softmax(sim_t)?;
            let pooled = if mode == AoaMode::Modified {
                tape.max_over_time(sim_t)?
            } else {
                let n = tape.value(sim_t).rows();
                let avg = tape.constant(Tensor::filled(&[1, n], 1.0 / n as f64));
                tape.matmul(avg, sim_t)?
            };
            let beta = tape.softmax(pooled)?;
            let beta_col = tape.transpose(beta)?;
            let scores = tape.matmul(alpha_t, beta_col)?;
            let scores = tape.transpose(scores)?;
            (tape.softmax(scores)?, Some(alpha_t), Some(beta))
        }
    };
    let out = tape.matmul(gamma, td2)?;
    Ok((
        out,
        TraceVars {
            sim,
            alpha_t,
            beta,
            gamma,
        },
    ))
}

/// Stand-alone attention over plain tensors.
pub fn modified_aoa(
    td1: &Tensor,
    td2: &Tensor,
    mode: AoaMode,
    negate: bool,
) -> Result<(Tensor, AttentionTrace), ModelError> {
    let (m, r1) = td1.dims2()?;
    let (n, r2) = td2.dims2()?;
    if m == 0 || n == 0 || r1 != r2 {
        return Err(ModelError::Tensor(TensorError::ShapeMismatch {
            op: "modified_aoa",
            lhs: td1.shape().to_vec(),
            rhs: td2.shape().to_vec(),
        }));
    }
    let mut tape = Tape::new();
    let a = tape.param(td1);
    let b = tape.param(td2);
    let (out, trace) = attend(&mut tape, a, b, mode, negate)?;
    Ok((tape.value(out).clone(), trace.read(&tape)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{cosine_matrix, Rng};

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
        rng.uniform_tensor(&[rows, cols], -1.0, 1.0)
    }

    #[test]
    fn singleton_inputs() {
        let td1 = Tensor::row(vec![0.3, -0.2]);
        let td2 = Tensor::row(vec![1.5, 2.5]);
        let (out, trace) = modified_aoa(&td1, &td2, AoaMode::Modified, false).unwrap();
        assert_eq!(out, td2);
        assert_eq!(trace.alpha.unwrap().data(), &[1.0]);
        assert_eq!(trace.beta.unwrap(), vec![1.0]);
        assert_eq!(trace.gamma, vec![1.0]);
    }

    #[test]
    fn identical_rows_return_that_row() {
        let mut rng = Rng::new(3);
        let td1 = random(4, 3, &mut rng);
        let td2 = Tensor::from_rows(&vec![vec![0.1, 0.2, 0.3]; 5]);
        for mode in [AoaMode::Modified, AoaMode::Original, AoaMode::Dot] {
            let (out, _) = modified_aoa(&td1, &td2, mode, false).unwrap();
            assert!(out.max_abs_diff(&Tensor::row(vec![0.1, 0.2, 0.3])) < 1e-15);
        }
    }

    #[test]
    fn distributions_normalized() {
        let mut rng = Rng::new(9);
        let (td1, td2) = (random(5, 4, &mut rng), random(3, 4, &mut rng));
        let (_, trace) = modified_aoa(&td1, &td2, AoaMode::Modified, true).unwrap();
        let alpha = trace.alpha.unwrap();
        assert_eq!(alpha.shape(), &[5, 3]);
        for j in 0..3 {
            let col: f64 = (0..5).map(|i| alpha.get(i, j)).sum();
            assert!((col - 1.0).abs() < 1e-12);
        }
        assert!((trace.beta.unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((trace.gamma.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negation_applies_to_sim() {
        let mut rng = Rng::new(4);
        let (td1, td2) = (random(3, 4, &mut rng), random(2, 4, &mut rng));
        let (_, trace) = modified_aoa(&td1, &td2, AoaMode::Modified, true).unwrap();
        let cos = cosine_matrix(&td1, &td2).unwrap();
        for (a, b) in trace.sim.data().iter().zip(cos.data()) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn width_mismatch_rejected() {
        let err = modified_aoa(
            &Tensor::zeros(&[2, 3]),
            &Tensor::zeros(&[2, 4]),
            AoaMode::Modified,
            false,
        );
        assert!(err.is_err());
    }
}
