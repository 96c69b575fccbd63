use super::{Tensor, TensorError};

/// Outcome of a central-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over entries of `|autodiff - numeric| / max(1, |numeric|)`
    pub max_rel_error: f64,
    /// `(tensor index, flat element index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compare the analytic gradient returned by `f` with central differences.
///
/// `f` maps a parameter list to `(value, gradient per parameter)`. It is
/// evaluated twice at the unperturbed point first; any difference between
/// the two evaluations (e.g. active dropout) rejects the check.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &[Tensor],
    step: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&[Tensor]) -> Result<(f64, Vec<Tensor>), TensorError>,
{
    let (v1, analytic) = f(params)?;
    let (v2, again) = f(params)?;
    if v1.to_bits() != v2.to_bits() || analytic != again {
        return Err(TensorError::NonDeterministic);
    }
    if analytic.len() != params.len() {
        return Err(TensorError::invalid(
            "finite_diff_check",
            format!(
                "{} gradients for {} parameters",
                analytic.len(),
                params.len()
            ),
        ));
    }

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (p, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[p].shape() {
            return Err(TensorError::ShapeMismatch {
                op: "finite_diff_check",
                lhs: params[p].shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        for k in 0..params[p].len() {
            let original = work[p].data()[k];
            work[p].data_mut()[k] = original + step;
            let plus = f(&work)?.0;
            work[p].data_mut()[k] = original - step;
            let minus = f(&work)?.0;
            work[p].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let err = (grad.data()[k] - numeric).abs() / numeric.abs().max(1.0);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (p, k);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Rng, Tape};

    fn square(params: &[Tensor]) -> Result<(f64, Vec<Tensor>), TensorError> {
        let mut tape = Tape::new();
        let x = tape.param(&params[0]);
        let y = tape.sum_squares(x);
        let grads = tape.backward(y)?;
        Ok((tape.value(y).item(), vec![grads.wrt(x)]))
    }

    #[test]
    fn quadratic_is_exact() {
        let report = finite_diff_check(square, &[Tensor::scalar(3.0)], 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-10, "{report:?}");
        assert_eq!(report.checked, 1);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let f = |params: &[Tensor]| {
            let mut tape = Tape::new();
            let x = tape.param(&params[0]);
            let k = tape.constant(Tensor::scalar(5.0));
            let grads = tape.backward(k)?;
            Ok((tape.value(k).item(), vec![grads.wrt(x)]))
        };
        let x = Tensor::row(vec![1.0, 2.0]);
        let (_, grads) = f(std::slice::from_ref(&x)).unwrap();
        assert_eq!(grads[0].data(), &[0.0, 0.0]);
        assert_eq!(finite_diff_check(f, &[x], 1e-5).unwrap().max_rel_error, 0.0);
    }

    #[test]
    fn rejects_nondeterministic_function() {
        let mut rng = Rng::new(3);
        let f = |params: &[Tensor]| {
            let noise = rng.next_f64();
            let (v, g) = square(params)?;
            Ok((v + noise, g))
        };
        let err = finite_diff_check(f, &[Tensor::scalar(1.0)], 1e-5).unwrap_err();
        assert_eq!(err, TensorError::NonDeterministic);
    }
}
