//! Central finite-difference gradient oracle.
//!
//! The checker is the independent verification route for every analytic
//! gradient in this crate: it never inspects the tape's backward pass, only
//! re-evaluates the scalar function at perturbed parameter values.

use crate::error::{Error, Result};
use crate::numgrad::tape::{NodeId, Tape};
use crate::numgrad::tensor::ParamStore;

/// Outcome of a gradient check over a parameter store.
#[derive(Debug, Clone)]
pub struct GradCheckResult {
    /// Maximum relative error over every parameter coordinate.
    pub max_relative_error: f64,
    /// Worst relative error per parameter, in store order.
    pub per_parameter_errors: Vec<(String, f64)>,
    /// The coordinate behind `max_relative_error`, for diagnostics.
    pub worst_coordinate: Option<WorstCoordinate>,
}

/// The single coordinate with the largest relative error.
#[derive(Debug, Clone)]
pub struct WorstCoordinate {
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares analytic gradients against central finite differences
/// `(f(p + eps) - f(p - eps)) / (2 eps)` for every coordinate of every
/// parameter in `store`.
///
/// `build_loss` must deterministically rebuild the scalar computation from
/// the store's current values; it is invoked once for the analytic pass and
/// twice per coordinate for the numeric one. Relative error per coordinate
/// is `|a - n| / max(|a|, |n|, 1e-8)`; the floor avoids 0/0 on coordinates
/// dead relu units zeroed out.
pub fn check_gradients<F>(
    store: &mut ParamStore<f64>,
    eps: f64,
    mut build_loss: F,
) -> Result<GradCheckResult>
where
    F: FnMut(&ParamStore<f64>) -> Result<(Tape<f64>, NodeId)>,
{
    if eps <= 0.0 {
        return Err(Error::Config(format!("eps must be > 0, got {eps}")));
    }

    // Analytic pass.
    store.zero_grads();
    let (tape, loss) = build_loss(store)?;
    let grads = tape.backward(loss)?;
    tape.accumulate_param_grads(&grads, store)?;
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| store.get(id).grad.values().to_vec())
        .collect();

    // Numeric pass, one coordinate at a time.
    let mut per_parameter_errors = Vec::with_capacity(store.len());
    let mut max_relative_error = 0.0_f64;
    let mut worst_coordinate = None;
    let ids: Vec<_> = store.ids().collect();
    for (pi, &pid) in ids.iter().enumerate() {
        let name = store.name(pid).to_string();
        let coords = store.get(pid).value.values().len();
        let mut worst = 0.0_f64;
        for (ci, &a) in analytic[pi].iter().enumerate().take(coords) {
            let original = store.get(pid).value.values()[ci];

            store.get_mut(pid).value.values_mut()[ci] = original + eps;
            let f_plus = eval_scalar(store, &mut build_loss)?;
            store.get_mut(pid).value.values_mut()[ci] = original - eps;
            let f_minus = eval_scalar(store, &mut build_loss)?;
            store.get_mut(pid).value.values_mut()[ci] = original;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for parameter {name} coordinate {ci}: \
                     analytic {a}, numeric {numeric}"
                )));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
            if rel > max_relative_error {
                max_relative_error = rel;
                worst_coordinate = Some(WorstCoordinate {
                    parameter: name.clone(),
                    index: ci,
                    analytic: a,
                    numeric,
                });
            }
        }
        per_parameter_errors.push((name, worst));
    }

    Ok(GradCheckResult {
        max_relative_error,
        per_parameter_errors,
        worst_coordinate,
    })
}

fn eval_scalar<F>(store: &ParamStore<f64>, build_loss: &mut F) -> Result<f64>
where
    F: FnMut(&ParamStore<f64>) -> Result<(Tape<f64>, NodeId)>,
{
    let (tape, loss) = build_loss(store)?;
    Ok(tape.scalar(loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numgrad::tensor::Tensor2;

    #[test]
    fn quadratic_gradient_matches_exactly() {
        // f(theta) = sum theta_i^2; analytic gradient 2*theta.
        let mut store = ParamStore::new();
        let pid = store
            .insert(
                "theta",
                Tensor2::from_vec(1, 4, vec![0.3, -1.2, 2.5, 0.01]).unwrap(),
            )
            .unwrap();
        let result = check_gradients(&mut store, 1e-5, |store| {
            let mut tape = Tape::new();
            let t = tape.param(store, pid)?;
            let sq = tape.square(t)?;
            // Sum the squares by multiplying with a ones column.
            let ones = tape.leaf(Tensor2::from_vec(4, 1, vec![1.0; 4]).unwrap())?;
            let loss = tape.matmul(sq, ones)?;
            Ok((tape, loss))
        })
        .unwrap();
        assert!(
            result.max_relative_error <= 1e-6,
            "max rel err {}",
            result.max_relative_error
        );
        // Invariant: the overall max equals the max of the per-parameter list.
        let listed_max = result
            .per_parameter_errors
            .iter()
            .map(|(_, e)| *e)
            .fold(0.0_f64, f64::max);
        assert_eq!(result.max_relative_error, listed_max);
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let mut store = ParamStore::<f64>::new();
        let err = check_gradients(&mut store, 0.0, |_| unreachable!()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
