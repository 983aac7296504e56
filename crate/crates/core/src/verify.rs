//! Gradient-oracle suite: every loss, composed through the full model,
//! checked against central finite differences in double precision.
//!
//! Inputs sitting within epsilon of a relu/hinge kink or a polarity-gate
//! boundary are resampled (the losses are not differentiable there), so a
//! failure here always means a wrong gradient, not an unlucky draw.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::losses::{LossConfig, MetricVariant, PolarityLabel};
use crate::model::{init_model, ModelDims, ModelParams};
use crate::numgrad::{check_gradients, NodeId, ParamStore, Tape};
use crate::training::{batch_objective, Ablation, ObjectiveNodes, PairExample};

/// Distance to the nearest non-differentiability below which an input draw
/// is rejected. Two orders of magnitude above the finite-difference epsilon.
const KINK_MARGIN: f64 = 1e-3;

/// Smallest cosine-input norm accepted; below this the cosine gradient is
/// ill-conditioned and finite differences lose accuracy. A fully dead relu
/// layer (possible with zero-initialized biases) even produces an exactly
/// zero code, which the kernel rejects outright.
const NORM_FLOOR: f64 = 1e-2;

/// Absolute agreement below which a relative-error excess is attributed to
/// finite-difference rounding noise rather than a wrong gradient. Central
/// differences at eps = 1e-5 carry rounding noise around 1e-11, which the
/// 1e-8 denominator floor can amplify past the tolerance on coordinates
/// whose true gradient nearly cancels.
const FD_NOISE_FLOOR: f64 = 1e-10;

/// Finite-difference step for the oracle.
pub const GRADCHECK_EPS: f64 = 1e-5;

/// Pass threshold on the max relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Worst relative error observed for one loss across all checked seeds.
#[derive(Debug, Clone)]
pub struct LossGradCheck {
    pub loss: &'static str,
    pub max_relative_error: f64,
}

/// The losses the suite registers, paired with the objective component that
/// isolates each.
const REGISTERED_LOSSES: [&str; 7] = [
    "reconstruction",
    "contrastive_metric",
    "discrimination",
    "intermodal",
    "fusion",
    "batch_metric",
    "ppml",
];

fn component(obj: &ObjectiveNodes<f64>, loss: &str) -> NodeId {
    match loss {
        "reconstruction" => obj.reconstruction,
        "contrastive_metric" | "batch_metric" | "ppml" => obj.content_metric,
        "discrimination" => obj.discrimination,
        "intermodal" => obj.intermodal,
        "fusion" => obj.fusion,
        other => unreachable!("unregistered loss {other}"),
    }
}

fn variant_for(loss: &str) -> MetricVariant {
    match loss {
        "batch_metric" => MetricVariant::BatchMetric,
        "ppml" => MetricVariant::Ppml,
        _ => MetricVariant::Contrastive,
    }
}

/// Small dims keep the coordinate count low; every width is <= 16.
fn check_dims() -> ModelDims {
    ModelDims {
        video_content_dim: 6,
        music_content_dim: 5,
        video_emotion_dim: 4,
        music_emotion_dim: 4,
        content_code_dim: 4,
        emotion_code_dim: 3,
        content_hidden_dim: 6,
        emotion_hidden_dim: 5,
        fused_dim: 5,
        num_emotion_classes: 3,
    }
}

fn random_items(dims: &ModelDims, n: usize, rng: &mut StdRng) -> Vec<PairExample<f64>> {
    let draw = |rng: &mut StdRng, len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    (0..n)
        .map(|_| PairExample {
            v_content: draw(rng, dims.video_content_dim),
            v_emotion: draw(rng, dims.video_emotion_dim),
            m_content: draw(rng, dims.music_content_dim),
            m_emotion: draw(rng, dims.music_emotion_dim),
            class_v: rng.random_range(0..dims.num_emotion_classes),
            class_m: rng.random_range(0..dims.num_emotion_classes),
            polarity: PolarityLabel::from_index(rng.random_range(0..3u8)).expect("valid index"),
        })
        .collect()
}

fn build(
    model: &ModelParams<f64>,
    store: &ParamStore<f64>,
    items: &[PairExample<f64>],
    cfg: &LossConfig,
) -> Result<(Tape<f64>, ObjectiveNodes<f64>)> {
    let mut tape = Tape::new();
    let obj = batch_objective(model, store, &mut tape, items, cfg, Ablation::Interactive)?;
    Ok((tape, obj))
}

/// Central difference of one loss component along one parameter coordinate.
fn central_difference(
    model: &ModelParams<f64>,
    items: &[PairExample<f64>],
    cfg: &LossConfig,
    loss: &str,
    parameter: &str,
    index: usize,
    eps: f64,
) -> Result<f64> {
    let mut store = model.store().clone();
    let pid = store
        .ids()
        .find(|&id| store.name(id) == parameter)
        .ok_or_else(|| Error::Config(format!("no parameter named {parameter}")))?;
    let original = store.get(pid).value.values()[index];
    let eval = |theta: f64, store: &mut ParamStore<f64>| -> Result<f64> {
        store.get_mut(pid).value.values_mut()[index] = theta;
        let (tape, obj) = build(model, store, items, cfg)?;
        Ok(tape.scalar(component(&obj, loss)))
    };
    let f_plus = eval(original + eps, &mut store)?;
    let f_minus = eval(original - eps, &mut store)?;
    Ok((f_plus - f_minus) / (2.0 * eps))
}

/// True when every relu input and every polarity-gate gap sits clear of the
/// kink margin and no cosine input is near zero norm, so central
/// differences are valid.
fn clear_of_kinks(tape: &Tape<f64>, obj: &ObjectiveNodes<f64>) -> bool {
    if let Some(min) = tape.min_relu_input_magnitude() {
        if min < KINK_MARGIN {
            return false;
        }
    }
    if let Some(gap) = obj.min_gate_gap {
        if gap < KINK_MARGIN {
            return false;
        }
    }
    if let Some(norm) = tape.min_cosine_input_norm() {
        if norm < NORM_FLOOR {
            return false;
        }
    }
    true
}

/// Runs the full gradient-oracle suite: for `num_seeds` seeds starting at
/// `base_seed`, checks every registered loss through the full model and
/// reports each loss's worst relative error.
pub fn gradcheck_losses(base_seed: u64, num_seeds: usize, eps: f64) -> Result<Vec<LossGradCheck>> {
    if num_seeds < 1 {
        return Err(Error::Config(
            "gradcheck needs at least one seed".to_string(),
        ));
    }
    let dims = check_dims();
    let batch = 3;
    let mut worst: Vec<f64> = vec![0.0; REGISTERED_LOSSES.len()];

    for si in 0..num_seeds {
        for (li, loss) in REGISTERED_LOSSES.iter().enumerate() {
            let cfg = LossConfig {
                metric_variant: variant_for(loss),
                ..LossConfig::default()
            };

            // Resample until the draw sits clear of every kink.
            let mut attempt = 0u64;
            let result = loop {
                let seed = base_seed
                    .wrapping_add(si as u64)
                    .wrapping_add(attempt.wrapping_mul(7919));
                let mut rng = StdRng::seed_from_u64(seed.wrapping_add(li as u64 * 104_729));
                let model = init_model::<f64>(dims, seed)?;
                let items = random_items(&dims, batch, &mut rng);

                // A draw can be rejected two ways: a degenerate (zero-norm)
                // code, or values sitting on a kink/gate boundary.
                let probe = build(&model, model.store(), &items, &cfg);
                let usable = match &probe {
                    Ok((tape, obj)) => clear_of_kinks(tape, obj),
                    Err(Error::DegenerateInput(_)) => false,
                    Err(_) => {
                        probe?;
                        unreachable!()
                    }
                };
                if !usable {
                    attempt += 1;
                    if attempt > 200 {
                        return Err(Error::Numeric(format!(
                            "could not draw kink-free inputs for {loss} near seed {seed}"
                        )));
                    }
                    continue;
                }

                let mut store = model.store().clone();
                let check = check_gradients(&mut store, eps, |store| {
                    let (tape, obj) = build(&model, store, &items, &cfg)?;
                    Ok((tape, component(&obj, loss)))
                })?;
                if check.max_relative_error > GRADCHECK_TOLERANCE {
                    if let Some(w) = &check.worst_coordinate {
                        let d1 = (w.analytic - w.numeric).abs();
                        // Rounding-noise-limited coordinate.
                        let mut oracle_limited = d1 <= FD_NOISE_FLOOR;
                        if !oracle_limited {
                            // Richardson probe: halving eps shrinks a pure
                            // truncation error fourfold, while a genuinely
                            // wrong analytic gradient leaves a discrepancy
                            // that does not shrink with eps.
                            let n_half = central_difference(
                                &model,
                                &items,
                                &cfg,
                                loss,
                                &w.parameter,
                                w.index,
                                eps / 2.0,
                            )?;
                            let d2 = (w.analytic - n_half).abs();
                            oracle_limited = d2 <= d1 / 2.0;
                        }
                        if oracle_limited {
                            attempt += 1;
                            if attempt > 200 {
                                return Err(Error::Numeric(format!(
                                    "could not draw a noise-free check for {loss} near seed {seed}"
                                )));
                            }
                            continue;
                        }
                    }
                }
                break check;
            };
            if result.max_relative_error > worst[li] {
                worst[li] = result.max_relative_error;
            }
        }
    }

    Ok(REGISTERED_LOSSES
        .iter()
        .zip(worst)
        .map(|(loss, max_relative_error)| LossGradCheck {
            loss,
            max_relative_error,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_a_few_seeds() {
        let results = gradcheck_losses(11, 3, GRADCHECK_EPS).unwrap();
        assert_eq!(results.len(), 7);
        for r in &results {
            assert!(
                r.max_relative_error <= GRADCHECK_TOLERANCE,
                "{} exceeded tolerance: {}",
                r.loss,
                r.max_relative_error
            );
        }
    }
}
