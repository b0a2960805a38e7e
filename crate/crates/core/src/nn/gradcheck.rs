//! Autodiff verification against central finite differences.

use crate::error::Result;
use crate::nn::{cross_entropy, Gradients, Mode, Model};
use crate::rng::StreamRng;
use crate::tensor::{Scalar, Tensor};

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compare autodiff gradients with central finite differences on a random
/// subsample of parameter entries.
///
/// The loss is evaluated with a fixed dropout stream and without running-stat
/// updates, so every evaluation sees the same stochastic masks and the loss is
/// a pure function of the parameters. Intended for small models at f64.
pub fn gradient_check<S: Scalar>(
    model: &mut Model<S>,
    batch: &Tensor<S>,
    labels: &[usize],
    samples_per_param: usize,
    tolerance: f64,
    seed: u64,
    step: f64,
) -> Result<GradCheckReport> {
    let grads = autodiff_grads(model, batch, labels, seed)?;
    gradient_check_against(
        model, batch, labels, &grads, samples_per_param, tolerance, seed, step,
    )
}

/// Check a caller-supplied gradient map against finite differences. Exposed so
/// a deliberately corrupted gradient can be shown to fail.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check_against<S: Scalar>(
    model: &mut Model<S>,
    batch: &Tensor<S>,
    labels: &[usize],
    grads: &Gradients<S>,
    samples_per_param: usize,
    tolerance: f64,
    seed: u64,
    step: f64,
) -> Result<GradCheckReport> {
    let h = step;
    let mut pick = StreamRng::stream(seed, "gradcheck-pick", &[]);
    let mut max_rel_err = 0.0f64;
    let mut worst_param = String::new();
    let mut checked = 0usize;

    // Central differences of a loss L carry rounding noise of roughly
    // ulp(L)/(2h). Gradients that are exactly zero in exact arithmetic (a
    // dense bias feeding a batchnorm, say) would otherwise divide that noise
    // by the tiny default floor and report a spurious error.
    let center = perturbed_loss(model, batch, labels, "", 0, 0.0, seed)?;
    let noise = 100.0 * f64::EPSILON * center.abs().max(1.0) / (2.0 * h);
    let floor = (noise / tolerance).max(1e-6);

    let names: Vec<String> = model.trainable().iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let len = model
            .trainable()
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.len())
            .unwrap();
        let n_samples = samples_per_param.min(len);
        let indices = pick.sample_indices(len, n_samples);
        for idx in indices {
            let analytic = grads.get(&name).expect("gradient present").data()[idx].as_f64();
            let plus = perturbed_loss(model, batch, labels, &name, idx, h, seed)?;
            let minus = perturbed_loss(model, batch, labels, &name, idx, -h, seed)?;
            let numeric = (plus - minus) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            let rel = (analytic - numeric).abs() / denom;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst_param = format!("{name}[{idx}]");
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst_param,
        checked,
        tolerance,
        pass: max_rel_err < tolerance,
    })
}

/// Train-mode autodiff gradients with the same fixed stochastic stream used by
/// the finite-difference evaluations.
pub fn autodiff_grads<S: Scalar>(
    model: &mut Model<S>,
    batch: &Tensor<S>,
    labels: &[usize],
    seed: u64,
) -> Result<Gradients<S>> {
    let prev = model.mode();
    model.set_mode(Mode::Train);
    let mut rng = StreamRng::stream(seed, "gradcheck-forward", &[]);
    let result = model
        .forward_train(batch, &mut rng, false)
        .and_then(|(_, tape)| model.backward(&tape, labels));
    model.set_mode(prev);
    result
}

fn perturbed_loss<S: Scalar>(
    model: &mut Model<S>,
    batch: &Tensor<S>,
    labels: &[usize],
    name: &str,
    idx: usize,
    delta: f64,
    seed: u64,
) -> Result<f64> {
    for (n, t) in model.trainable_mut() {
        if n == name {
            let old = t.data()[idx];
            t.data_mut()[idx] = S::from_f64(old.as_f64() + delta);
            break;
        }
    }
    let prev = model.mode();
    model.set_mode(Mode::Train);
    let mut rng = StreamRng::stream(seed, "gradcheck-forward", &[]);
    let loss = model
        .forward_train(batch, &mut rng, false)
        .and_then(|(probs, _)| cross_entropy(&probs, labels));
    model.set_mode(prev);
    // Restore the original value.
    for (n, t) in model.trainable_mut() {
        if n == name {
            let cur = t.data()[idx];
            t.data_mut()[idx] = S::from_f64(cur.as_f64() - delta);
            break;
        }
    }
    loss
}
