//! Adam optimiser with bias correction.

use crate::error::{Error, Result};
use crate::nn::{Gradients, Model};
use crate::tensor::{Scalar, Tensor};

/// Optimiser state: step count plus first/second moment tensors per parameter.
#[derive(Clone, Debug)]
pub struct AdamState<S: Scalar = f32> {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: Vec<(String, Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> AdamState<S> {
    /// Zero-initialised moments matching the model's trainable parameters.
    pub fn new(model: &Model<S>, learning_rate: f64) -> Self {
        let moments = model
            .trainable()
            .iter()
            .map(|(name, t)| {
                (
                    name.clone(),
                    Tensor::zeros(t.shape().to_vec()),
                    Tensor::zeros(t.shape().to_vec()),
                )
            })
            .collect();
        AdamState {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            moments,
        }
    }
}

/// One Adam update over every trainable parameter. Gradients must be keyed
/// identically to the model's trainable parameters.
pub fn adam_step<S: Scalar>(
    state: &mut AdamState<S>,
    model: &mut Model<S>,
    grads: &Gradients<S>,
) -> Result<()> {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    let lr = state.learning_rate;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);

    for ((name, param), (mname, m, v)) in model
        .trainable_mut()
        .into_iter()
        .zip(state.moments.iter_mut())
    {
        debug_assert_eq!(&name, mname);
        let grad = grads
            .get(&name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing gradient for {name}")))?;
        if grad.shape() != param.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient {name} shape {:?} vs parameter {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        let pd = param.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        let gd = grad.data();
        for i in 0..pd.len() {
            let g = gd[i].as_f64();
            let mi = b1 * md[i].as_f64() + (1.0 - b1) * g;
            let vi = b2 * vd[i].as_f64() + (1.0 - b2) * g * g;
            md[i] = S::from_f64(mi);
            vd[i] = S::from_f64(vi);
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            pd[i] = S::from_f64(pd[i].as_f64() - lr * m_hat / (v_hat.sqrt() + eps));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_model, Arch, Mode, ModelRegs};
    use crate::rng::StreamRng;
    use crate::tensor::Tensor;

    fn grads_like(model: &Model<f64>, value: f64) -> Gradients<f64> {
        let entries = model
            .trainable()
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::filled(t.shape().to_vec(), value)))
            .collect::<Vec<_>>();
        Gradients::from_entries(entries)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut model: Model<f64> = build_model(Arch::Mlp1, 10, ModelRegs::default(), 3).unwrap();
        let before: Vec<f64> = model
            .trainable()
            .iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect();
        let mut state = AdamState::new(&model, 0.1);
        let grads = grads_like(&model, 0.0);
        adam_step(&mut state, &mut model, &grads).unwrap();
        let after: Vec<f64> = model
            .trainable()
            .iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect();
        assert_eq!(before, after);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // Bias-corrected first step: m_hat = g, v_hat = g^2, so the update is
        // exactly -lr * g / (|g| + eps) = -lr for g = 1.
        let mut model: Model<f64> = build_model(Arch::Mlp1, 10, ModelRegs::default(), 3).unwrap();
        let first_before = model.trainable()[0].1.data()[0];
        let mut state = AdamState::new(&model, 0.1);
        let grads = grads_like(&model, 1.0);
        adam_step(&mut state, &mut model, &grads).unwrap();
        let first_after = model.trainable()[0].1.data()[0];
        assert!((first_after - (first_before - 0.1)).abs() < 1e-8);
    }

    #[test]
    fn identical_seeds_stay_bit_identical_over_100_steps() {
        let make = || -> (Model<f32>, AdamState<f32>) {
            let model = build_model(Arch::Mlp1, 10, ModelRegs::default(), 42).unwrap();
            let state = AdamState::new(&model, 3e-4);
            (model, state)
        };
        let (mut m1, mut s1) = make();
        let (mut m2, mut s2) = make();
        m1.set_mode(Mode::Train);
        m2.set_mode(Mode::Train);
        let batch = Tensor::from_fn(vec![8, 28, 28, 1], |i| ((i * 29 % 256) as f32) / 255.0);
        let labels: Vec<usize> = (0..8).map(|i| i % 10).collect();
        for step in 0..100 {
            for (model, state) in [(&mut m1, &mut s1), (&mut m2, &mut s2)] {
                let mut rng = StreamRng::stream(7, "dropout", &[step]);
                let (_, tape) = model.forward_train(&batch, &mut rng, true).unwrap();
                let grads = model.backward(&tape, &labels).unwrap();
                adam_step(state, model, &grads).unwrap();
            }
        }
        for ((_, a), (_, b)) in m1.trainable().iter().zip(m2.trainable().iter()) {
            assert_eq!(a.data(), b.data());
        }
    }
}
