//! Finite-difference verification of a whole model's backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelError, Result};
use crate::layers::{MaskedTuple, Mode};
use crate::tensor::{finite_diff_check, Tensor};

/// Mean softmax cross-entropy of a training-mode forward whose dropout masks
/// come from `seed`, and the `[batch, |E|]` gradient with respect to the logits.
pub fn batch_loss(model: &Model<f64>, batch: &[MaskedTuple], seed: u64) -> Result<(f64, Tensor<f64>, Tensor<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = model.forward(batch, Mode::Train, &mut rng)?;
    let logits = model.logits(&out.v_out);
    let n = batch.len();
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (b, m) in batch.iter().enumerate() {
        let row = logits.row(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += (log_z - row[m.target]) / n as f64;
        grad.extend(row.iter().enumerate().map(|(e, &v)| {
            ((v - log_z).exp() - if e == m.target { 1.0 } else { 0.0 }) / n as f64
        }));
    }
    let grad = Tensor::new(logits.shape().to_vec(), grad)?;
    Ok((loss, grad, out.v_out))
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter coordinate, with the name of the worst tensor.
pub fn max_gradient_error(model: &Model<f64>, batch: &[MaskedTuple], seed: u64, epsilon: f64) -> Result<(f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = model.forward(batch, Mode::Train, &mut rng)?;
    let (_, grad_logits, _) = batch_loss(model, batch, seed)?;
    let grads = model.backward(&out, &grad_logits)?;

    let mut probe = model.clone();
    let mut worst = (0.0, String::new());
    for (name, point) in model.params().iter() {
        let analytic = grads.expect(name);
        let err = finite_diff_check(
            |t| {
                *probe.params_mut().expect_mut(name) = t.clone();
                batch_loss(&probe, batch, seed).map(|r| r.0).unwrap_or(f64::NAN)
            },
            point,
            analytic,
            epsilon,
        )
        .map_err(ModelError::from)?;
        *probe.params_mut().expect_mut(name) = point.clone();
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, name.to_owned());
        }
    }
    Ok(worst)
}
