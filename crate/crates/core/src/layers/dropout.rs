use rand::Rng;

use super::{LayerError, Mode, Result};
use crate::tensor::{Scalar, Tensor};

/// Inverted dropout. Returns the output and the per-element multiplier
/// (`0` or `1/(1-rate)`), which is also the backward mask. Eval mode and
/// `rate == 0` return `None` for the mask and leave `x` untouched.
pub fn dropout<T: Scalar, R: Rng>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(LayerError::InvalidDropout(rate));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Some(mask)))
}
