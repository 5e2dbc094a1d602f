use super::{Result, Tensor, TensorError};

/// Largest `|analytic - numeric| / max(1, |numeric|)` over all coordinates,
/// with `numeric` the central difference `(f(x+eps) - f(x-eps)) / 2eps`.
pub fn finite_diff_check<F>(
    mut f: F,
    point: &Tensor<f64>,
    analytic: &Tensor<f64>,
    epsilon: f64,
) -> Result<f64>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    if analytic.shape() != point.shape() {
        return Err(TensorError::DimensionMismatch(format!(
            "analytic gradient {:?} vs point {:?}",
            analytic.shape(),
            point.shape()
        )));
    }
    let mut probe = point.clone();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let up = f(&probe);
        probe.data_mut()[i] = orig - epsilon;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(TensorError::NonFinite { coordinate: i });
        }
        let numeric = (up - down) / (2.0 * epsilon);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
