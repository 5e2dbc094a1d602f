//! Per-channel batch normalization over `[samples, channels, spatial]` tensors.

use super::{LayerError, Result};
use crate::tensor::{Scalar, Tensor, TensorError};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub struct BatchNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

fn dims<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [n, c, s] = *x.shape() else {
        return Err(TensorError::DimensionMismatch(format!(
            "batchnorm expects [samples, channels, spatial], got {:?}",
            x.shape()
        ))
        .into());
    };
    if gamma.len() != c || beta.len() != c {
        return Err(TensorError::DimensionMismatch(format!(
            "{c} channels but scale/shift have {}/{}",
            gamma.len(),
            beta.len()
        ))
        .into());
    }
    if n * s == 0 {
        return Err(LayerError::EmptyBatch);
    }
    Ok((n, c, s))
}

fn at(n: usize, c: usize, s: usize, nc: usize, ns: usize) -> usize {
    (n * nc + c) * ns + s
}

/// Normalizes with statistics of the current batch.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, s) = dims(x, gamma, beta)?;
    let count = T::from_usize(n * s).unwrap();
    let eps = T::from_f64_lossy(BN_EPSILON);
    let xd = x.data();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    let mut inv_std = Vec::with_capacity(c);
    let mut batch_mean = Vec::with_capacity(c);
    let mut batch_var = Vec::with_capacity(c);
    for ch in 0..c {
        let mut mean = T::zero();
        for b in 0..n {
            for p in 0..s {
                mean += xd[at(b, ch, p, c, s)];
            }
        }
        mean = mean / count;
        let mut var = T::zero();
        for b in 0..n {
            for p in 0..s {
                let dv = xd[at(b, ch, p, c, s)] - mean;
                var += dv * dv;
            }
        }
        var = var / count;
        let istd = T::one() / (var + eps).sqrt();
        let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
        for b in 0..n {
            for p in 0..s {
                let i = at(b, ch, p, c, s);
                xhat[i] = (xd[i] - mean) * istd;
                out[i] = g * xhat[i] + bt;
            }
        }
        inv_std.push(istd);
        batch_mean.push(mean);
        batch_var.push(var);
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        BatchNormCache {
            xhat: Tensor::new(shape, xhat)?,
            inv_std,
            batch_mean,
            batch_var,
        },
    ))
}

/// Normalizes with running statistics.
pub fn batchnorm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, s) = dims(x, gamma, beta)?;
    let eps = T::from_f64_lossy(BN_EPSILON);
    let mut out = x.clone();
    let od = out.data_mut();
    for ch in 0..c {
        let istd = T::one() / (running_var.data()[ch] + eps).sqrt();
        let (m, g, bt) = (running_mean.data()[ch], gamma.data()[ch], beta.data()[ch]);
        for b in 0..n {
            for p in 0..s {
                let i = at(b, ch, p, c, s);
                od[i] = g * (od[i] - m) * istd + bt;
            }
        }
    }
    Ok(out)
}

pub fn batchnorm_backward<T: Scalar>(
    upstream: &Tensor<T>,
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let [n, c, s] = *cache.xhat.shape() else {
        unreachable!("cache built from a rank-3 input");
    };
    if upstream.shape() != cache.xhat.shape() {
        return Err(TensorError::DimensionMismatch(format!(
            "upstream {:?} vs cached {:?}",
            upstream.shape(),
            cache.xhat.shape()
        ))
        .into());
    }
    let count = T::from_usize(n * s).unwrap();
    let up = upstream.data();
    let xh = cache.xhat.data();
    let mut dx = vec![T::zero(); up.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
        for b in 0..n {
            for p in 0..s {
                let i = at(b, ch, p, c, s);
                sum_g += up[i];
                sum_gx += up[i] * xh[i];
            }
        }
        dbeta[ch] = sum_g;
        dgamma[ch] = sum_gx;
        let scale = gamma.data()[ch] * cache.inv_std[ch] / count;
        for b in 0..n {
            for p in 0..s {
                let i = at(b, ch, p, c, s);
                dx[i] = scale * (count * up[i] - sum_g - xh[i] * sum_gx);
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(upstream.shape().to_vec(), dx)?,
        gamma: Tensor::vector(dgamma),
        beta: Tensor::vector(dbeta),
    })
}

/// Exponential moving average update; the variance uses the unbiased estimate.
pub fn update_running_stats<T: Scalar>(
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    cache: &BatchNormCache<T>,
) {
    let [n, _, s] = *cache.xhat.shape() else {
        unreachable!("cache built from a rank-3 input");
    };
    let m = n * s;
    let correction = if m > 1 {
        T::from_f64_lossy(m as f64 / (m - 1) as f64)
    } else {
        T::one()
    };
    let mom = T::from_f64_lossy(BN_MOMENTUM);
    let keep = T::one() - mom;
    for (r, &b) in running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
        *r = keep * *r + mom * b;
    }
    for (r, &b) in running_var.data_mut().iter_mut().zip(&cache.batch_var) {
        *r = keep * *r + mom * b * correction;
    }
}
