//! 1-N scoring against the full entity table.

use super::{names, Model, ModelError, ParamStore, Result};
use crate::tensor::{Scalar, Tensor, TensorError};

pub struct ScoredEntities<T> {
    pub logits: Vec<T>,
    pub probabilities: Vec<T>,
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(super) fn logits<T: Scalar>(model: &Model<T>, v_out: &Tensor<T>) -> Tensor<T> {
    let table = model.params.expect(names::ENTITY);
    let bias = model.params.expect(names::ENTITY_BIAS).data();
    let ne = model.num_entities;
    let n = v_out.shape()[0];
    let mut out = Vec::with_capacity(n * ne);
    for b in 0..n {
        let v = v_out.row(b);
        for (e, &be) in bias.iter().enumerate() {
            let dot = table.row(e).iter().zip(v).fold(T::zero(), |acc, (&w, &x)| acc + w * x);
            out.push(dot + be);
        }
    }
    Tensor::new(vec![n, ne], out).expect("logit shape")
}

/// Accumulates entity-table and bias gradients; returns `d loss / d v_out`.
pub(super) fn logits_backward<T: Scalar>(
    model: &Model<T>,
    v_out: &Tensor<T>,
    grad_logits: &Tensor<T>,
    grads: &mut ParamStore<T>,
) -> Result<Tensor<T>> {
    let ne = model.num_entities;
    let d = model.config.dim;
    let n = v_out.shape()[0];
    if grad_logits.shape() != [n, ne] {
        return Err(ModelError::Tensor(TensorError::DimensionMismatch(format!(
            "logit gradient {:?}, expected [{n}, {ne}]",
            grad_logits.shape()
        ))));
    }
    let table = model.params.expect(names::ENTITY);
    let mut g_vout = Tensor::zeros(&[n, d]);
    for b in 0..n {
        let gl = grad_logits.row(b);
        let v = v_out.row(b).to_vec();
        {
            let g_bias = grads.expect_mut(names::ENTITY_BIAS).data_mut();
            for (gb, &g) in g_bias.iter_mut().zip(gl) {
                *gb += g;
            }
        }
        let g_table = grads.expect_mut(names::ENTITY);
        let gv = g_vout.row_mut(b);
        for (e, &g) in gl.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            for ((gt, gvi), (&w, &x)) in g_table
                .row_mut(e)
                .iter_mut()
                .zip(gv.iter_mut())
                .zip(table.row(e).iter().zip(&v))
            {
                *gt += g * x;
                *gvi += g * w;
            }
        }
    }
    Ok(g_vout)
}

pub(super) fn score_all_entities<T: Scalar>(model: &Model<T>, v_out: &[T]) -> Result<ScoredEntities<T>> {
    if v_out.len() != model.config.dim {
        return Err(ModelError::Tensor(TensorError::DimensionMismatch(format!(
            "output vector of length {}, model dim {}",
            v_out.len(),
            model.config.dim
        ))));
    }
    let v = Tensor::new(vec![1, v_out.len()], v_out.to_vec())?;
    let logits = logits(model, &v).into_data();
    let probabilities = softmax(&logits);
    Ok(ScoredEntities { logits, probabilities })
}
