use super::{LayerError, Result};
use crate::tensor::{Scalar, Tensor};

fn table_dims<T: Scalar>(table: &Tensor<T>) -> (usize, usize) {
    match *table.shape() {
        [rows, dim] => (rows, dim),
        _ => panic!("embedding table must be rank 2, got {:?}", table.shape()),
    }
}

/// Gathers `ids.len()` rows of a `rows x d` table.
pub fn embed_lookup<T: Scalar>(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
    let (rows, dim) = table_dims(table);
    let mut out = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        if id >= rows {
            return Err(LayerError::IdOutOfRange { id, rows });
        }
        out.extend_from_slice(table.row(id));
    }
    Ok(Tensor::new(vec![ids.len(), dim], out)?)
}

/// Adds row `i` of `upstream` into row `ids[i]` of `grad`; repeated ids accumulate.
pub fn embed_scatter_add<T: Scalar>(grad: &mut Tensor<T>, ids: &[usize], upstream: &Tensor<T>) -> Result<()> {
    let (rows, dim) = table_dims(grad);
    if upstream.shape() != [ids.len(), dim] {
        return Err(LayerError::Tensor(crate::tensor::TensorError::DimensionMismatch(format!(
            "upstream {:?} for {} ids of dim {dim}",
            upstream.shape(),
            ids.len()
        ))));
    }
    for (i, &id) in ids.iter().enumerate() {
        if id >= rows {
            return Err(LayerError::IdOutOfRange { id, rows });
        }
        for (g, &u) in grad.row_mut(id).iter_mut().zip(upstream.row(i)) {
            *g += u;
        }
    }
    Ok(())
}
