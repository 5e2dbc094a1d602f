use super::{Result, Scalar, Tensor, TensorError};

pub struct AffineGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check<T: Scalar>(input: &[T], weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize)> {
    let [out, m] = *weight.shape() else {
        return Err(TensorError::DimensionMismatch(format!(
            "affine weight must be rank 2, got {:?}",
            weight.shape()
        )));
    };
    if m != input.len() || bias.len() != out {
        return Err(TensorError::DimensionMismatch(format!(
            "affine weight {:?} with input {} and bias {}",
            weight.shape(),
            input.len(),
            bias.len()
        )));
    }
    Ok((out, m))
}

/// `weight · input + bias` for a single input vector.
pub fn affine<T: Scalar>(input: &[T], weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (out, _) = check(input, weight, bias)?;
    let y = (0..out)
        .map(|r| {
            weight
                .row(r)
                .iter()
                .zip(input)
                .fold(bias.data()[r], |acc, (&w, &x)| acc + w * x)
        })
        .collect();
    Ok(Tensor::vector(y))
}

pub fn affine_backward<T: Scalar>(
    input: &[T],
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    upstream: &[T],
) -> Result<AffineGrads<T>> {
    let (out, m) = check(input, weight, bias)?;
    if upstream.len() != out {
        return Err(TensorError::DimensionMismatch(format!(
            "upstream length {} for affine output {out}",
            upstream.len()
        )));
    }
    let mut gx = vec![T::zero(); m];
    let mut gw = Tensor::zeros(weight.shape());
    for (r, &u) in upstream.iter().enumerate() {
        for ((gxi, gwi), (&w, &x)) in gx
            .iter_mut()
            .zip(gw.row_mut(r))
            .zip(weight.row(r).iter().zip(input))
        {
            *gxi += u * w;
            *gwi = u * x;
        }
    }
    Ok(AffineGrads {
        input: Tensor::vector(gx),
        weight: gw,
        bias: Tensor::vector(upstream.to_vec()),
    })
}
