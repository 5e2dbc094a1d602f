use super::{Result, Scalar, Tensor, TensorError};

/// How the height/width border of a cube is filled before convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PaddingMode {
    /// Wrap around toroidally.
    Circular,
    /// Fill with 0.0.
    Zero,
}

/// Row-major refill of a `d`-vector into a `d1 x d2` matrix.
pub fn reshape_2d<T: Scalar>(v: &[T], d1: usize, d2: usize) -> Result<Tensor<T>> {
    if d1 * d2 != v.len() {
        return Err(TensorError::DimensionMismatch(format!(
            "cannot reshape vector of length {} into {d1}x{d2}",
            v.len()
        )));
    }
    Tensor::new(vec![d1, d2], v.to_vec())
}

fn cube_dims<T: Scalar>(cube: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *cube.shape() {
        [h, w, d] => Ok((h, w, d)),
        _ => Err(TensorError::DimensionMismatch(format!(
            "expected a HxWxD cube, got shape {:?}",
            cube.shape()
        ))),
    }
}

/// Pads height and width by `p` on each side; depth is never padded.
pub fn pad_hw<T: Scalar>(cube: &Tensor<T>, p: usize, mode: PaddingMode) -> Result<Tensor<T>> {
    let (h, w, d) = cube_dims(cube)?;
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let src = cube.data();
    let mut out = vec![T::zero(); ph * pw * d];
    for i in 0..ph {
        for j in 0..pw {
            let source = match mode {
                PaddingMode::Circular => Some(((i + h * p - p) % h, (j + w * p - p) % w)),
                PaddingMode::Zero => {
                    if i >= p && i < h + p && j >= p && j < w + p {
                        Some((i - p, j - p))
                    } else {
                        None
                    }
                }
            };
            if let Some((si, sj)) = source {
                let dst = (i * pw + j) * d;
                let s = (si * w + sj) * d;
                out[dst..dst + d].copy_from_slice(&src[s..s + d]);
            }
        }
    }
    Tensor::new(vec![ph, pw, d], out)
}

/// `out[i][j][z] = cube[(i - p) mod H][(j - p) mod W][z]`.
pub fn circular_pad_hw<T: Scalar>(cube: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    pad_hw(cube, p, PaddingMode::Circular)
}

pub fn zero_pad_hw<T: Scalar>(cube: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    pad_hw(cube, p, PaddingMode::Zero)
}

/// Adjoint of [`pad_hw`]: folds the gradient of the padded cube back onto the
/// `h x w x d` source. Circular padding accumulates every wrapped copy.
pub fn pad_hw_backward<T: Scalar>(
    grad_padded: &Tensor<T>,
    source_shape: &[usize],
    p: usize,
    mode: PaddingMode,
) -> Result<Tensor<T>> {
    let [h, w, d] = *source_shape else {
        return Err(TensorError::DimensionMismatch(format!(
            "expected a rank-3 source shape, got {source_shape:?}"
        )));
    };
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    if grad_padded.shape() != [ph, pw, d] {
        return Err(TensorError::DimensionMismatch(format!(
            "padded gradient {:?} does not match source {source_shape:?} with pad {p}",
            grad_padded.shape()
        )));
    }
    let g = grad_padded.data();
    let mut out = vec![T::zero(); h * w * d];
    for i in 0..ph {
        for j in 0..pw {
            let source = match mode {
                PaddingMode::Circular => Some(((i + h * p - p) % h, (j + w * p - p) % w)),
                PaddingMode::Zero => (i >= p && i < h + p && j >= p && j < w + p)
                    .then(|| (i - p, j - p)),
            };
            if let Some((si, sj)) = source {
                let s = (i * pw + j) * d;
                let dst = (si * w + sj) * d;
                for z in 0..d {
                    out[dst + z] += g[s + z];
                }
            }
        }
    }
    Tensor::new(source_shape.to_vec(), out)
}
