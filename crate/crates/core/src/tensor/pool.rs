use super::{Result, Scalar, Tensor, TensorError};

/// Max over groups of consecutive channels, with the winning channel recorded.
pub struct Pooled<T> {
    pub output: Tensor<T>,
    /// Input channel chosen for each output element, same layout as `output`.
    pub argmax: Vec<usize>,
}

/// Pools `n1 x h x w` maps with a `(window, 1, 1)` window down to `n1/window` maps.
/// Ties go to the lowest channel index.
pub fn maxpool_channels<T: Scalar>(maps: &Tensor<T>, window: usize) -> Result<Pooled<T>> {
    let [n1, h, w] = *maps.shape() else {
        return Err(TensorError::DimensionMismatch(format!(
            "pooling expects n1 x h x w maps, got {:?}",
            maps.shape()
        )));
    };
    if window == 0 || n1 % window != 0 {
        return Err(TensorError::NonDivisibleChannels { channels: n1, window });
    }
    let n2 = n1 / window;
    let plane = h * w;
    let x = maps.data();
    let mut out = vec![T::zero(); n2 * plane];
    let mut argmax = vec![0; n2 * plane];
    for c in 0..n2 {
        for s in 0..plane {
            let first = c * window;
            let mut best = x[first * plane + s];
            let mut best_ch = first;
            for ch in first + 1..first + window {
                let v = x[ch * plane + s];
                if v > best {
                    best = v;
                    best_ch = ch;
                }
            }
            out[c * plane + s] = best;
            argmax[c * plane + s] = best_ch;
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![n2, h, w], out)?,
        argmax,
    })
}

/// Routes each upstream element to the channel that won the forward max.
pub fn maxpool_channels_backward<T: Scalar>(
    upstream: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    let [_, h, w] = *input_shape else {
        return Err(TensorError::DimensionMismatch(format!(
            "pool input shape must be rank 3, got {input_shape:?}"
        )));
    };
    if upstream.len() != argmax.len() {
        return Err(TensorError::DimensionMismatch(format!(
            "upstream has {} elements but argmax record has {}",
            upstream.len(),
            argmax.len()
        )));
    }
    let plane = h * w;
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (idx, (&u, &ch)) in upstream.data().iter().zip(argmax).enumerate() {
        g[ch * plane + idx % plane] += u;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eight_channels_pool_to_two() {
        let maps = Tensor::<f32>::zeros(&[8, 3, 3]);
        let pooled = maxpool_channels(&maps, 4).unwrap();
        assert_eq!(pooled.output.shape(), &[2, 3, 3]);
    }

    #[test]
    fn ties_pick_lowest_channel() {
        let maps = Tensor::filled(&[4, 2, 2], 0.5f32);
        let pooled = maxpool_channels(&maps, 4).unwrap();
        assert!(pooled.output.data().iter().all(|&v| v == 0.5));
        assert!(pooled.argmax.iter().all(|&c| c == 0));
    }

    #[test]
    fn non_divisible_channels_rejected() {
        let maps = Tensor::<f32>::zeros(&[6, 2, 2]);
        assert!(matches!(
            maxpool_channels(&maps, 4),
            Err(TensorError::NonDivisibleChannels { .. })
        ));
    }

    #[test]
    fn matches_brute_force_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let maps = Tensor::from_fn(&[8, 3, 3], |_| rng.gen_range(-1.0f64..1.0));
        let pooled = maxpool_channels(&maps, 4).unwrap();
        for c in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    let brute = (0..4)
                        .map(|q| maps.get(&[c * 4 + q, i, j]))
                        .fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(pooled.output.get(&[c, i, j]), brute);
                }
            }
        }
    }

    #[test]
    fn backward_routes_to_winner_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let maps = Tensor::from_fn(&[4, 2, 2], |_| rng.gen_range(-1.0f64..1.0));
        let pooled = maxpool_channels(&maps, 2).unwrap();
        let up = Tensor::filled(&[2, 2, 2], 1.0);
        let g = maxpool_channels_backward(&up, &pooled.argmax, maps.shape()).unwrap();
        assert_eq!(g.sum(), 8.0);
        for (idx, &ch) in pooled.argmax.iter().enumerate() {
            assert_eq!(g.data()[ch * 4 + idx % 4], 1.0);
        }
    }
}
