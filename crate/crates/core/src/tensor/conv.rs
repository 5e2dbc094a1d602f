//! Direct valid-mode 3D cross-correlation over an `H x W x D` cube.
//!
//! Kernels are stored as one `n1 x k x k x t` tensor. The kernel is not
//! flipped; with learned weights both conventions span the same maps.

use super::{Result, Scalar, Tensor, TensorError};

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
}

struct Geometry {
    w: usize,
    d: usize,
    n1: usize,
    k: usize,
    t: usize,
    oh: usize,
    ow: usize,
    od: usize,
}

fn geometry<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>) -> Result<Geometry> {
    let [h, w, d] = *input.shape() else {
        return Err(TensorError::DimensionMismatch(format!(
            "conv input must be HxWxD, got {:?}",
            input.shape()
        )));
    };
    let [n1, kh, kw, t] = *kernels.shape() else {
        return Err(TensorError::DimensionMismatch(format!(
            "kernels must be n1 x k x k x depth, got {:?}",
            kernels.shape()
        )));
    };
    if kh != kw {
        return Err(TensorError::DimensionMismatch(format!(
            "kernels must be square in height/width, got {kh}x{kw}"
        )));
    }
    if kh > h || kw > w || t > d || kh == 0 || t == 0 {
        return Err(TensorError::KernelExceedsInput {
            kernel: kernels.shape()[1..].to_vec(),
            input: input.shape().to_vec(),
        });
    }
    Ok(Geometry {
        w,
        d,
        n1,
        k: kh,
        t,
        oh: h - kh + 1,
        ow: w - kw + 1,
        od: d - t + 1,
    })
}

/// Output has shape `n1 x (H-k+1) x (W-k+1) x (D-t+1)`.
pub fn conv3d_valid<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>) -> Result<Tensor<T>> {
    let g = geometry(input, kernels)?;
    let x = input.data();
    let ker = kernels.data();
    let ksize = g.k * g.k * g.t;
    let mut out = vec![T::zero(); g.n1 * g.oh * g.ow * g.od];
    for c in 0..g.n1 {
        let kc = &ker[c * ksize..(c + 1) * ksize];
        for oi in 0..g.oh {
            for oj in 0..g.ow {
                for oz in 0..g.od {
                    let mut acc = T::zero();
                    for a in 0..g.k {
                        for b in 0..g.k {
                            let xin = ((oi + a) * g.w + (oj + b)) * g.d + oz;
                            let kin = (a * g.k + b) * g.t;
                            for (&xv, &kv) in x[xin..xin + g.t].iter().zip(&kc[kin..kin + g.t]) {
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((c * g.oh + oi) * g.ow + oj) * g.od + oz] = acc;
                }
            }
        }
    }
    let out = Tensor::new(vec![g.n1, g.oh, g.ow, g.od], out)?;
    out.debug_assert_finite();
    Ok(out)
}

/// Adjoints of [`conv3d_valid`] with respect to the input and the kernels.
pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = geometry(input, kernels)?;
    if upstream.shape() != [g.n1, g.oh, g.ow, g.od] {
        return Err(TensorError::DimensionMismatch(format!(
            "upstream gradient {:?} does not match conv output {:?}",
            upstream.shape(),
            [g.n1, g.oh, g.ow, g.od]
        )));
    }
    let x = input.data();
    let ker = kernels.data();
    let up = upstream.data();
    let ksize = g.k * g.k * g.t;
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); ker.len()];
    for c in 0..g.n1 {
        let kc = &ker[c * ksize..(c + 1) * ksize];
        let gkc = &mut gk[c * ksize..(c + 1) * ksize];
        for oi in 0..g.oh {
            for oj in 0..g.ow {
                for oz in 0..g.od {
                    let u = up[((c * g.oh + oi) * g.ow + oj) * g.od + oz];
                    if u == T::zero() {
                        continue;
                    }
                    for a in 0..g.k {
                        for b in 0..g.k {
                            let xin = ((oi + a) * g.w + (oj + b)) * g.d + oz;
                            let kin = (a * g.k + b) * g.t;
                            for s in 0..g.t {
                                gx[xin + s] += u * kc[kin + s];
                                gkc[kin + s] += u * x[xin + s];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        kernels: Tensor::new(kernels.shape().to_vec(), gk)?,
    })
}
