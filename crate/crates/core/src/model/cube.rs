//! HyCubE and HyCubE+ encoder: stack, pad, full-depth 3D convolution,
//! batch norm + ReLU, channel max-pooling, flatten (plus the residual
//! planes for HyCubE+).

use rand::Rng;

use super::{names, Model, ParamStore, Result};
use crate::layers::{
    dropout, embed_lookup, embed_scatter_add, relu, relu_backward, stack_backward, stack_planes,
    BatchNormCache, MaskedTuple, Mode, PlaneSource,
};
use crate::tensor::{
    conv3d_backward, conv3d_valid, maxpool_channels, maxpool_channels_backward, pad_hw,
    pad_hw_backward, reshape_2d, Scalar, Tensor,
};

pub(crate) struct CubeSample<T> {
    kept: Vec<usize>,
    cube_shape: Vec<usize>,
    drop_mask: Option<Vec<T>>,
    padded: Tensor<T>,
    argmax: Vec<usize>,
}

pub(crate) struct CubeCache<T> {
    samples: Vec<CubeSample<T>>,
    /// `[batch, n1, d1*d2]` after batch norm and ReLU.
    activated: Tensor<T>,
    residual: bool,
}

/// Relation and kept-entity planes of one masked tuple.
fn planes<T: Scalar>(model: &Model<T>, m: &MaskedTuple) -> Result<(Tensor<T>, Vec<Tensor<T>>, Vec<usize>)> {
    let cfg = &model.config;
    let kept = m.kept();
    let rel = embed_lookup(model.params.expect(names::RELATION), &[m.relation])?;
    let ents = embed_lookup(model.params.expect(names::ENTITY), &kept)?;
    let r2 = reshape_2d(rel.data(), cfg.d1, cfg.d2)?;
    let e2 = (0..kept.len())
        .map(|i| reshape_2d(ents.row(i), cfg.d1, cfg.d2))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((r2, e2, kept))
}

/// Sum of the relation planes followed by the sum of the entity planes,
/// each flattened row-major: a `2 * d` vector for any arity.
fn residual_vector<T: Scalar>(model: &Model<T>, cube: &Tensor<T>, kept: usize) -> Vec<T> {
    let plane = model.config.d1 * model.config.d2;
    let depth = cube.shape()[2];
    let mut out = vec![T::zero(); 2 * plane];
    for (z, src) in model.config.stack.sources(kept).into_iter().enumerate() {
        let half = match src {
            PlaneSource::Relation => 0,
            PlaneSource::Entity(_) => plane,
        };
        for s in 0..plane {
            out[half + s] += cube.data()[s * depth + z];
        }
    }
    out
}

pub(crate) fn forward<T: Scalar, R: Rng>(
    model: &Model<T>,
    batch: &[MaskedTuple],
    mode: Mode,
    rng: &mut R,
    residual: bool,
    sites: &mut Vec<(&'static str, Option<BatchNormCache<T>>)>,
) -> Result<(Vec<Vec<T>>, CubeCache<T>)> {
    let cfg = &model.config;
    let n1 = cfg.channels;
    let plane = cfg.d1 * cfg.d2;
    let mut conv_out = Vec::with_capacity(batch.len() * n1 * plane);
    let mut samples = Vec::with_capacity(batch.len());
    let mut residuals = Vec::new();

    for m in batch {
        let (r2, e2, kept) = planes(model, m)?;
        let cube = stack_planes(cfg.stack, &r2, &e2)?;
        let (cube, drop_mask) = dropout(&cube, cfg.input_dropout, mode, rng)?;
        if residual {
            residuals.push(residual_vector(model, &cube, kept.len()));
        }
        let padded = pad_hw(&cube, cfg.pad, cfg.padding)?;
        let maps = conv3d_valid(&padded, model.params.expect(&names::conv_kernels(m.arity())))?;
        debug_assert_eq!(maps.shape(), &[n1, cfg.d1, cfg.d2, 1]);
        conv_out.extend_from_slice(maps.data());
        samples.push(CubeSample {
            kept,
            cube_shape: cube.shape().to_vec(),
            drop_mask,
            padded,
            argmax: Vec::new(),
        });
    }

    let conv_out = Tensor::new(vec![batch.len(), n1, plane], conv_out)?;
    let (normed, bn) = model.bn_forward(names::BN_CONV, &conv_out, mode)?;
    sites.push((names::BN_CONV, bn));
    let activated = relu(&normed);

    let mut features = Vec::with_capacity(batch.len());
    for (b, sample) in samples.iter_mut().enumerate() {
        let maps = Tensor::new(
            vec![n1, cfg.d1, cfg.d2],
            activated.data()[b * n1 * plane..(b + 1) * n1 * plane].to_vec(),
        )?;
        let pooled = maxpool_channels(&maps, cfg.pool)?;
        sample.argmax = pooled.argmax;
        let mut feat = pooled.output.into_data();
        if residual {
            for (f, &r) in feat.iter_mut().zip(&residuals[b]) {
                *f += r;
            }
        }
        features.push(feat);
    }

    Ok((
        features,
        CubeCache {
            samples,
            activated,
            residual,
        },
    ))
}

pub(crate) fn backward<T: Scalar>(
    model: &Model<T>,
    batch: &[MaskedTuple],
    cache: &CubeCache<T>,
    sites: &[(&'static str, Option<BatchNormCache<T>>)],
    grad_features: &[Vec<T>],
    grads: &mut ParamStore<T>,
) -> Result<()> {
    let cfg = &model.config;
    let n1 = cfg.channels;
    let n2 = cfg.pooled_channels();
    let plane = cfg.d1 * cfg.d2;

    let mut g_act = Vec::with_capacity(batch.len() * n1 * plane);
    for (sample, gf) in cache.samples.iter().zip(grad_features) {
        let up = Tensor::new(vec![n2, cfg.d1, cfg.d2], gf.clone())?;
        let g = maxpool_channels_backward(&up, &sample.argmax, &[n1, cfg.d1, cfg.d2])?;
        g_act.extend_from_slice(g.data());
    }
    let g_act = Tensor::new(vec![batch.len(), n1, plane], g_act)?;
    let g_norm = relu_backward(&cache.activated, &g_act);
    let g_conv = model.bn_backward(names::BN_CONV, sites, &g_norm, grads)?;

    for (b, (m, sample)) in batch.iter().zip(&cache.samples).enumerate() {
        let kname = names::conv_kernels(m.arity());
        let up = Tensor::new(
            vec![n1, cfg.d1, cfg.d2, 1],
            g_conv.data()[b * n1 * plane..(b + 1) * n1 * plane].to_vec(),
        )?;
        let cg = conv3d_backward(&sample.padded, model.params.expect(&kname), &up)?;
        grads.expect_mut(&kname).add_assign(&cg.kernels);

        let mut g_cube = pad_hw_backward(&cg.input, &sample.cube_shape, cfg.pad, cfg.padding)?;
        if cache.residual {
            let depth = sample.cube_shape[2];
            let gf = &grad_features[b];
            let gd = g_cube.data_mut();
            for (z, src) in cfg.stack.sources(sample.kept.len()).into_iter().enumerate() {
                let half = match src {
                    PlaneSource::Relation => 0,
                    PlaneSource::Entity(_) => plane,
                };
                for s in 0..plane {
                    gd[s * depth + z] += gf[half + s];
                }
            }
        }
        if let Some(mask) = &sample.drop_mask {
            for (g, &mk) in g_cube.data_mut().iter_mut().zip(mask) {
                *g *= mk;
            }
        }
        let (g_rel, g_ents) = stack_backward(cfg.stack, &g_cube, sample.kept.len())?;
        let g_rel = g_rel.reshape(&[1, cfg.dim])?;
        embed_scatter_add(grads.expect_mut(names::RELATION), &[m.relation], &g_rel)?;
        let mut flat = Vec::with_capacity(g_ents.len() * cfg.dim);
        for g in g_ents {
            flat.extend(g.into_data());
        }
        let flat = Tensor::new(vec![sample.kept.len(), cfg.dim], flat)?;
        embed_scatter_add(grads.expect_mut(names::ENTITY), &sample.kept, &flat)?;
    }
    Ok(())
}
