//! HyPlanE encoder: the relation plane and each kept entity plane are padded
//! and convolved separately in 2D (shared relation / entity kernel sets),
//! pooled, then laid out pairwise in stack order and flattened.

use rand::Rng;

use super::{names, Model, ParamStore, Result};
use crate::layers::{
    dropout, embed_lookup, embed_scatter_add, relu, relu_backward, BatchNormCache, MaskedTuple,
    Mode, PlaneSource,
};
use crate::tensor::{
    conv3d_backward, conv3d_valid, maxpool_channels, maxpool_channels_backward, pad_hw,
    pad_hw_backward, Scalar, Tensor,
};

/// One padded plane that went through a 2D convolution.
struct PlaneInput<T> {
    padded: Tensor<T>,
    drop_mask: Option<Vec<T>>,
    argmax: Vec<usize>,
}

pub(crate) struct PlaneCache<T> {
    relations: Vec<PlaneInput<T>>,
    /// Kept entities of every sample, concatenated in batch order.
    entities: Vec<PlaneInput<T>>,
    kept: Vec<Vec<usize>>,
    rel_activated: Tensor<T>,
    ent_activated: Tensor<T>,
}

fn conv_plane<T: Scalar, R: Rng>(
    model: &Model<T>,
    row: &[T],
    kernels: &str,
    mode: Mode,
    rng: &mut R,
    out: &mut Vec<T>,
) -> Result<PlaneInput<T>> {
    let cfg = &model.config;
    let x = Tensor::new(vec![cfg.d1, cfg.d2, 1], row.to_vec())?;
    let (x, drop_mask) = dropout(&x, cfg.input_dropout, mode, rng)?;
    let padded = pad_hw(&x, cfg.pad, cfg.padding)?;
    let maps = conv3d_valid(&padded, model.params.expect(kernels))?;
    out.extend_from_slice(maps.data());
    Ok(PlaneInput {
        padded,
        drop_mask,
        argmax: Vec::new(),
    })
}

fn pool_rows<T: Scalar>(
    model: &Model<T>,
    activated: &Tensor<T>,
    inputs: &mut [PlaneInput<T>],
) -> Result<Vec<Vec<T>>> {
    let cfg = &model.config;
    let chunk = cfg.channels * cfg.d1 * cfg.d2;
    let mut pooled = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter_mut().enumerate() {
        let maps = Tensor::new(
            vec![cfg.channels, cfg.d1, cfg.d2],
            activated.data()[i * chunk..(i + 1) * chunk].to_vec(),
        )?;
        let p = maxpool_channels(&maps, cfg.pool)?;
        input.argmax = p.argmax;
        pooled.push(p.output.into_data());
    }
    Ok(pooled)
}

pub(crate) fn forward<T: Scalar, R: Rng>(
    model: &Model<T>,
    batch: &[MaskedTuple],
    mode: Mode,
    rng: &mut R,
    sites: &mut Vec<(&'static str, Option<BatchNormCache<T>>)>,
) -> Result<(Vec<Vec<T>>, PlaneCache<T>)> {
    let cfg = &model.config;
    let n1 = cfg.channels;
    let plane = cfg.d1 * cfg.d2;
    let rel_table = model.params.expect(names::RELATION);
    let ent_table = model.params.expect(names::ENTITY);

    let mut rel_maps = Vec::new();
    let mut ent_maps = Vec::new();
    let mut relations = Vec::with_capacity(batch.len());
    let mut entities = Vec::new();
    let mut kept_all = Vec::with_capacity(batch.len());
    for m in batch {
        let rel = embed_lookup(rel_table, &[m.relation])?;
        relations.push(conv_plane(model, rel.data(), names::PLANE_RELATION_KERNELS, mode, rng, &mut rel_maps)?);
        let kept = m.kept();
        let ents = embed_lookup(ent_table, &kept)?;
        for i in 0..kept.len() {
            entities.push(conv_plane(model, ents.row(i), names::PLANE_ENTITY_KERNELS, mode, rng, &mut ent_maps)?);
        }
        kept_all.push(kept);
    }

    let rel_maps = Tensor::new(vec![relations.len(), n1, plane], rel_maps)?;
    let ent_maps = Tensor::new(vec![entities.len(), n1, plane], ent_maps)?;
    let (rel_norm, bn_r) = model.bn_forward(names::BN_PLANE_RELATION, &rel_maps, mode)?;
    sites.push((names::BN_PLANE_RELATION, bn_r));
    let (ent_norm, bn_e) = model.bn_forward(names::BN_PLANE_ENTITY, &ent_maps, mode)?;
    sites.push((names::BN_PLANE_ENTITY, bn_e));
    let rel_activated = relu(&rel_norm);
    let ent_activated = relu(&ent_norm);
    let rel_pooled = pool_rows(model, &rel_activated, &mut relations)?;
    let ent_pooled = pool_rows(model, &ent_activated, &mut entities)?;

    let mut features = Vec::with_capacity(batch.len());
    let mut ent_offset = 0;
    for (b, kept) in kept_all.iter().enumerate() {
        let mut feat = Vec::new();
        for src in cfg.stack.sources(kept.len()) {
            match src {
                PlaneSource::Relation => feat.extend_from_slice(&rel_pooled[b]),
                PlaneSource::Entity(i) => feat.extend_from_slice(&ent_pooled[ent_offset + i]),
            }
        }
        ent_offset += kept.len();
        features.push(feat);
    }

    Ok((
        features,
        PlaneCache {
            relations,
            entities,
            kept: kept_all,
            rel_activated,
            ent_activated,
        },
    ))
}

fn conv_plane_backward<T: Scalar>(
    model: &Model<T>,
    input: &PlaneInput<T>,
    kernels: &str,
    upstream: &[T],
    grads: &mut ParamStore<T>,
) -> Result<Tensor<T>> {
    let cfg = &model.config;
    let up = Tensor::new(vec![cfg.channels, cfg.d1, cfg.d2, 1], upstream.to_vec())?;
    let cg = conv3d_backward(&input.padded, model.params.expect(kernels), &up)?;
    grads.expect_mut(kernels).add_assign(&cg.kernels);
    let mut g = pad_hw_backward(&cg.input, &[cfg.d1, cfg.d2, 1], cfg.pad, cfg.padding)?;
    if let Some(mask) = &input.drop_mask {
        for (v, &mk) in g.data_mut().iter_mut().zip(mask) {
            *v *= mk;
        }
    }
    Ok(g.reshape(&[1, cfg.dim])?)
}

pub(crate) fn backward<T: Scalar>(
    model: &Model<T>,
    batch: &[MaskedTuple],
    cache: &PlaneCache<T>,
    sites: &[(&'static str, Option<BatchNormCache<T>>)],
    grad_features: &[Vec<T>],
    grads: &mut ParamStore<T>,
) -> Result<()> {
    let cfg = &model.config;
    let n1 = cfg.channels;
    let n2 = cfg.pooled_channels();
    let plane = cfg.d1 * cfg.d2;
    let chunk = n2 * plane;
    let map_shape = [n1, cfg.d1, cfg.d2];

    // Split feature gradients back onto pooled relation / entity maps.
    let mut g_rel_pooled = vec![vec![T::zero(); chunk]; cache.relations.len()];
    let mut g_ent_pooled = vec![vec![T::zero(); chunk]; cache.entities.len()];
    let mut ent_offset = 0;
    for (b, kept) in cache.kept.iter().enumerate() {
        for (slot, src) in cfg.stack.sources(kept.len()).into_iter().enumerate() {
            let g = &grad_features[b][slot * chunk..(slot + 1) * chunk];
            let target = match src {
                PlaneSource::Relation => &mut g_rel_pooled[b],
                PlaneSource::Entity(i) => &mut g_ent_pooled[ent_offset + i],
            };
            for (t, &v) in target.iter_mut().zip(g) {
                *t += v;
            }
        }
        ent_offset += kept.len();
    }

    let unpool = |inputs: &[PlaneInput<T>], pooled: Vec<Vec<T>>| -> Result<Tensor<T>> {
        let mut out = Vec::with_capacity(inputs.len() * n1 * plane);
        for (input, g) in inputs.iter().zip(pooled) {
            let up = Tensor::new(vec![n2, cfg.d1, cfg.d2], g)?;
            out.extend(maxpool_channels_backward(&up, &input.argmax, &map_shape)?.into_data());
        }
        Ok(Tensor::new(vec![inputs.len(), n1, plane], out)?)
    };
    let g_rel_act = unpool(&cache.relations, g_rel_pooled)?;
    let g_ent_act = unpool(&cache.entities, g_ent_pooled)?;
    let g_rel_maps = model.bn_backward(
        names::BN_PLANE_RELATION,
        sites,
        &relu_backward(&cache.rel_activated, &g_rel_act),
        grads,
    )?;
    let g_ent_maps = model.bn_backward(
        names::BN_PLANE_ENTITY,
        sites,
        &relu_backward(&cache.ent_activated, &g_ent_act),
        grads,
    )?;

    let span = n1 * plane;
    let mut ent_index = 0;
    for (b, m) in batch.iter().enumerate() {
        let g = conv_plane_backward(
            model,
            &cache.relations[b],
            names::PLANE_RELATION_KERNELS,
            &g_rel_maps.data()[b * span..(b + 1) * span],
            grads,
        )?;
        embed_scatter_add(grads.expect_mut(names::RELATION), &[m.relation], &g)?;
        for &e in &cache.kept[b] {
            let g = conv_plane_backward(
                model,
                &cache.entities[ent_index],
                names::PLANE_ENTITY_KERNELS,
                &g_ent_maps.data()[ent_index * span..(ent_index + 1) * span],
                grads,
            )?;
            embed_scatter_add(grads.expect_mut(names::ENTITY), &[e], &g)?;
            ent_index += 1;
        }
    }
    Ok(())
}
