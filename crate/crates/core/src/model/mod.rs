//! The HyCubE family of encoders and 1-N scoring.
//!
//! A forward pass maps a batch of masked tuples to `d`-dimensional output
//! vectors; scoring multiplies them against the whole entity table. Each
//! encoder keeps what its backward pass needs in a [`ForwardCache`].

mod check;
mod cube;
mod params;
mod plane;
mod score;

pub use check::{batch_loss, max_gradient_error};
pub use params::ParamStore;
pub use score::{softmax, ScoredEntities};

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, Variant};
use crate::layers::{
    batchnorm_backward, batchnorm_eval, batchnorm_train, dropout, relu, relu_backward,
    uniform_init, update_running_stats, BatchNormCache, LayerError, MaskedTuple, Mode,
};
use crate::tensor::{affine, affine_backward, Scalar, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("arity {0} has no trained parameters")]
    UnsupportedArity(usize),
    #[error("cache was produced by parameter version {cache}, model is at {model}")]
    StaleCache { cache: u64, model: u64 },
    #[error("backward needs a training-mode forward pass")]
    EvalCache,
    #[error("empty batch")]
    EmptyBatch,
    #[error("id out of range: {0}")]
    IdOutOfRange(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Parameter and buffer names.
pub mod names {
    pub const ENTITY: &str = "entity.embedding";
    pub const RELATION: &str = "relation.embedding";
    pub const ENTITY_BIAS: &str = "entity.bias";
    pub const FC_WEIGHT: &str = "fc.weight";
    pub const FC_BIAS: &str = "fc.bias";
    pub const BN_CONV: &str = "bn.conv";
    pub const BN_OUT: &str = "bn.out";
    pub const BN_PLANE_RELATION: &str = "bn.plane_relation";
    pub const BN_PLANE_ENTITY: &str = "bn.plane_entity";
    pub const PLANE_RELATION_KERNELS: &str = "plane.relation_kernels";
    pub const PLANE_ENTITY_KERNELS: &str = "plane.entity_kernels";

    pub fn conv_kernels(arity: usize) -> String {
        format!("conv.kernels.arity{arity}")
    }

    pub fn fc_weight_for(arity: usize) -> String {
        format!("fc.weight.arity{arity}")
    }

    pub fn fc_bias_for(arity: usize) -> String {
        format!("fc.bias.arity{arity}")
    }

    pub fn gamma(site: &str) -> String {
        format!("{site}.gamma")
    }

    pub fn beta(site: &str) -> String {
        format!("{site}.beta")
    }

    pub fn running_mean(site: &str) -> String {
        format!("{site}.running_mean")
    }

    pub fn running_var(site: &str) -> String {
        format!("{site}.running_var")
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: RunConfig,
    num_entities: usize,
    num_relations: usize,
    arities: BTreeSet<usize>,
    params: ParamStore<T>,
    buffers: ParamStore<T>,
    version: u64,
}

pub(crate) enum EncoderCache<T> {
    Cube(cube::CubeCache<T>),
    Plane(plane::PlaneCache<T>),
}

pub(crate) struct HeadCache<T> {
    inputs: Vec<Vec<T>>,
    masks: Vec<Option<Vec<T>>>,
    bn: Option<BatchNormCache<T>>,
}

pub struct ForwardCache<T> {
    version: u64,
    batch: Vec<MaskedTuple>,
    encoder: EncoderCache<T>,
    head: HeadCache<T>,
    bn_sites: Vec<(&'static str, Option<BatchNormCache<T>>)>,
}

impl<T> ForwardCache<T> {
    pub fn batch(&self) -> &[MaskedTuple] {
        &self.batch
    }
}

pub struct ForwardOutput<T> {
    /// `[batch, d]` encoder outputs.
    pub v_out: Tensor<T>,
    pub cache: ForwardCache<T>,
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters for every arity in `arities`.
    pub fn new<R: Rng>(
        config: RunConfig,
        num_entities: usize,
        num_relations: usize,
        arities: impl IntoIterator<Item = usize>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let arities: BTreeSet<usize> = arities.into_iter().collect();
        if let Some(&bad) = arities.iter().find(|&&a| a < 2) {
            return Err(ModelError::UnsupportedArity(bad));
        }
        let d = config.dim;
        let k = config.kernel_size();
        let n1 = config.channels;
        let n2 = config.pooled_channels();
        let plane = config.d1 * config.d2;
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();

        params.insert(names::ENTITY, uniform_init(&[num_entities, d], d, rng));
        params.insert(names::RELATION, uniform_init(&[num_relations, d], d, rng));
        params.insert(names::ENTITY_BIAS, Tensor::zeros(&[num_entities]));

        let mut bn_site = |site: &str, channels: usize, params: &mut ParamStore<T>| {
            params.insert(names::gamma(site), Tensor::filled(&[channels], T::one()));
            params.insert(names::beta(site), Tensor::zeros(&[channels]));
            buffers.insert(names::running_mean(site), Tensor::zeros(&[channels]));
            buffers.insert(names::running_var(site), Tensor::filled(&[channels], T::one()));
        };

        match config.variant {
            Variant::HyCube | Variant::HyCubePlus => {
                for &a in &arities {
                    let depth = config.stack.depth(a);
                    params.insert(
                        names::conv_kernels(a),
                        uniform_init(&[n1, k, k, depth], k * k * depth, rng),
                    );
                }
                bn_site(names::BN_CONV, n1, &mut params);
                let m = n2 * plane;
                params.insert(names::FC_WEIGHT, uniform_init(&[d, m], m, rng));
                params.insert(names::FC_BIAS, Tensor::zeros(&[d]));
            }
            Variant::HyPlane => {
                params.insert(names::PLANE_RELATION_KERNELS, uniform_init(&[n1, k, k, 1], k * k, rng));
                params.insert(names::PLANE_ENTITY_KERNELS, uniform_init(&[n1, k, k, 1], k * k, rng));
                bn_site(names::BN_PLANE_RELATION, n1, &mut params);
                bn_site(names::BN_PLANE_ENTITY, n1, &mut params);
                for &a in &arities {
                    let m = config.stack.depth(a) * n2 * plane;
                    params.insert(names::fc_weight_for(a), uniform_init(&[d, m], m, rng));
                    params.insert(names::fc_bias_for(a), Tensor::zeros(&[d]));
                }
            }
        }
        bn_site(names::BN_OUT, d, &mut params);

        Ok(Self {
            config,
            num_entities,
            num_relations,
            arities,
            params,
            buffers,
            version: 0,
        })
    }

    /// Rebuilds a model around existing tensors, checking every name and shape
    /// against a freshly initialized template.
    pub fn from_parts(
        config: RunConfig,
        num_entities: usize,
        num_relations: usize,
        arities: impl IntoIterator<Item = usize>,
        params: ParamStore<T>,
        buffers: ParamStore<T>,
    ) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = Self::new(config, num_entities, num_relations, arities, &mut rng)?;
        for (template, given, what) in [
            (&model.params, &params, "parameter"),
            (&model.buffers, &buffers, "buffer"),
        ] {
            if template.len() != given.len() {
                return Err(TensorError::DimensionMismatch(format!(
                    "expected {} {what} tensors, got {}",
                    template.len(),
                    given.len()
                ))
                .into());
            }
            for (name, t) in template.iter() {
                match given.get(name) {
                    Some(g) if g.shape() == t.shape() => {}
                    Some(g) => {
                        return Err(TensorError::DimensionMismatch(format!(
                            "{what} {name}: expected {:?}, got {:?}",
                            t.shape(),
                            g.shape()
                        ))
                        .into())
                    }
                    None => {
                        return Err(TensorError::DimensionMismatch(format!("missing {what} {name}")).into())
                    }
                }
            }
        }
        // Keep the template's order so serialization is canonical.
        for (name, t) in model.params.iter_mut() {
            *t = params.expect(name).clone();
        }
        for (name, t) in model.buffers.iter_mut() {
            *t = buffers.expect(name).clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn arities(&self) -> &BTreeSet<usize> {
        &self.arities
    }

    pub fn supports_arity(&self, arity: usize) -> bool {
        self.arities.contains(&arity)
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        self.version += 1;
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore<T> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.buffers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    /// Same parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            num_entities: self.num_entities,
            num_relations: self.num_relations,
            arities: self.arities.clone(),
            params: self.params.cast(),
            buffers: self.buffers.cast(),
            version: 0,
        }
    }

    fn check_batch(&self, batch: &[MaskedTuple]) -> Result<()> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        for m in batch {
            if !self.supports_arity(m.arity()) {
                return Err(ModelError::UnsupportedArity(m.arity()));
            }
            if m.relation >= self.num_relations {
                return Err(ModelError::IdOutOfRange(format!("relation {}", m.relation)));
            }
            if let Some(&e) = m.entities.iter().find(|&&e| e >= self.num_entities) {
                return Err(ModelError::IdOutOfRange(format!("entity {e}")));
            }
        }
        Ok(())
    }

    /// Encodes a batch into `[batch, d]` output vectors.
    pub fn forward<R: Rng>(&self, batch: &[MaskedTuple], mode: Mode, rng: &mut R) -> Result<ForwardOutput<T>> {
        let residual = self.config.variant == Variant::HyCubePlus;
        self.forward_impl(batch, mode, rng, residual)
    }

    pub(crate) fn forward_impl<R: Rng>(
        &self,
        batch: &[MaskedTuple],
        mode: Mode,
        rng: &mut R,
        residual: bool,
    ) -> Result<ForwardOutput<T>> {
        self.check_batch(batch)?;
        let mut bn_sites = Vec::new();
        let (features, fc_keys, encoder) = match self.config.variant {
            Variant::HyCube | Variant::HyCubePlus => {
                let (features, cache) = cube::forward(self, batch, mode, rng, residual, &mut bn_sites)?;
                let keys = vec![(names::FC_WEIGHT.to_owned(), names::FC_BIAS.to_owned()); batch.len()];
                (features, keys, EncoderCache::Cube(cache))
            }
            Variant::HyPlane => {
                let (features, cache) = plane::forward(self, batch, mode, rng, &mut bn_sites)?;
                let keys = batch
                    .iter()
                    .map(|m| (names::fc_weight_for(m.arity()), names::fc_bias_for(m.arity())))
                    .collect();
                (features, keys, EncoderCache::Plane(cache))
            }
        };
        let (v_out, head) = self.head_forward(features, &fc_keys, mode, rng)?;
        Ok(ForwardOutput {
            v_out,
            cache: ForwardCache {
                version: self.version,
                batch: batch.to_vec(),
                encoder,
                head,
                bn_sites,
            },
        })
    }

    /// Eval-mode encode of a single masked tuple.
    pub fn encode(&self, masked: &MaskedTuple) -> Result<Tensor<T>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = self.forward(std::slice::from_ref(masked), Mode::Eval, &mut rng)?;
        Ok(out.v_out.flatten())
    }

    /// Folds the batch statistics of a training forward into the running averages.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        let head = std::iter::once((names::BN_OUT, &cache.head.bn));
        for (site, bn) in cache.bn_sites.iter().map(|(s, c)| (*s, c)).chain(head) {
            if let Some(bn) = bn {
                let mut mean = self.buffers.expect(&names::running_mean(site)).clone();
                let mut var = self.buffers.expect(&names::running_var(site)).clone();
                update_running_stats(&mut mean, &mut var, bn);
                self.buffers.insert(names::running_mean(site), mean);
                self.buffers.insert(names::running_var(site), var);
            }
        }
    }

    /// Gradients of all parameters given `d loss / d logits` (`[batch, |E|]`).
    pub fn backward(&self, output: &ForwardOutput<T>, grad_logits: &Tensor<T>) -> Result<ParamStore<T>> {
        let cache = &output.cache;
        if cache.version != self.version {
            return Err(ModelError::StaleCache {
                cache: cache.version,
                model: self.version,
            });
        }
        let mut grads = self.params.zeros_like();
        let grad_vout = score::logits_backward(self, &output.v_out, grad_logits, &mut grads)?;
        let grad_features = self.head_backward(cache, &output.v_out, &grad_vout, &mut grads)?;
        match &cache.encoder {
            EncoderCache::Cube(c) => cube::backward(self, &cache.batch, c, &cache.bn_sites, &grad_features, &mut grads)?,
            EncoderCache::Plane(c) => plane::backward(self, &cache.batch, c, &cache.bn_sites, &grad_features, &mut grads)?,
        }
        Ok(grads)
    }

    /// Batch norm at `site` over a `[samples, channels, spatial]` tensor.
    pub(crate) fn bn_forward(
        &self,
        site: &'static str,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
        let gamma = self.params.expect(&names::gamma(site));
        let beta = self.params.expect(&names::beta(site));
        match mode {
            Mode::Train => {
                let (y, cache) = batchnorm_train(x, gamma, beta)?;
                Ok((y, Some(cache)))
            }
            Mode::Eval => Ok((
                batchnorm_eval(
                    x,
                    gamma,
                    beta,
                    self.buffers.expect(&names::running_mean(site)),
                    self.buffers.expect(&names::running_var(site)),
                )?,
                None,
            )),
        }
    }

    pub(crate) fn bn_backward(
        &self,
        site: &'static str,
        sites: &[(&'static str, Option<BatchNormCache<T>>)],
        upstream: &Tensor<T>,
        grads: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let cache = sites
            .iter()
            .find(|(s, _)| *s == site)
            .and_then(|(_, c)| c.as_ref())
            .ok_or(ModelError::EvalCache)?;
        Ok(self.bn_apply_backward(site, cache, upstream, grads)?.input)
    }

    fn bn_apply_backward(
        &self,
        site: &str,
        cache: &BatchNormCache<T>,
        upstream: &Tensor<T>,
        grads: &mut ParamStore<T>,
    ) -> Result<crate::layers::BatchNormGrads<T>> {
        let g = batchnorm_backward(upstream, cache, self.params.expect(&names::gamma(site)))?;
        grads.expect_mut(&names::gamma(site)).add_assign(&g.gamma);
        grads.expect_mut(&names::beta(site)).add_assign(&g.beta);
        Ok(g)
    }

    /// Feature dropout, per-sample affine to `d`, batch norm, ReLU.
    fn head_forward<R: Rng>(
        &self,
        features: Vec<Vec<T>>,
        fc_keys: &[(String, String)],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, HeadCache<T>)> {
        let d = self.config.dim;
        let n = features.len();
        let mut hidden = Vec::with_capacity(n * d);
        let mut inputs = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        for (feat, (wk, bk)) in features.into_iter().zip(fc_keys) {
            let (dropped, mask) = dropout(&Tensor::vector(feat), self.config.feature_dropout, mode, rng)?;
            let h = affine(dropped.data(), self.params.expect(wk), self.params.expect(bk))?;
            hidden.extend_from_slice(h.data());
            inputs.push(dropped.into_data());
            masks.push(mask);
        }
        let hidden = Tensor::new(vec![n, d, 1], hidden)?;
        let (normed, bn) = self.bn_forward(names::BN_OUT, &hidden, mode)?;
        let v_out = relu(&normed).reshape(&[n, d])?;
        v_out.debug_assert_finite();
        Ok((v_out, HeadCache { inputs, masks, bn }))
    }

    fn head_backward(
        &self,
        cache: &ForwardCache<T>,
        v_out: &Tensor<T>,
        grad_vout: &Tensor<T>,
        grads: &mut ParamStore<T>,
    ) -> Result<Vec<Vec<T>>> {
        let head = &cache.head;
        let n = cache.batch.len();
        let d = self.config.dim;
        let g_relu = relu_backward(v_out, grad_vout).reshape(&[n, d, 1])?;
        let bn = head.bn.as_ref().ok_or(ModelError::EvalCache)?;
        let g = self.bn_apply_backward(names::BN_OUT, bn, &g_relu, grads)?;
        let mut out = Vec::with_capacity(n);
        for (b, m) in cache.batch.iter().enumerate() {
            let (wk, bk) = match self.config.variant {
                Variant::HyPlane => (names::fc_weight_for(m.arity()), names::fc_bias_for(m.arity())),
                _ => (names::FC_WEIGHT.to_owned(), names::FC_BIAS.to_owned()),
            };
            let up = &g.input.data()[b * d..(b + 1) * d];
            let ag = affine_backward(&head.inputs[b], self.params.expect(&wk), self.params.expect(&bk), up)?;
            grads.expect_mut(&wk).add_assign(&ag.weight);
            grads.expect_mut(&bk).add_assign(&ag.bias);
            let mut gin = ag.input.into_data();
            if let Some(mask) = &head.masks[b] {
                for (g, &mk) in gin.iter_mut().zip(mask) {
                    *g *= mk;
                }
            }
            out.push(gin);
        }
        Ok(out)
    }

    /// `[batch, |E|]` logits `v_out · E^T + b`.
    pub fn logits(&self, v_out: &Tensor<T>) -> Tensor<T> {
        score::logits(self, v_out)
    }

    /// Probabilities and logits over every entity for one output vector.
    pub fn score_all_entities(&self, v_out: &[T]) -> Result<ScoredEntities<T>> {
        score::score_all_entities(self, v_out)
    }

    /// Eval-mode logits for a batch of masked tuples.
    pub fn predict_logits(&self, batch: &[MaskedTuple]) -> Result<Tensor<T>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = self.forward(batch, Mode::Eval, &mut rng)?;
        Ok(self.logits(&out.v_out))
    }
}
