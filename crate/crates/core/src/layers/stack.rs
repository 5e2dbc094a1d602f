//! Depth stacking of the reshaped relation and entity planes into a cube.

use super::{LayerError, Result};
use crate::tensor::{Scalar, Tensor};

/// A tuple with one entity position hidden. `masked_pos` is 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskedTuple {
    pub relation: usize,
    pub entities: Vec<usize>,
    pub masked_pos: usize,
    pub target: usize,
}

impl MaskedTuple {
    pub fn new(relation: usize, entities: Vec<usize>, masked_pos: usize) -> Result<Self> {
        if entities.len() < 2 {
            return Err(LayerError::InvalidMask(format!(
                "arity {} is below 2",
                entities.len()
            )));
        }
        if masked_pos >= entities.len() {
            return Err(LayerError::InvalidMask(format!(
                "position {masked_pos} outside arity {}",
                entities.len()
            )));
        }
        let target = entities[masked_pos];
        Ok(Self {
            relation,
            entities,
            masked_pos,
            target,
        })
    }

    pub fn arity(&self) -> usize {
        self.entities.len()
    }

    /// Unmasked entity ids in tuple order.
    pub fn kept(&self) -> Vec<usize> {
        self.entities
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != self.masked_pos)
            .map(|(_, &e)| e)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StackLayout {
    /// `[r, e_1, r, e_2, ...]`: the relation plane precedes every kept entity.
    Alternate,
    /// `[r, e_1, e_2, ...]`: the relation plane appears once.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneSource {
    Relation,
    /// Index into the kept-entity list.
    Entity(usize),
}

impl StackLayout {
    /// Cube depth for a tuple of the given arity.
    pub fn depth(self, arity: usize) -> usize {
        match self {
            StackLayout::Alternate => 2 * (arity - 1),
            StackLayout::Standard => arity,
        }
    }

    pub fn sources(self, kept: usize) -> Vec<PlaneSource> {
        match self {
            StackLayout::Alternate => (0..kept)
                .flat_map(|i| [PlaneSource::Relation, PlaneSource::Entity(i)])
                .collect(),
            StackLayout::Standard => std::iter::once(PlaneSource::Relation)
                .chain((0..kept).map(PlaneSource::Entity))
                .collect(),
        }
    }
}

fn plane_dims<T: Scalar>(relation: &Tensor<T>, entities: &[Tensor<T>]) -> Result<(usize, usize)> {
    if entities.is_empty() {
        return Err(LayerError::EmptyStack);
    }
    let [d1, d2] = *relation.shape() else {
        return Err(LayerError::PlaneMismatch(format!(
            "relation plane has shape {:?}",
            relation.shape()
        )));
    };
    if let Some(bad) = entities.iter().find(|e| e.shape() != relation.shape()) {
        return Err(LayerError::PlaneMismatch(format!(
            "entity plane {:?} vs relation plane {:?}",
            bad.shape(),
            relation.shape()
        )));
    }
    Ok((d1, d2))
}

/// Builds the `d1 x d2 x depth` cube for `layout`.
pub fn stack_planes<T: Scalar>(
    layout: StackLayout,
    relation: &Tensor<T>,
    entities: &[Tensor<T>],
) -> Result<Tensor<T>> {
    let (d1, d2) = plane_dims(relation, entities)?;
    let sources = layout.sources(entities.len());
    let depth = sources.len();
    let mut cube = vec![T::zero(); d1 * d2 * depth];
    for (z, src) in sources.iter().enumerate() {
        let plane = match *src {
            PlaneSource::Relation => relation.data(),
            PlaneSource::Entity(i) => entities[i].data(),
        };
        for (s, &v) in plane.iter().enumerate() {
            cube[s * depth + z] = v;
        }
    }
    Ok(Tensor::new(vec![d1, d2, depth], cube)?)
}

pub fn alternate_mask_stack<T: Scalar>(relation: &Tensor<T>, entities: &[Tensor<T>]) -> Result<Tensor<T>> {
    stack_planes(StackLayout::Alternate, relation, entities)
}

pub fn standard_stack<T: Scalar>(relation: &Tensor<T>, entities: &[Tensor<T>]) -> Result<Tensor<T>> {
    stack_planes(StackLayout::Standard, relation, entities)
}

/// Splits a cube gradient back onto the relation plane (summed over its
/// copies) and each kept entity plane.
pub fn stack_backward<T: Scalar>(
    layout: StackLayout,
    grad_cube: &Tensor<T>,
    kept: usize,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let sources = layout.sources(kept);
    let [d1, d2, depth] = *grad_cube.shape() else {
        return Err(LayerError::PlaneMismatch(format!(
            "cube gradient has shape {:?}",
            grad_cube.shape()
        )));
    };
    if depth != sources.len() {
        return Err(LayerError::PlaneMismatch(format!(
            "cube depth {depth} for {kept} kept entities"
        )));
    }
    let mut grad_rel = Tensor::zeros(&[d1, d2]);
    let mut grad_ents = vec![Tensor::zeros(&[d1, d2]); kept];
    let g = grad_cube.data();
    for (z, src) in sources.iter().enumerate() {
        let plane = match *src {
            PlaneSource::Relation => grad_rel.data_mut(),
            PlaneSource::Entity(i) => grad_ents[i].data_mut(),
        };
        for (s, v) in plane.iter_mut().enumerate() {
            *v += g[s * depth + z];
        }
    }
    Ok((grad_rel, grad_ents))
}
