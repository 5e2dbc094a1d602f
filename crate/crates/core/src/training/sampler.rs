use rand::Rng;
use thiserror::Error;

use crate::data::FilterIndex;

/// Redraws allowed per slot before a known-true corruption is accepted.
pub const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("negative sampling needs at least 2 entities, have {0}")]
    TooFewEntities(usize),
    #[error("negative rate must be at least 1")]
    ZeroRate,
    #[error("position {pos} outside arity {arity}")]
    BadPosition { pos: usize, arity: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Negatives {
    pub ids: Vec<usize>,
    /// Slots filled with a known-true corruption after [`MAX_ATTEMPTS`] draws.
    pub warnings: usize,
}

/// Draws up to `n` distinct replacement entities for position `pos`, none equal
/// to the entity already there. Corruptions that form a tuple in `filter`
/// are redrawn. When fewer than `n` other entities exist, all of them are
/// returned.
pub fn sample_negatives<R: Rng>(
    relation: usize,
    entities: &[usize],
    pos: usize,
    n: usize,
    num_entities: usize,
    rng: &mut R,
    filter: &FilterIndex,
) -> Result<Negatives, SamplerError> {
    if num_entities < 2 {
        return Err(SamplerError::TooFewEntities(num_entities));
    }
    if n == 0 {
        return Err(SamplerError::ZeroRate);
    }
    if pos >= entities.len() {
        return Err(SamplerError::BadPosition {
            pos,
            arity: entities.len(),
        });
    }
    let original = entities[pos];
    let mut pool: Vec<usize> = (0..num_entities).filter(|&e| e != original).collect();
    let mut probe = entities.to_vec();
    let mut ids = Vec::with_capacity(n.min(pool.len()));
    let mut warnings = 0;
    while ids.len() < n && !pool.is_empty() {
        let mut attempts = 0;
        loop {
            let idx = rng.gen_range(0..pool.len());
            let cand = pool[idx];
            attempts += 1;
            probe[pos] = cand;
            let known = filter.contains_parts(relation, &probe);
            if !known || attempts >= MAX_ATTEMPTS {
                if known {
                    warnings += 1;
                }
                pool.swap_remove(idx);
                ids.push(cand);
                break;
            }
        }
    }
    if warnings > 0 {
        log::warn!("negative sampler accepted {warnings} known-true corruptions after {MAX_ATTEMPTS} attempts");
    }
    Ok(Negatives { ids, warnings })
}
