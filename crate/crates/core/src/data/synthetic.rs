//! Seeded random mixed-arity datasets for smoke tests and benchmarks.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, KnowledgeTuple};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub num_entities: usize,
    pub num_relations: usize,
    /// Relation `r` has arity `arities[r % arities.len()]`.
    pub arities: Vec<usize>,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Entities are split into this many contiguous groups; position `i` of
    /// relation `r` only takes entities from group `(3r + i) % groups`. With
    /// one group tuples are uniform, otherwise held-out tuples are
    /// predictable from the training ones.
    pub groups: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 50 training tuples over 20 entities with arities 2–4.
    pub fn toy() -> Self {
        Self {
            num_entities: 20,
            num_relations: 6,
            arities: vec![2, 3, 4],
            train: 50,
            valid: 10,
            test: 10,
            groups: 1,
            seed: 0,
        }
    }
}

/// Distinct random tuples (see [`SyntheticSpec::groups`]); entity names are `e{i}`, relation names
/// `r{j}`, and every entity and relation is in the vocabulary. Panics if the
/// spec asks for more distinct tuples than the sampler can find.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Dataset {
    assert!(spec.num_entities >= 2 && spec.num_relations >= 1 && !spec.arities.is_empty());
    assert!(spec.groups >= 1 && spec.groups <= spec.num_entities);
    let mut ds = Dataset::default();
    for e in 0..spec.num_entities {
        ds.vocab.entities.intern(&format!("e{e}"));
    }
    for r in 0..spec.num_relations {
        ds.vocab.relations.intern(&format!("r{r}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = HashSet::new();
    let total = spec.train + spec.valid + spec.test;
    let mut tuples = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while tuples.len() < total {
        attempts += 1;
        assert!(attempts < 1000 * total.max(1), "cannot draw {total} distinct tuples");
        let relation = rng.gen_range(0..spec.num_relations);
        let arity = spec.arities[relation % spec.arities.len()];
        let entities: Vec<usize> = (0..arity)
            .map(|i| {
                let g = (3 * relation + i) % spec.groups;
                let lo = g * spec.num_entities / spec.groups;
                let hi = (g + 1) * spec.num_entities / spec.groups;
                rng.gen_range(lo..hi)
            })
            .collect();
        let t = KnowledgeTuple { relation, entities };
        if seen.insert(t.clone()) {
            tuples.push(t);
        }
    }
    ds.test = tuples.split_off(spec.train + spec.valid);
    ds.valid = tuples.split_off(spec.train);
    ds.train = tuples;
    ds
}
