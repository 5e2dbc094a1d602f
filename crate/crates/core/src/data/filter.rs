use std::collections::{HashMap, HashSet};

use super::{Dataset, KnowledgeTuple};

const HOLE: usize = usize::MAX;

/// Every known-true tuple across train, valid and test, plus the set of
/// entities that complete each `(relation, tuple with one hole)` pattern.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    known: HashSet<KnowledgeTuple>,
    completions: HashMap<(usize, usize, Vec<usize>), Vec<usize>>,
}

fn pattern(relation: usize, entities: &[usize], pos: usize) -> (usize, usize, Vec<usize>) {
    let mut holed = entities.to_vec();
    holed[pos] = HOLE;
    (relation, pos, holed)
}

impl FilterIndex {
    pub fn build(dataset: &Dataset) -> Self {
        Self::from_tuples(dataset.all_tuples())
    }

    pub fn from_tuples<'a>(tuples: impl IntoIterator<Item = &'a KnowledgeTuple>) -> Self {
        let mut index = Self::default();
        for t in tuples {
            if !index.known.insert(t.clone()) {
                continue;
            }
            for pos in 0..t.arity() {
                index
                    .completions
                    .entry(pattern(t.relation, &t.entities, pos))
                    .or_default()
                    .push(t.entities[pos]);
            }
        }
        index
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    pub fn contains(&self, tuple: &KnowledgeTuple) -> bool {
        self.known.contains(tuple)
    }

    pub fn contains_parts(&self, relation: usize, entities: &[usize]) -> bool {
        self.known.contains(&KnowledgeTuple {
            relation,
            entities: entities.to_vec(),
        })
    }

    /// Entities `e` for which the tuple with `e` at `pos` is known true.
    /// The entity currently at `pos` is ignored when forming the pattern.
    pub fn true_replacements(&self, relation: usize, entities: &[usize], pos: usize) -> &[usize] {
        self.completions
            .get(&pattern(relation, entities, pos))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}
