use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use super::{Dataset, Split};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetStats {
    pub num_entities: usize,
    pub num_relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Tuple counts per arity over all splits.
    pub arity_histogram: BTreeMap<usize, usize>,
    /// Arities observed for each relation name.
    pub relation_arities: BTreeMap<String, BTreeSet<usize>>,
}

impl DatasetStats {
    pub fn compute(ds: &Dataset) -> Self {
        let mut relation_arities: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
        for t in ds.all_tuples() {
            let name = ds.vocab.relations.name(t.relation).unwrap_or("?").to_owned();
            relation_arities.entry(name).or_default().insert(t.arity());
        }
        Self {
            num_entities: ds.num_entities(),
            num_relations: ds.num_relations(),
            train: ds.split(Split::Train).len(),
            valid: ds.split(Split::Valid).len(),
            test: ds.split(Split::Test).len(),
            arity_histogram: ds.arity_histogram(),
            relation_arities,
        }
    }

    pub fn min_arity(&self) -> Option<usize> {
        self.arity_histogram.keys().next().copied()
    }

    pub fn max_arity(&self) -> Option<usize> {
        self.arity_histogram.keys().next_back().copied()
    }

    pub fn arity_set(&self) -> BTreeSet<usize> {
        self.arity_histogram.keys().copied().collect()
    }

    pub fn count_arity(&self, arity: usize) -> usize {
        self.arity_histogram.get(&arity).copied().unwrap_or(0)
    }

    pub fn count_arity_at_least(&self, arity: usize) -> usize {
        self.arity_histogram.range(arity..).map(|(_, &c)| c).sum()
    }

    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }

    /// Flat `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let join = |set: &BTreeSet<usize>| set.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        writeln!(out, "entities={}", self.num_entities).unwrap();
        writeln!(out, "relations={}", self.num_relations).unwrap();
        writeln!(out, "train={}", self.train).unwrap();
        writeln!(out, "valid={}", self.valid).unwrap();
        writeln!(out, "test={}", self.test).unwrap();
        writeln!(out, "min_arity={}", self.min_arity().unwrap_or(0)).unwrap();
        writeln!(out, "max_arity={}", self.max_arity().unwrap_or(0)).unwrap();
        writeln!(out, "arities={}", join(&self.arity_set())).unwrap();
        for (arity, count) in &self.arity_histogram {
            writeln!(out, "arity.{arity}={count}").unwrap();
        }
        for (rel, set) in &self.relation_arities {
            writeln!(out, "relation_arities.{rel}={}", join(set)).unwrap();
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<12} {:>10}", "|E|", self.num_entities).unwrap();
        writeln!(out, "{:<12} {:>10}", "|R|", self.num_relations).unwrap();
        writeln!(out, "{:<12} {:>10}", "#train", self.train).unwrap();
        writeln!(out, "{:<12} {:>10}", "#valid", self.valid).unwrap();
        writeln!(out, "{:<12} {:>10}", "#test", self.test).unwrap();
        for (arity, count) in &self.arity_histogram {
            writeln!(out, "{:<12} {:>10}", format!("#arity={arity}"), count).unwrap();
        }
        writeln!(out, "{:<12} {:>10}", "#arity>=5", self.count_arity_at_least(5)).unwrap();
        out
    }
}
