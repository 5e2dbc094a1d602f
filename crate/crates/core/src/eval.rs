//! Filtered link-prediction evaluation: every position of every tuple is
//! masked in turn, all entities are scored, other known-true completions are
//! removed, and the target's tie-averaged rank feeds MRR and Hits@k.

use std::collections::BTreeMap;
use std::fmt::Write;

use thiserror::Error;

use crate::data::{Dataset, FilterIndex, KnowledgeTuple, Split};
use crate::layers::MaskedTuple;
use crate::model::{Model, ModelError};
use crate::tensor::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("target {0} is in its own filtered-out set")]
    TargetFiltered(usize),
    #[error("target {target} outside {len} logits")]
    TargetOutOfRange { target: usize, len: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Anything that can assign a logit to every entity for a masked tuple.
pub trait EntityScorer {
    fn supports_arity(&self, arity: usize) -> bool;
    /// One logit vector of length `|E|` per masked tuple.
    fn score_batch(&self, batch: &[MaskedTuple]) -> Result<Vec<Vec<f64>>>;
}

impl<T: Scalar> EntityScorer for Model<T> {
    fn supports_arity(&self, arity: usize) -> bool {
        Model::supports_arity(self, arity)
    }

    fn score_batch(&self, batch: &[MaskedTuple]) -> Result<Vec<Vec<f64>>> {
        let logits = self.predict_logits(batch)?;
        Ok((0..batch.len())
            .map(|b| logits.row(b).iter().map(|v| v.to_f64_lossy()).collect())
            .collect())
    }
}

/// `1 + #{higher} + #{ties} / 2` over candidates that are neither the
/// target nor filtered out.
pub fn rank_of_target(logits: &[f64], target: usize, filtered_out: &[bool]) -> Result<f64> {
    if target >= logits.len() {
        return Err(EvalError::TargetOutOfRange {
            target,
            len: logits.len(),
        });
    }
    if filtered_out.get(target).copied().unwrap_or(false) {
        return Err(EvalError::TargetFiltered(target));
    }
    let t = logits[target];
    let (mut higher, mut ties) = (0usize, 0usize);
    for (c, &l) in logits.iter().enumerate() {
        if c == target || filtered_out.get(c).copied().unwrap_or(false) {
            continue;
        }
        if l > t {
            higher += 1;
        } else if l == t {
            ties += 1;
        }
    }
    Ok(1.0 + higher as f64 + ties as f64 / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRecord {
    pub tuple: usize,
    /// 0-based masked position.
    pub position: usize,
    pub arity: usize,
    pub rank: f64,
    /// Candidates left after filtering, target included.
    pub candidates: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl Summary {
    pub fn from_ranks(ranks: impl IntoIterator<Item = f64>) -> Self {
        let (mut count, mut rr, mut h1, mut h3, mut h10) = (0usize, 0.0, 0usize, 0usize, 0usize);
        for r in ranks {
            count += 1;
            rr += 1.0 / r;
            h1 += usize::from(r <= 1.0);
            h3 += usize::from(r <= 3.0);
            h10 += usize::from(r <= 10.0);
        }
        if count == 0 {
            return Self::default();
        }
        let n = count as f64;
        Self {
            count,
            mrr: rr / n,
            hits1: h1 as f64 / n,
            hits3: h3 as f64 / n,
            hits10: h10 as f64 / n,
        }
    }

    fn record(&self, scope: &str) -> String {
        format!(
            "scope={scope} count={} mrr={:?} hits1={:?} hits3={:?} hits10={:?}",
            self.count, self.mrr, self.hits1, self.hits3, self.hits10
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub overall: Summary,
    pub per_arity: BTreeMap<usize, Summary>,
    /// Keyed by 1-based position.
    pub per_position: BTreeMap<usize, Summary>,
    /// Queries skipped because the scorer has no parameters for their arity.
    pub skipped_unsupported: usize,
}

impl MetricsReport {
    pub fn from_records(records: &[RankRecord]) -> Self {
        let mut by_arity: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut by_pos: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in records {
            by_arity.entry(r.arity).or_default().push(r.rank);
            by_pos.entry(r.position + 1).or_default().push(r.rank);
        }
        Self {
            overall: Summary::from_ranks(records.iter().map(|r| r.rank)),
            per_arity: by_arity.into_iter().map(|(k, v)| (k, Summary::from_ranks(v))).collect(),
            per_position: by_pos.into_iter().map(|(k, v)| (k, Summary::from_ranks(v))).collect(),
            skipped_unsupported: 0,
        }
    }

    pub fn mrr(&self) -> f64 {
        self.overall.mrr
    }

    /// One `key=value` record per breakdown.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} skipped={}", self.overall.record("all"), self.skipped_unsupported).unwrap();
        for (a, s) in &self.per_arity {
            writeln!(out, "{}", s.record(&format!("arity.{a}"))).unwrap();
        }
        for (p, s) in &self.per_position {
            writeln!(out, "{}", s.record(&format!("position.{p}"))).unwrap();
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8}", "scope", "count", "MRR", "H@1", "H@3", "H@10").unwrap();
        let mut row = |name: String, s: &Summary| {
            writeln!(
                out,
                "{:<12} {:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                name, s.count, s.mrr, s.hits1, s.hits3, s.hits10
            )
            .unwrap();
        };
        row("all".into(), &self.overall);
        for (a, s) in &self.per_arity {
            row(format!("arity={a}"), s);
        }
        for (p, s) in &self.per_position {
            row(format!("position={p}"), s);
        }
        out
    }
}

/// Ranks every (tuple, position) query of `tuples` in batches of `batch_size`.
pub fn evaluate_tuples<S: EntityScorer + ?Sized>(
    scorer: &S,
    tuples: &[KnowledgeTuple],
    filter: &FilterIndex,
    batch_size: usize,
) -> Result<(MetricsReport, Vec<RankRecord>)> {
    let mut queries = Vec::new();
    let mut skipped = 0;
    for (ti, t) in tuples.iter().enumerate() {
        if !scorer.supports_arity(t.arity()) {
            skipped += t.arity();
            continue;
        }
        for pos in 0..t.arity() {
            let m = MaskedTuple::new(t.relation, t.entities.clone(), pos)
                .map_err(|e| EvalError::Model(e.into()))?;
            queries.push((ti, m));
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} evaluation queries skipped: arity not supported by the model");
    }

    let mut records = Vec::with_capacity(queries.len());
    let mut mask: Vec<bool> = Vec::new();
    for chunk in queries.chunks(batch_size.max(1)) {
        let batch: Vec<MaskedTuple> = chunk.iter().map(|(_, m)| m.clone()).collect();
        let scores = scorer.score_batch(&batch)?;
        for ((ti, m), logits) in chunk.iter().zip(scores) {
            mask.clear();
            mask.resize(logits.len(), false);
            let mut removed = 0;
            for &e in filter.true_replacements(m.relation, &m.entities, m.masked_pos) {
                if e != m.target && e < mask.len() && !mask[e] {
                    mask[e] = true;
                    removed += 1;
                }
            }
            let rank = rank_of_target(&logits, m.target, &mask)?;
            records.push(RankRecord {
                tuple: *ti,
                position: m.masked_pos,
                arity: m.arity(),
                rank,
                candidates: logits.len() - removed,
            });
        }
    }
    let mut report = MetricsReport::from_records(&records);
    report.skipped_unsupported = skipped;
    Ok((report, records))
}

pub fn evaluate_split<S: EntityScorer + ?Sized>(
    scorer: &S,
    dataset: &Dataset,
    filter: &FilterIndex,
    split: Split,
) -> Result<MetricsReport> {
    Ok(evaluate_tuples(scorer, dataset.split(split), filter, 256)?.0)
}
