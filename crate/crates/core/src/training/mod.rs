//! Mini-batch training: masked expansion, 1-N (or sampled) cross-entropy,
//! AdaGrad, per-epoch validation and early stopping on MRR.

mod adagrad;
mod loss;
mod sampler;

pub use adagrad::{Adagrad, ADAGRAD_EPSILON};
pub use loss::{multiclass_log_loss, LossError};
pub use sampler::{sample_negatives, Negatives, SamplerError, MAX_ATTEMPTS};

use std::fmt::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{key_value_map, ConfigError, NegativeMode, RunConfig};
use crate::data::{Dataset, FilterIndex, KnowledgeTuple, Split};
use crate::eval::{evaluate_split, EvalError};
use crate::layers::{LayerError, MaskedTuple, Mode};
use crate::model::{Model, ModelError};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("the {0} split is empty")]
    EmptySplit(Split),
}

/// Every tuple of arity `n` becomes `n` masked variants, in tuple order then
/// position order.
pub fn expand_masked(batch: &[KnowledgeTuple]) -> Result<Vec<MaskedTuple>, LayerError> {
    let mut out = Vec::with_capacity(batch.iter().map(KnowledgeTuple::arity).sum());
    for t in batch {
        for pos in 0..t.arity() {
            out.push(MaskedTuple::new(t.relation, t.entities.clone(), pos)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
    /// Non-finite loss or gradient during the given 1-based epoch.
    Divergence { epoch: usize },
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Patience => f.write_str("patience"),
            Self::MaxEpochs => f.write_str("max-epochs"),
            Self::Divergence { epoch } => write!(f, "divergence@{epoch}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub wall_secs: f64,
    pub lr: f64,
}

impl EpochRecord {
    /// One `key=value` line; floats use the shortest round-trip form.
    pub fn to_record(&self) -> String {
        format!(
            "epoch={} loss={:?} mrr={:?} hits1={:?} hits3={:?} hits10={:?} wall_secs={:?} lr={:?}",
            self.epoch, self.loss, self.mrr, self.hits1, self.hits3, self.hits10, self.wall_secs, self.lr
        )
    }
}

impl FromStr for EpochRecord {
    type Err = ConfigError;

    fn from_str(line: &str) -> Result<Self, ConfigError> {
        let fields = key_value_map(&line.split_whitespace().collect::<Vec<_>>().join("\n"))?;
        let get = |key: &str| -> Result<&str, ConfigError> {
            fields
                .get(key)
                .map(String::as_str)
                .ok_or_else(|| ConfigError::Invalid(format!("epoch record missing `{key}`")))
        };
        let float = |key: &str| -> Result<f64, ConfigError> {
            get(key)?
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("epoch record `{key}` is not a number")))
        };
        Ok(Self {
            epoch: get("epoch")?
                .parse()
                .map_err(|_| ConfigError::Invalid("epoch record `epoch` is not an integer".into()))?,
            loss: float("loss")?,
            mrr: float("mrr")?,
            hits1: float("hits1")?,
            hits3: float("hits3")?,
            hits10: float("hits10")?,
            wall_secs: float("wall_secs")?,
            lr: float("lr")?,
        })
    }
}

pub fn format_epoch_log(records: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in records {
        writeln!(out, "{}", r.to_record()).unwrap();
    }
    out
}

/// Parses an epoch log, rejecting non-increasing epoch indices.
pub fn parse_epoch_log(text: &str) -> Result<Vec<EpochRecord>, ConfigError> {
    let mut out: Vec<EpochRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpochRecord = line.parse().map_err(|e: ConfigError| ConfigError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if out.last().is_some_and(|p| p.epoch >= rec.epoch) {
            return Err(ConfigError::Parse {
                line: i + 1,
                message: format!("epoch {} does not increase", rec.epoch),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of the returned snapshot; 0 when no epoch finished.
    pub best_epoch: usize,
    pub best_mrr: f64,
    pub stop_reason: StopReason,
    /// Sampled-mode slots filled with a known-true corruption.
    pub sampler_warnings: usize,
}

pub struct TrainOptions<'a> {
    /// Split whose MRR drives model selection.
    pub monitor: Split,
    /// When false every `wall_secs` is written as 0, making logs reproducible.
    pub record_wall_time: bool,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        Self {
            monitor: Split::Valid,
            record_wall_time: true,
            on_epoch: None,
        }
    }
}

/// Independent ChaCha stream `id` under `seed`; every random draw of a run
/// comes from one of these.
pub fn seeded_stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const INIT_STREAM: u64 = 0;

fn shuffle_stream(epoch: usize) -> u64 {
    2 * epoch as u64
}

fn noise_stream(epoch: usize) -> u64 {
    2 * epoch as u64 + 1
}

/// A freshly initialised model covering every arity present in the dataset.
pub fn init_model<T: Scalar>(dataset: &Dataset, config: &RunConfig) -> Result<Model<T>, TrainError> {
    let arities: std::collections::BTreeSet<usize> = dataset.all_tuples().map(KnowledgeTuple::arity).collect();
    let mut rng = seeded_stream(config.seed, INIT_STREAM);
    Ok(Model::new(
        config.clone(),
        dataset.num_entities(),
        dataset.num_relations(),
        arities,
        &mut rng,
    )?)
}

enum BatchOutcome {
    Loss { sum: f64, count: usize, warnings: usize },
    Diverged,
}

fn train_batch<T: Scalar>(
    model: &mut Model<T>,
    optimizer: &mut Adagrad<T>,
    tuples: &[KnowledgeTuple],
    epoch0: usize,
    rng: &mut ChaCha8Rng,
    sample_filter: &FilterIndex,
) -> Result<BatchOutcome, TrainError> {
    let masked = expand_masked(tuples).map_err(ModelError::from)?;
    let output = model.forward(&masked, Mode::Train, rng)?;
    let logits = model.logits(&output.v_out);
    let ne = model.num_entities();
    let n = masked.len();
    let scale = T::from_f64_lossy(1.0 / n as f64);
    let mut grad_logits = Vec::with_capacity(n * ne);
    let mut sum = 0.0;
    let mut warnings = 0;
    for (b, m) in masked.iter().enumerate() {
        let candidates = match model.config().negatives {
            NegativeMode::Full => None,
            NegativeMode::Sampled { rate } => {
                let neg = sample_negatives(m.relation, &m.entities, m.masked_pos, rate, ne, rng, sample_filter)?;
                warnings += neg.warnings;
                let mut c = neg.ids;
                c.push(m.target);
                Some(c)
            }
        };
        let (loss, grad) = multiclass_log_loss(logits.row(b), m.target, candidates.as_deref())?;
        let loss = loss.to_f64_lossy();
        if !loss.is_finite() {
            return Ok(BatchOutcome::Diverged);
        }
        sum += loss;
        grad_logits.extend(grad.into_iter().map(|g| g * scale));
    }
    let grad_logits = Tensor::new(vec![n, ne], grad_logits).map_err(ModelError::from)?;
    let grads = model.backward(&output, &grad_logits)?;
    model.update_running_stats(&output.cache);
    if let Err(name) = optimizer.step(model.params_mut(), &grads, epoch0) {
        log::error!("non-finite gradient for {name}");
        return Ok(BatchOutcome::Diverged);
    }
    Ok(BatchOutcome::Loss {
        sum,
        count: n,
        warnings,
    })
}

/// Trains from a fresh seeded initialisation and returns the best snapshot
/// by monitored MRR together with the per-epoch report.
pub fn train<T: Scalar>(
    dataset: &Dataset,
    config: &RunConfig,
    options: TrainOptions<'_>,
) -> Result<(Model<T>, TrainReport), TrainError> {
    config.validate()?;
    let model = init_model(dataset, config)?;
    train_from(model, dataset, options)
}

/// Like [`train`], starting from `model`.
pub fn train_from<T: Scalar>(
    mut model: Model<T>,
    dataset: &Dataset,
    mut options: TrainOptions<'_>,
) -> Result<(Model<T>, TrainReport), TrainError> {
    let config = model.config().clone();
    if dataset.train.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if dataset.split(options.monitor).is_empty() {
        return Err(TrainError::EmptySplit(options.monitor));
    }
    let eval_filter = FilterIndex::build(dataset);
    let sample_filter = FilterIndex::from_tuples(&dataset.train);
    let mut optimizer = Adagrad::new(model.params(), config.lr, config.lr_decay);

    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut best = model.clone();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_mrr: 0.0,
        stop_reason: StopReason::MaxEpochs,
        sampler_warnings: 0,
    };

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let epoch0 = epoch - 1;
        order.sort_unstable();
        order.shuffle(&mut seeded_stream(config.seed, shuffle_stream(epoch)));
        let mut noise = seeded_stream(config.seed, noise_stream(epoch));

        let (mut loss_sum, mut loss_count) = (0.0, 0usize);
        let mut diverged = false;
        for chunk in order.chunks(config.batch_size) {
            let tuples: Vec<KnowledgeTuple> = chunk.iter().map(|&i| dataset.train[i].clone()).collect();
            match train_batch(&mut model, &mut optimizer, &tuples, epoch0, &mut noise, &sample_filter)? {
                BatchOutcome::Loss { sum, count, warnings } => {
                    loss_sum += sum;
                    loss_count += count;
                    report.sampler_warnings += warnings;
                }
                BatchOutcome::Diverged => {
                    diverged = true;
                    break;
                }
            }
        }
        if diverged || !model.params().is_finite() {
            log::error!("training diverged in epoch {epoch}");
            report.stop_reason = StopReason::Divergence { epoch };
            break;
        }

        let metrics = evaluate_split(&model, dataset, &eval_filter, options.monitor)?;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / loss_count as f64,
            mrr: metrics.overall.mrr,
            hits1: metrics.overall.hits1,
            hits3: metrics.overall.hits3,
            hits10: metrics.overall.hits10,
            wall_secs: if options.record_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
            lr: optimizer.lr_for_epoch(epoch0),
        };
        log::info!("{}", record.to_record());
        if let Some(cb) = options.on_epoch.as_mut() {
            cb(&record);
        }
        report.epochs.push(record);

        if report.best_epoch == 0 || record.mrr > report.best_mrr {
            report.best_epoch = epoch;
            report.best_mrr = record.mrr;
            best = model.clone();
        } else if epoch - report.best_epoch >= config.patience {
            report.stop_reason = StopReason::Patience;
            break;
        }
    }
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuple(relation: usize, entities: &[usize]) -> KnowledgeTuple {
        KnowledgeTuple {
            relation,
            entities: entities.to_vec(),
        }
    }

    #[test]
    fn expansion_counts_and_order() {
        assert_eq!(expand_masked(&[tuple(0, &[1, 2])]).unwrap().len(), 2);
        let batch = [tuple(0, &[1, 2]), tuple(1, &[1, 2, 3]), tuple(2, &[1, 2, 3, 4, 5])];
        let out = expand_masked(&batch).unwrap();
        assert_eq!(out.len(), 10);
        let order: Vec<(usize, usize)> = out.iter().map(|m| (m.relation, m.masked_pos)).collect();
        assert_eq!(&order[..5], &[(0, 0), (0, 1), (1, 0), (1, 1), (1, 2)]);
        assert_eq!(out[9].target, 5);
    }

    #[test]
    fn epoch_log_round_trip() {
        let recs = vec![
            EpochRecord {
                epoch: 1,
                loss: 2.0 / 3.0,
                mrr: 0.1,
                hits1: 0.0,
                hits3: 0.25,
                hits10: 1.0,
                wall_secs: 0.123456789,
                lr: 0.001 * 0.995,
            },
            EpochRecord {
                epoch: 2,
                loss: 1e-17,
                mrr: 1.0,
                hits1: 1.0,
                hits3: 1.0,
                hits10: 1.0,
                wall_secs: 0.0,
                lr: 3.3e-5,
            },
        ];
        let text = format_epoch_log(&recs);
        let parsed = parse_epoch_log(&text).unwrap();
        assert_eq!(parsed, recs);
        assert_eq!(format_epoch_log(&parsed), text);
    }

    #[test]
    fn epoch_log_rejects_non_increasing() {
        let rec = EpochRecord {
            epoch: 3,
            loss: 1.0,
            mrr: 0.5,
            hits1: 0.0,
            hits3: 1.0,
            hits10: 1.0,
            wall_secs: 0.0,
            lr: 0.1,
        };
        let text = format_epoch_log(&[rec, rec]);
        assert!(matches!(parse_epoch_log(&text), Err(ConfigError::Parse { line: 2, .. })));
        assert!("epoch=1 loss=x".parse::<EpochRecord>().is_err());
    }

    #[test]
    fn stop_reason_display() {
        assert_eq!(StopReason::Divergence { epoch: 4 }.to_string(), "divergence@4");
        assert_eq!(StopReason::MaxEpochs.to_string(), "max-epochs");
    }
}
