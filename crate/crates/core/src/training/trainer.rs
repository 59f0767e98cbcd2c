//! Minibatch training loop.
//!
//! Records of a batch are processed in fixed-size chunks; each chunk sums its
//! records' gradients in order and the chunk sums are then added in order.
//! The parallel and serial paths share this reduction tree, so they produce
//! bitwise-identical parameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AdamaxConfig, AdamaxState, LossWeights, Schedule};
use crate::data::{batches, FeatureRecord, SplitFractions};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{BatchNorms, Model, ModelConfig, RecordLoss, Task};
use crate::numerics::Rng;
use crate::params::Parameterized;

/// Records per gradient-reduction chunk.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub optimizer: AdamaxConfig,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub seed: u64,
    pub split: SplitFractions,
    /// Serial execution; results are identical either way, this only pins
    /// the thread count to one.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            optimizer: AdamaxConfig::default(),
            schedule: Schedule::default(),
            batch_size: 64,
            seed: 0,
            split: SplitFractions::default(),
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        self.schedule.validate()?;
        self.split.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", o.lr)));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::config("Adamax betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Mean losses; task terms are `None` when the task is ablated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossSummary {
    pub total: f64,
    pub share: f64,
    pub topic: Option<f64>,
    pub sentiment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossSummary,
    pub val_topic_map: Option<f64>,
    pub val_sentiment_map: Option<f64>,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str =
        "epoch,lr,L_total,L_share,L_topic,L_sentiment,val_topic_mAP,val_sentiment_mAP";

    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "NaN".to_string(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.loss.total,
            self.loss.share,
            f(self.loss.topic),
            f(self.loss.sentiment),
            f(self.val_topic_map),
            f(self.val_sentiment_map)
        )
    }

    /// Validation score used for model selection.
    fn selection_score(&self) -> Option<f64> {
        match (self.val_topic_map, self.val_sentiment_map) {
            (Some(t), Some(s)) => Some((t + s) / 2.0),
            (Some(v), None) | (None, Some(v)) => Some(v),
            (None, None) => None,
        }
    }
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation score (the last
    /// epoch when no validation score is available).
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub optimizer: AdamaxState,
    pub curve: Vec<EpochStats>,
}

#[derive(Default)]
struct LossAcc {
    share: f64,
    share_n: usize,
    topic: f64,
    sentiment: f64,
    n: usize,
}

impl LossAcc {
    fn add(&mut self, l: &RecordLoss) {
        if let Some(s) = l.share {
            self.share += s;
            self.share_n += 1;
        }
        self.topic += l.topic.unwrap_or(0.0);
        self.sentiment += l.sentiment.unwrap_or(0.0);
        self.n += 1;
    }

    fn summary(&self, config: &ModelConfig, w: &LossWeights) -> LossSummary {
        let share = if self.share_n == 0 {
            0.0
        } else {
            self.share / self.share_n as f64
        };
        let n = self.n.max(1) as f64;
        let topic = config.task_active(Task::Topic).then(|| self.topic / n);
        let sentiment = config.task_active(Task::Sentiment).then(|| self.sentiment / n);
        let w = config.effective_weights(w);
        LossSummary {
            total: share + w.alpha * topic.unwrap_or(0.0) + w.beta * sentiment.unwrap_or(0.0),
            share,
            topic,
            sentiment,
        }
    }
}

/// Gradient and per-record losses of one batch. `stream_seed` seeds one
/// dropout stream per record position; `None` runs in evaluation mode.
pub fn batch_gradient(
    model: &Model,
    records: &[&FeatureRecord],
    weights: &LossWeights,
    stream_seed: Option<u64>,
    parallel: bool,
) -> Result<(Model, Vec<RecordLoss>)> {
    let norms = BatchNorms::of(records);
    let run_chunk = |(c, chunk): (usize, &[&FeatureRecord])| -> Result<(Model, Vec<RecordLoss>)> {
        let mut grads = model.zeros_like();
        let mut losses = Vec::with_capacity(chunk.len());
        for (i, rec) in chunk.iter().enumerate() {
            let mut rng = stream_seed.map(|s| Rng::with_stream(s, (c * CHUNK + i) as u64));
            losses.push(model.accumulate_record(rec, weights, norms, rng.as_mut(), &mut grads)?);
        }
        Ok((grads, losses))
    };
    let parts: Vec<(Model, Vec<RecordLoss>)> = if parallel {
        records.par_chunks(CHUNK).enumerate().map(run_chunk).collect::<Result<_>>()?
    } else {
        records.chunks(CHUNK).enumerate().map(run_chunk).collect::<Result<_>>()?
    };
    let mut iter = parts.into_iter();
    let (mut total, mut losses) = iter.next().unwrap_or_else(|| (model.zeros_like(), Vec::new()));
    for (g, l) in iter {
        total.add_scaled_from(1.0, &g);
        losses.extend(l);
    }
    Ok((total, losses))
}

/// Evaluation-mode losses over a whole record set.
pub fn dataset_losses(model: &Model, records: &[FeatureRecord], weights: &LossWeights) -> Result<LossSummary> {
    let mut acc = LossAcc::default();
    for rec in records {
        let (bundle, _) = model.shared_forward(rec, None)?;
        let mut l = RecordLoss {
            share: crate::training::loss::record_share(&bundle.reconstructions),
            ..RecordLoss::default()
        };
        for task in Task::BOTH {
            if !model.config.task_active(task) {
                continue;
            }
            let (probs, _) = model.task_forward(task, &bundle, None)?;
            match task {
                Task::Topic => l.topic = Some(super::loss::loss_ml(&probs, &rec.topic_labels)?),
                Task::Sentiment => l.sentiment = Some(super::loss::loss_ml(&probs, &rec.sentiment_labels)?),
            }
        }
        acc.add(&l);
    }
    Ok(acc.summary(&model.config, weights))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub topic: Option<MetricsReport>,
    pub sentiment: Option<MetricsReport>,
}

/// Metrics for both tasks; a task with no evaluable class reports `None`.
pub fn evaluate(model: &Model, records: &[FeatureRecord], threshold: f64) -> Result<EvalReport> {
    let mut topic = Vec::with_capacity(records.len());
    let mut sentiment = Vec::with_capacity(records.len());
    for rec in records {
        let (t, s) = model.predict_probs(rec)?;
        topic.push(t);
        sentiment.push(s);
    }
    let report = |probs: &[Vec<f64>], labels: Vec<Vec<u8>>| match MetricsReport::compute(probs, &labels, threshold) {
        Ok(r) => Ok(Some(r)),
        Err(Error::Usage(_)) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(EvalReport {
        topic: report(&topic, records.iter().map(|r| r.topic_labels.clone()).collect())?,
        sentiment: report(&sentiment, records.iter().map(|r| r.sentiment_labels.clone()).collect())?,
    })
}

fn first_non_finite(grads: &Model) -> String {
    grads
        .tensors()
        .into_iter()
        .find(|(_, m)| !m.is_finite())
        .map_or_else(|| "<none>".to_string(), |(p, _)| p)
}

/// Trains from a fresh model initialized with `config.seed`.
pub fn train(
    config: &TrainConfig,
    train_set: &[FeatureRecord],
    val_set: &[FeatureRecord],
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    let model = Model::build(config.model.clone(), config.seed)?;
    train_from(config, model, train_set, val_set, on_epoch)
}

pub fn train_from(
    config: &TrainConfig,
    mut model: Model,
    train_set: &[FeatureRecord],
    val_set: &[FeatureRecord],
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::usage("training split is empty"));
    }
    let mut opt = AdamaxState::new(config.optimizer, &model);
    let mut shuffle = Rng::with_stream(config.seed, 1);
    let mut curve = Vec::with_capacity(config.schedule.total_epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 0..config.schedule.total_epochs {
        opt.lr = config.schedule.lr_at(config.optimizer.lr, epoch);
        let mut acc = LossAcc::default();
        for (b, idx) in batches(train_set.len(), config.batch_size, &mut shuffle)?.iter().enumerate() {
            let recs: Vec<&FeatureRecord> = idx.iter().map(|&i| &train_set[i]).collect();
            let stream = shuffle.next_u64();
            let (grads, losses) = batch_gradient(&model, &recs, &config.weights, Some(stream), !config.deterministic)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::numeric(format!("epoch {epoch}, batch {b}: {m}")),
                    other => other,
                })?;
            for l in &losses {
                acc.add(l);
            }
            let batch_loss = {
                let mut a = LossAcc::default();
                losses.iter().for_each(|l| a.add(l));
                a.summary(&model.config, &config.weights).total
            };
            if !batch_loss.is_finite() || grads.tensors().iter().any(|(_, m)| !m.is_finite()) {
                return Err(Error::numeric(format!(
                    "epoch {epoch}, batch {b}: loss {batch_loss}; first non-finite gradient in `{}`",
                    first_non_finite(&grads)
                )));
            }
            opt.step(&mut model, &grads)?;
        }

        let (val_topic_map, val_sentiment_map) = if val_set.is_empty() {
            (None, None)
        } else {
            let r = evaluate(&model, val_set, 0.5)?;
            let pick = |task: Task, m: Option<MetricsReport>| {
                m.filter(|_| model.config.task_active(task)).map(|m| m.map)
            };
            (pick(Task::Topic, r.topic), pick(Task::Sentiment, r.sentiment))
        };
        let stats = EpochStats {
            epoch,
            lr: opt.lr,
            loss: acc.summary(&model.config, &config.weights),
            val_topic_map,
            val_sentiment_map,
        };
        log::info!(
            "epoch {epoch}: lr {:.3e} loss {:.5} val mAP topic {:?} sentiment {:?}",
            stats.lr,
            stats.loss.total,
            stats.val_topic_map,
            stats.val_sentiment_map
        );
        on_epoch(&stats);
        if let Some(score) = stats.selection_score() {
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, epoch, model.clone()));
            }
        }
        curve.push(stats);
    }

    let last_epoch = config.schedule.total_epochs.saturating_sub(1);
    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => (last_epoch, model.clone()),
    };
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        last: model,
        optimizer: opt,
        curve,
    })
}
