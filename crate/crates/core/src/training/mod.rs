//! Supervision targets, losses and the SGD epoch loop.

mod losses;
mod schedule;
mod targets;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Behavior, Corpus};
use crate::error::{Error, Result};
use crate::model::{forward_tape, init_params, ForwardOptions, HeadMode, ModelConfig, ModelParams, Network, PaddedBatch};
use crate::numerics::{Tape, Tensor};
use crate::seed::derive_seed;

pub use losses::{combine_losses, focal_loss, regression_loss, total_loss, FOCAL_CLAMP};
pub use schedule::{plateau_schedule, PlateauScheduler};
pub use targets::{make_targets, TimestepTargets};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub regression_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 10,
            learning_rate: 1e-3,
            plateau_factor: 0.01,
            plateau_patience: 5,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            regression_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)");
        }
        if self.plateau_patience == 0 {
            return bad("plateau_patience must be at least 1");
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return bad("focal_gamma must be non-negative");
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha <= 1.0) {
            return bad("focal_alpha must lie in (0, 1]");
        }
        if !(self.regression_weight >= 0.0 && self.regression_weight.is_finite()) {
            return bad("regression_weight must be non-negative");
        }
        Ok(())
    }
}

/// `p ← p − lr·g` for every parameter. Rejects the whole step if any
/// gradient is non-finite.
pub fn sgd_step(weights: &mut Network<Tensor>, grads: &Network<Tensor>, lr: f64) -> Result<()> {
    if let Some((name, _)) = grads.named().into_iter().find(|(_, g)| !g.all_finite()) {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    let mut grads = grads.named().into_iter().map(|(_, g)| g);
    let mut mismatch = None;
    weights.visit_mut(&mut |name, w| {
        let g = grads.next().expect("same structure");
        if g.shape() != w.shape() {
            mismatch.get_or_insert_with(|| format!("{name}: gradient {:?} for weight {:?}", g.shape(), w.shape()));
            return;
        }
        for (p, d) in w.data_mut().iter_mut().zip(g.data()) {
            *p -= lr * d;
        }
    });
    match mismatch {
        Some(m) => Err(Error::Shape(m)),
        None => Ok(()),
    }
}

/// One video prepared for training.
#[derive(Clone, Debug)]
pub struct TrainingExample {
    pub video_id: String,
    pub features: Tensor,
    pub targets: TimestepTargets,
}

/// Examples for `behavior` from the corpus videos at `indices`.
pub fn examples_from_corpus(corpus: &Corpus, indices: &[usize], behavior: Behavior) -> Result<Vec<TrainingExample>> {
    indices
        .iter()
        .map(|&i| {
            let seq = &corpus.features[i];
            let track = corpus.annotations.track(&seq.video_id, behavior);
            Ok(TrainingExample {
                video_id: seq.video_id.clone(),
                features: seq.to_tensor(),
                targets: make_targets(&track.segments, &seq.grid().centers())?,
            })
        })
        .collect()
}

/// Per-epoch training record (one JSON line each).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cls_loss: f64,
    pub reg_loss: f64,
    pub total_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

/// Losses of one padded batch.
pub struct BatchLoss {
    pub cls: f64,
    pub reg: f64,
    pub total: f64,
}

/// Stacks examples into a padded batch with matching padded targets.
pub fn pad_batch(examples: &[&TrainingExample]) -> Result<(PaddedBatch, Vec<usize>, Tensor, Vec<bool>)> {
    let feats: Vec<&Tensor> = examples.iter().map(|e| &e.features).collect();
    let batch = PaddedBatch::new(&feats)?;
    let rows = batch.batch * batch.steps;
    let mut labels = vec![0; rows];
    let mut offsets = vec![0.0; rows * 2];
    let mut reg_mask = vec![false; rows];
    for (b, e) in examples.iter().enumerate() {
        let t = &e.targets;
        if t.len() != batch.lengths[b] {
            return Err(Error::Shape(format!(
                "{}: {} targets for {} timesteps",
                e.video_id,
                t.len(),
                batch.lengths[b]
            )));
        }
        for i in 0..t.len() {
            let r = b * batch.steps + i;
            labels[r] = t.labels[i];
            offsets[2 * r] = t.offsets[i][0];
            offsets[2 * r + 1] = t.offsets[i][1];
            reg_mask[r] = t.reg_mask[i] && t.valid[i];
        }
    }
    Ok((batch, labels, Tensor::new(&[rows, 2], offsets)?, reg_mask))
}

/// Forward, loss and backward for one batch; updates running statistics and
/// applies an SGD step.
pub fn train_step(
    params: &mut ModelParams,
    examples: &[&TrainingExample],
    config: &TrainConfig,
    lr: f64,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<BatchLoss> {
    let (batch, labels, offsets, reg_mask) = pad_batch(examples)?;
    let mut tape = Tape::new();
    let net = params.weights.bind(&mut tape);
    let mut stats = (params.cls_stats.clone(), params.reg_stats.clone());
    let mode = HeadMode::Train { cls: &mut stats.0, reg: &mut stats.1 };
    let options = ForwardOptions { dropout_rng: Some(dropout_rng), ..Default::default() };
    let out = forward_tape(&mut tape, &net, &params.config, &batch, mode, options)?;
    let cls = focal_loss(&mut tape, out.probs, &labels, &batch.valid, Some(config.focal_alpha), config.focal_gamma)?;
    let reg = regression_loss(&mut tape, out.offsets, &offsets, &reg_mask)?;
    let total = total_loss(&mut tape, cls, reg, config.regression_weight)?;
    let values = BatchLoss {
        cls: tape.value(cls).item()?,
        reg: tape.value(reg).item()?,
        total: tape.value(total).item()?,
    };
    combine_losses(values.cls, values.reg, config.regression_weight)?;
    let grads = tape.backward(total)?;
    let grads = net.map(&mut |_, v| grads.get(*v));
    sgd_step(&mut params.weights, &grads, lr)?;
    params.cls_stats = stats.0;
    params.reg_stats = stats.1;
    Ok(values)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
}

/// Mini-batch SGD over seeded per-epoch shuffles, with plateau decay driven
/// by the epoch-mean total loss. Each epoch record is also written as a JSON
/// line to `log_sink` when one is given.
pub fn train(
    examples: &[TrainingExample],
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    if examples.is_empty() {
        return Err(Error::Invalid("no training videos".into()));
    }
    let mut params = init_params(model_config, model_config.seed)?;
    let mut scheduler = PlateauScheduler::new(config.learning_rate, config.plateau_factor, config.plateau_patience);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "dropout", 0));
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "shuffle", epoch as u64)));
        let lr = scheduler.lr();
        let (mut cls, mut reg, mut total) = (0.0, 0.0, 0.0);
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        for (b, idx) in batches.iter().enumerate() {
            let chunk: Vec<&TrainingExample> = idx.iter().map(|&i| &examples[i]).collect();
            let loss = train_step(&mut params, &chunk, config, lr, &mut dropout_rng).map_err(|e| match e {
                Error::NonFinite(detail) => Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                    videos: chunk.iter().map(|e| e.video_id.clone()).collect(),
                    detail,
                },
                other => other,
            })?;
            cls += loss.cls;
            reg += loss.reg;
            total += loss.total;
        }
        let n = batches.len() as f64;
        let record = EpochRecord { epoch, cls_loss: cls / n, reg_loss: reg / n, total_loss: total / n, lr };
        if let Some(sink) = log_sink.as_deref_mut() {
            let line = serde_json::to_string(&record).map_err(|e| Error::Invalid(e.to_string()))?;
            writeln!(sink, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        scheduler.step(record.total_loss);
        log.push(record);
    }
    Ok(TrainOutcome { params, log })
}
