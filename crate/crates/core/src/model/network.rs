//! Differentiable forward pass: positional encoding, encoder blocks, heads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::encoding::positional_encoding;
use super::params::{EncoderBlock, Head, HeadStats, Linear, ModelParams, Network};
use crate::error::{Error, Result};
use crate::numerics::{BatchNormState, NormMode, NormStats, Tape, Tensor, Var};

/// One output row of the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimestepPrediction {
    /// Distance from the window centre back to the segment start, seconds.
    pub d_start: f64,
    /// Distance from the window centre forward to the segment end, seconds.
    pub d_end: f64,
    /// Probability of the behavior class.
    pub p_event: f64,
}

/// Variable-length sequences stacked into `[batch·steps × dim]` with
/// trailing padding rows flagged invalid.
#[derive(Clone, Debug)]
pub struct PaddedBatch {
    pub features: Tensor,
    pub batch: usize,
    pub steps: usize,
    pub valid: Vec<bool>,
    pub lengths: Vec<usize>,
}

impl PaddedBatch {
    pub fn new(sequences: &[&Tensor]) -> Result<Self> {
        let Some(first) = sequences.first() else {
            return Err(Error::Invalid("empty batch".into()));
        };
        let dim = first.dims2()?.1;
        let mut lengths = Vec::with_capacity(sequences.len());
        for s in sequences {
            let (t, d) = s.dims2()?;
            if d != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: d });
            }
            if t == 0 {
                return Err(Error::Invalid("sequence with zero timesteps".into()));
            }
            lengths.push(t);
        }
        let steps = *lengths.iter().max().expect("non-empty");
        let batch = sequences.len();
        let mut data = vec![0.0; batch * steps * dim];
        let mut valid = vec![false; batch * steps];
        for (b, s) in sequences.iter().enumerate() {
            let start = b * steps;
            data[start * dim..start * dim + s.len()].copy_from_slice(s.data());
            valid[start..start + lengths[b]].fill(true);
        }
        Ok(Self { features: Tensor::new(&[batch * steps, dim], data)?, batch, steps, valid, lengths })
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    fn video_mask(&self, b: usize) -> &[bool] {
        &self.valid[b * self.steps..(b + 1) * self.steps]
    }
}

/// Running-statistics access for the head batch-norm layers.
pub enum HeadMode<'a> {
    /// Batch statistics from valid rows; running statistics are updated.
    Train { cls: &'a mut HeadStats, reg: &'a mut HeadStats },
    /// Frozen running statistics.
    Infer { cls: &'a HeadStats, reg: &'a HeadStats },
}

impl HeadMode<'_> {
    pub fn norm_mode(&self) -> NormMode {
        match self {
            HeadMode::Train { .. } => NormMode::Train,
            HeadMode::Infer { .. } => NormMode::Infer,
        }
    }
}

#[derive(Default)]
pub struct ForwardOptions<'r> {
    /// Skip the positional encoding (used for equivariance checks).
    pub no_positional_encoding: bool,
    /// Dropout source; required in training mode when the rate is positive.
    pub dropout_rng: Option<&'r mut ChaCha8Rng>,
}

/// Tape handles produced by a forward pass.
pub struct ForwardOutput {
    /// `[rows × num_classes]` softmax probabilities.
    pub probs: Var,
    /// `[rows × 2]` raw `(D_s, D_e)` regression outputs.
    pub offsets: Var,
    /// Attention weights per block, indexed `[video·heads + head]`.
    pub attention: Vec<Vec<Var>>,
}

struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else { return Ok(x) };
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..tape.value(x).len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = tape.leaf(Tensor::new(tape.shape(x), mask)?);
        tape.mul(x, mask)
    }
}

fn linear(tape: &mut Tape, x: Var, l: &Linear<Var>) -> Result<Var> {
    let y = tape.matmul(x, l.weight)?;
    tape.add_row(y, l.bias)
}

/// Multi-head self-attention over each video of `batch` independently.
///
/// Returns the projected output `[rows × d]` and the per-(video, head)
/// attention weight matrices.
pub fn multi_head_attention(
    tape: &mut Tape,
    x: Var,
    block: &EncoderBlock<Var>,
    heads: usize,
    batch: &PaddedBatch,
) -> Result<(Var, Vec<Var>)> {
    let d = tape.value(x).dims2()?.1;
    if heads == 0 || d % heads != 0 {
        return Err(Error::Shape(format!("{d} features cannot be split into {heads} heads")));
    }
    let dh = d / heads;
    let q = tape.matmul(x, block.w_q)?;
    let k = tape.matmul(x, block.w_k)?;
    let v = tape.matmul(x, block.w_v)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut per_video = Vec::with_capacity(batch.batch);
    let mut weights = Vec::with_capacity(batch.batch * heads);
    for b in 0..batch.batch {
        let mask = batch.video_mask(b);
        let rows = |tape: &mut Tape, m: Var| tape.slice_rows(m, b * batch.steps, batch.steps);
        let (qb, kb, vb) = (rows(tape, q)?, rows(tape, k)?, rows(tape, v)?);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(qb, h * dh, dh)?;
            let kh = tape.slice_cols(kb, h * dh, dh)?;
            let vh = tape.slice_cols(vb, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.masked_softmax(scores, mask)?;
            weights.push(attn);
            outs.push(tape.matmul(attn, vh)?);
        }
        per_video.push(tape.concat_cols(&outs)?);
    }
    let joined = tape.concat_rows(&per_video)?;
    Ok((linear(tape, joined, &block.attn_out)?, weights))
}

fn encoder_block_inner(
    tape: &mut Tape,
    x: Var,
    block: &EncoderBlock<Var>,
    config: &ModelConfig,
    batch: &PaddedBatch,
    dropout: &mut Dropout<'_>,
) -> Result<(Var, Vec<Var>)> {
    let (attn, weights) = multi_head_attention(tape, x, block, config.num_heads, batch)?;
    let attn = dropout.apply(tape, attn)?;
    let sum = tape.add(x, attn)?;
    let x1 = tape.layer_norm(sum, block.attn_norm.gain, block.attn_norm.bias, config.epsilon)?;
    let hidden = linear(tape, x1, &block.mlp_in)?;
    let hidden = tape.gelu(hidden);
    let mlp = linear(tape, hidden, &block.mlp_out)?;
    let mlp = dropout.apply(tape, mlp)?;
    let sum = tape.add(x1, mlp)?;
    let x2 = tape.layer_norm(sum, block.mlp_norm.gain, block.mlp_norm.bias, config.epsilon)?;
    Ok((x2, weights))
}

/// Post-norm block: `X1 = LN(X + MSA(X))`, `X2 = LN(X1 + MLP(X1))`.
pub fn encoder_block(
    tape: &mut Tape,
    x: Var,
    block: &EncoderBlock<Var>,
    config: &ModelConfig,
    batch: &PaddedBatch,
) -> Result<Var> {
    let mut off = Dropout { rate: 0.0, rng: None };
    Ok(encoder_block_inner(tape, x, block, config, batch, &mut off)?.0)
}

enum StatsRef<'a> {
    Train(&'a mut BatchNormState),
    Infer(&'a BatchNormState),
}

fn head_norm(
    tape: &mut Tape,
    x: Var,
    gain: Var,
    bias: Var,
    stats: StatsRef<'_>,
    valid: &[bool],
    eps: f64,
) -> Result<Var> {
    match stats {
        StatsRef::Train(state) => {
            let (out, batch) = tape.batch_norm(x, gain, bias, NormStats::Batch { valid_rows: valid }, eps)?;
            let (mean, var) = batch.expect("training statistics");
            state.update(&mean, &var);
            Ok(out)
        }
        StatsRef::Infer(state) => {
            if !state.initialized {
                return Err(Error::BatchNorm(
                    "inference requested before running statistics were initialised by training".into(),
                ));
            }
            let fixed = NormStats::Fixed { mean: &state.running_mean, var: &state.running_var };
            Ok(tape.batch_norm(x, gain, bias, fixed, eps)?.0)
        }
    }
}

fn head_forward(
    tape: &mut Tape,
    x: Var,
    head: &Head<Var>,
    stats: [StatsRef<'_>; 2],
    valid: &[bool],
    eps: f64,
) -> Result<Var> {
    let [s1, s2] = stats;
    let h = linear(tape, x, &head.hidden1)?;
    let h = head_norm(tape, h, head.norm1.gain, head.norm1.bias, s1, valid, eps)?;
    let h = tape.relu(h);
    let h = linear(tape, h, &head.hidden2)?;
    let h = head_norm(tape, h, head.norm2.gain, head.norm2.bias, s2, valid, eps)?;
    let h = tape.relu(h);
    linear(tape, h, &head.output)
}

/// Both prediction heads on encoder output `h`. Returns `(probs, offsets)`.
pub fn heads_forward(
    tape: &mut Tape,
    h: Var,
    net: &Network<Var>,
    mode: HeadMode<'_>,
    valid: &[bool],
    eps: f64,
) -> Result<(Var, Var)> {
    let (cls_stats, reg_stats) = match mode {
        HeadMode::Train { cls, reg } => (
            [StatsRef::Train(&mut cls.norm1), StatsRef::Train(&mut cls.norm2)],
            [StatsRef::Train(&mut reg.norm1), StatsRef::Train(&mut reg.norm2)],
        ),
        HeadMode::Infer { cls, reg } => (
            [StatsRef::Infer(&cls.norm1), StatsRef::Infer(&cls.norm2)],
            [StatsRef::Infer(&reg.norm1), StatsRef::Infer(&reg.norm2)],
        ),
    };
    let logits = head_forward(tape, h, &net.cls_head, cls_stats, valid, eps)?;
    let probs = tape.softmax(logits, 1)?;
    let offsets = head_forward(tape, h, &net.reg_head, reg_stats, valid, eps)?;
    Ok((probs, offsets))
}

/// Full forward pass of a padded batch on `tape`.
pub fn forward_tape(
    tape: &mut Tape,
    net: &Network<Var>,
    config: &ModelConfig,
    batch: &PaddedBatch,
    mode: HeadMode<'_>,
    options: ForwardOptions<'_>,
) -> Result<ForwardOutput> {
    if batch.dim() != config.feature_dim {
        return Err(Error::DimensionMismatch { expected: config.feature_dim, found: batch.dim() });
    }
    let mut x = tape.leaf(batch.features.clone());
    if !options.no_positional_encoding {
        let pe = positional_encoding(batch.steps, config.feature_dim)?;
        let mut tiled = Vec::with_capacity(batch.features.len());
        for _ in 0..batch.batch {
            tiled.extend_from_slice(pe.data());
        }
        let pe = tape.leaf(Tensor::new(batch.features.shape(), tiled)?);
        x = tape.add(x, pe)?;
    }
    let training = mode.norm_mode() == NormMode::Train;
    let mut dropout = Dropout { rate: config.dropout_rate, rng: None };
    if training && config.dropout_rate > 0.0 {
        dropout.rng = Some(options.dropout_rng.ok_or_else(|| {
            Error::Config("dropout_rate > 0 in training mode requires a random source".into())
        })?);
    }
    let mut attention = Vec::with_capacity(net.blocks.len());
    for block in &net.blocks {
        let (next, weights) = encoder_block_inner(tape, x, block, config, batch, &mut dropout)?;
        x = next;
        attention.push(weights);
    }
    let (probs, offsets) = heads_forward(tape, x, net, mode, &batch.valid, config.epsilon)?;
    Ok(ForwardOutput { probs, offsets, attention })
}

/// Reads per-video predictions off a finished forward pass, dropping padding.
pub fn collect_predictions(
    tape: &Tape,
    out: &ForwardOutput,
    batch: &PaddedBatch,
) -> Vec<Vec<TimestepPrediction>> {
    let probs = tape.value(out.probs);
    let offsets = tape.value(out.offsets);
    (0..batch.batch)
        .map(|b| {
            (0..batch.lengths[b])
                .map(|t| {
                    let r = b * batch.steps + t;
                    TimestepPrediction {
                        d_start: offsets.get2(r, 0),
                        d_end: offsets.get2(r, 1),
                        p_event: probs.get2(r, 1),
                    }
                })
                .collect()
        })
        .collect()
}

impl ModelParams {
    /// Inference-mode predictions for one `[T × feature_dim]` sequence.
    pub fn predict(&self, features: &Tensor) -> Result<Vec<TimestepPrediction>> {
        Ok(self.predict_batch(&[features])?.pop().expect("one sequence"))
    }

    pub fn predict_batch(&self, sequences: &[&Tensor]) -> Result<Vec<Vec<TimestepPrediction>>> {
        let batch = PaddedBatch::new(sequences)?;
        let mut tape = Tape::new();
        let net = self.weights.bind(&mut tape);
        let mode = HeadMode::Infer { cls: &self.cls_stats, reg: &self.reg_stats };
        let out = forward_tape(&mut tape, &net, &self.config, &batch, mode, ForwardOptions::default())?;
        Ok(collect_predictions(&tape, &out, &batch))
    }

    /// Training-mode pass without gradients; updates running statistics.
    pub fn forward_train(&mut self, sequences: &[&Tensor]) -> Result<Vec<Vec<TimestepPrediction>>> {
        let batch = PaddedBatch::new(sequences)?;
        let mut tape = Tape::new();
        let net = self.weights.bind(&mut tape);
        let mode = HeadMode::Train { cls: &mut self.cls_stats, reg: &mut self.reg_stats };
        let out = forward_tape(&mut tape, &net, &self.config, &batch, mode, ForwardOptions::default())?;
        Ok(collect_predictions(&tape, &out, &batch))
    }
}
