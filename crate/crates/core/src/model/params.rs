//! Learnable arrays and batch-norm running statistics.
//!
//! The parameter tree is generic over its leaf type so the same structure
//! holds owned tensors ([`Network<Tensor>`]) or tape handles
//! ([`Network<Var>`]) during a differentiable forward pass. Every traversal
//! (`map`, `visit_mut`) walks leaves in one canonical order, which is also
//! the checkpoint order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::Result;
use crate::numerics::{BatchNormState, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `[in × out]`
    pub weight: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm<T> {
    pub gain: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub attn_out: Linear<T>,
    pub attn_norm: Norm<T>,
    pub mlp_in: Linear<T>,
    pub mlp_out: Linear<T>,
    pub mlp_norm: Norm<T>,
}

/// Linear → batch-norm → ReLU → linear → batch-norm → ReLU → linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Head<T> {
    pub hidden1: Linear<T>,
    pub norm1: Norm<T>,
    pub hidden2: Linear<T>,
    pub norm2: Norm<T>,
    pub output: Linear<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub blocks: Vec<EncoderBlock<T>>,
    pub cls_head: Head<T>,
    pub reg_head: Head<T>,
}

type MapFn<'a, T, U> = dyn FnMut(&str, &T) -> U + 'a;
type VisitFn<'a, T> = dyn FnMut(&str, &mut T) + 'a;

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T> Linear<T> {
    fn map<U>(&self, p: &str, f: &mut MapFn<'_, T, U>) -> Linear<U> {
        Linear { weight: f(&join(p, "weight"), &self.weight), bias: f(&join(p, "bias"), &self.bias) }
    }

    fn visit_mut(&mut self, p: &str, f: &mut VisitFn<'_, T>) {
        f(&join(p, "weight"), &mut self.weight);
        f(&join(p, "bias"), &mut self.bias);
    }
}

impl<T> Norm<T> {
    fn map<U>(&self, p: &str, f: &mut MapFn<'_, T, U>) -> Norm<U> {
        Norm { gain: f(&join(p, "gain"), &self.gain), bias: f(&join(p, "bias"), &self.bias) }
    }

    fn visit_mut(&mut self, p: &str, f: &mut VisitFn<'_, T>) {
        f(&join(p, "gain"), &mut self.gain);
        f(&join(p, "bias"), &mut self.bias);
    }
}

impl<T> EncoderBlock<T> {
    fn map<U>(&self, p: &str, f: &mut MapFn<'_, T, U>) -> EncoderBlock<U> {
        EncoderBlock {
            w_q: f(&join(p, "w_q"), &self.w_q),
            w_k: f(&join(p, "w_k"), &self.w_k),
            w_v: f(&join(p, "w_v"), &self.w_v),
            attn_out: self.attn_out.map(&join(p, "attn_out"), f),
            attn_norm: self.attn_norm.map(&join(p, "attn_norm"), f),
            mlp_in: self.mlp_in.map(&join(p, "mlp_in"), f),
            mlp_out: self.mlp_out.map(&join(p, "mlp_out"), f),
            mlp_norm: self.mlp_norm.map(&join(p, "mlp_norm"), f),
        }
    }

    fn visit_mut(&mut self, p: &str, f: &mut VisitFn<'_, T>) {
        f(&join(p, "w_q"), &mut self.w_q);
        f(&join(p, "w_k"), &mut self.w_k);
        f(&join(p, "w_v"), &mut self.w_v);
        self.attn_out.visit_mut(&join(p, "attn_out"), f);
        self.attn_norm.visit_mut(&join(p, "attn_norm"), f);
        self.mlp_in.visit_mut(&join(p, "mlp_in"), f);
        self.mlp_out.visit_mut(&join(p, "mlp_out"), f);
        self.mlp_norm.visit_mut(&join(p, "mlp_norm"), f);
    }
}

impl<T> Head<T> {
    fn map<U>(&self, p: &str, f: &mut MapFn<'_, T, U>) -> Head<U> {
        Head {
            hidden1: self.hidden1.map(&join(p, "hidden1"), f),
            norm1: self.norm1.map(&join(p, "norm1"), f),
            hidden2: self.hidden2.map(&join(p, "hidden2"), f),
            norm2: self.norm2.map(&join(p, "norm2"), f),
            output: self.output.map(&join(p, "output"), f),
        }
    }

    fn visit_mut(&mut self, p: &str, f: &mut VisitFn<'_, T>) {
        self.hidden1.visit_mut(&join(p, "hidden1"), f);
        self.norm1.visit_mut(&join(p, "norm1"), f);
        self.hidden2.visit_mut(&join(p, "hidden2"), f);
        self.norm2.visit_mut(&join(p, "norm2"), f);
        self.output.visit_mut(&join(p, "output"), f);
    }
}

impl<T> Network<T> {
    pub fn map<U>(&self, f: &mut MapFn<'_, T, U>) -> Network<U> {
        Network {
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| b.map(&format!("blocks.{i}"), f))
                .collect(),
            cls_head: self.cls_head.map("cls_head", f),
            reg_head: self.reg_head.map("reg_head", f),
        }
    }

    pub fn visit_mut(&mut self, f: &mut VisitFn<'_, T>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("blocks.{i}"), f);
        }
        self.cls_head.visit_mut("cls_head", f);
        self.reg_head.visit_mut("reg_head", f);
    }

    /// Leaves with their dotted names, in canonical order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut names = Vec::new();
        self.map(&mut |name, _| names.push(name.to_string()));
        let mut refs = Vec::with_capacity(names.len());
        collect_refs(self, &mut refs);
        names.into_iter().zip(refs).collect()
    }
}

fn collect_refs<'a, T>(net: &'a Network<T>, out: &mut Vec<&'a T>) {
    fn lin<'a, T>(l: &'a Linear<T>, out: &mut Vec<&'a T>) {
        out.push(&l.weight);
        out.push(&l.bias);
    }
    fn norm<'a, T>(n: &'a Norm<T>, out: &mut Vec<&'a T>) {
        out.push(&n.gain);
        out.push(&n.bias);
    }
    fn head<'a, T>(h: &'a Head<T>, out: &mut Vec<&'a T>) {
        lin(&h.hidden1, out);
        norm(&h.norm1, out);
        lin(&h.hidden2, out);
        norm(&h.norm2, out);
        lin(&h.output, out);
    }
    for b in &net.blocks {
        out.push(&b.w_q);
        out.push(&b.w_k);
        out.push(&b.w_v);
        lin(&b.attn_out, out);
        norm(&b.attn_norm, out);
        lin(&b.mlp_in, out);
        lin(&b.mlp_out, out);
        norm(&b.mlp_norm, out);
    }
    head(&net.cls_head, out);
    head(&net.reg_head, out);
}

impl Network<Tensor> {
    /// Registers every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Network<Var> {
        self.map(&mut |_, t| tape.leaf(t.clone()))
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Running statistics of the two batch-norm layers of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadStats {
    pub norm1: BatchNormState,
    pub norm2: BatchNormState,
}

impl HeadStats {
    fn new(config: &ModelConfig) -> Self {
        Self {
            norm1: BatchNormState::new(config.head_hidden_1),
            norm2: BatchNormState::new(config.head_hidden_2),
        }
    }

    pub fn initialized(&self) -> bool {
        self.norm1.initialized && self.norm2.initialized
    }
}

/// All learnable arrays plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Network<Tensor>,
    pub cls_stats: HeadStats,
    pub reg_stats: HeadStats,
}

impl ModelParams {
    pub fn parameter_count(&self) -> usize {
        self.weights.parameter_count()
    }

    /// Named running-statistics states in canonical order.
    pub fn norm_states(&self) -> [(&'static str, &BatchNormState); 4] {
        [
            ("cls_head.norm1", &self.cls_stats.norm1),
            ("cls_head.norm2", &self.cls_stats.norm2),
            ("reg_head.norm1", &self.reg_stats.norm1),
            ("reg_head.norm2", &self.reg_stats.norm2),
        ]
    }

    pub fn norm_states_mut(&mut self) -> [(&'static str, &mut BatchNormState); 4] {
        [
            ("cls_head.norm1", &mut self.cls_stats.norm1),
            ("cls_head.norm2", &mut self.cls_stats.norm2),
            ("reg_head.norm1", &mut self.reg_stats.norm1),
            ("reg_head.norm2", &mut self.reg_stats.norm2),
        ]
    }
}

/// Shapes of every parameter for `config`, in canonical order.
pub fn parameter_shapes(config: &ModelConfig) -> Network<Vec<usize>> {
    let d = config.feature_dim;
    let linear = |i: usize, o: usize| Linear { weight: vec![i, o], bias: vec![o] };
    let norm = |n: usize| Norm { gain: vec![n], bias: vec![n] };
    let head = |out: usize| Head {
        hidden1: linear(d, config.head_hidden_1),
        norm1: norm(config.head_hidden_1),
        hidden2: linear(config.head_hidden_1, config.head_hidden_2),
        norm2: norm(config.head_hidden_2),
        output: linear(config.head_hidden_2, out),
    };
    Network {
        blocks: (0..config.num_encoder_blocks)
            .map(|_| EncoderBlock {
                w_q: vec![d, d],
                w_k: vec![d, d],
                w_v: vec![d, d],
                attn_out: linear(d, d),
                attn_norm: norm(d),
                mlp_in: linear(d, config.ff_dim),
                mlp_out: linear(config.ff_dim, d),
                mlp_norm: norm(d),
            })
            .collect(),
        cls_head: head(config.num_classes),
        reg_head: head(2),
    }
}

/// Scaled-uniform (Glorot) weights with bound `sqrt(6/(fan_in+fan_out))`,
/// zero biases, unit gains. Deterministic in `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = parameter_shapes(config).map(&mut |name, shape| {
        if let [fan_in, fan_out] = shape[..] {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::new(shape, data).expect("extents match")
        } else if name.ends_with("gain") {
            Tensor::ones(shape)
        } else {
            Tensor::zeros(shape)
        }
    });
    Ok(ModelParams {
        config: config.clone(),
        weights,
        cls_stats: HeadStats::new(config),
        reg_stats: HeadStats::new(config),
    })
}
