use super::*;
use crate::numerics::{BatchNormState, Tape, Tensor};
use crate::testutil::reference::{self as oracle, Mat};
use crate::testutil::{numeric_gradient, random_tensor, relative_error};

fn small() -> ModelConfig {
    ModelConfig {
        feature_dim: 8,
        num_heads: 2,
        ff_dim: 16,
        num_encoder_blocks: 1,
        head_hidden_1: 8,
        head_hidden_2: 4,
        ..ModelConfig::default()
    }
}

/// Random weights (biases and gains included) with populated running statistics.
fn random_params(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut params = init_params(config, seed).unwrap();
    let mut k = seed * 1000;
    params.weights.visit_mut(&mut |_, t| {
        k += 1;
        let r = random_tensor(t.shape(), k);
        *t = r.map(|v| 0.5 * v);
    });
    for (i, (_, s)) in params.norm_states_mut().into_iter().enumerate() {
        let n = s.features();
        let mean = random_tensor(&[n], 77 + i as u64).into_data();
        let var = random_tensor(&[n], 88 + i as u64).map(|v| 0.5 + v.abs()).into_data();
        *s = BatchNormState::from_stats(mean, var);
    }
    params
}

fn block_oracle(x: &Mat, p: &EncoderBlock<Tensor>, heads: usize, eps: f64) -> Mat {
    let d = x[0].len();
    let dh = d / heads;
    let q = oracle::matmul(x, &oracle::mat(&p.w_q));
    let k = oracle::matmul(x, &oracle::mat(&p.w_k));
    let v = oracle::matmul(x, &oracle::mat(&p.w_v));
    let cols = |m: &Mat, h: usize| -> Mat { m.iter().map(|r| r[h * dh..(h + 1) * dh].to_vec()).collect() };
    let mut concat: Mat = vec![Vec::new(); x.len()];
    for h in 0..heads {
        let s = oracle::matmul(&cols(&q, h), &oracle::transpose(&cols(&k, h)));
        let s = oracle::map(&s, |z| z / (dh as f64).sqrt());
        let a = oracle::masked_softmax(&s, &vec![true; x.len()]);
        let o = oracle::matmul(&a, &cols(&v, h));
        for (row, part) in concat.iter_mut().zip(o) {
            row.extend(part);
        }
    }
    let attn = oracle::linear(&concat, &p.attn_out.weight, &p.attn_out.bias);
    let x1 = oracle::layer_norm(&oracle::add(x, &attn), p.attn_norm.gain.data(), p.attn_norm.bias.data(), eps);
    let h = oracle::map(&oracle::linear(&x1, &p.mlp_in.weight, &p.mlp_in.bias), oracle::gelu);
    let m = oracle::linear(&h, &p.mlp_out.weight, &p.mlp_out.bias);
    oracle::layer_norm(&oracle::add(&x1, &m), p.mlp_norm.gain.data(), p.mlp_norm.bias.data(), eps)
}

fn head_oracle(x: &Mat, h: &Head<Tensor>, s: &HeadStats, eps: f64) -> Mat {
    let relu = |v: f64| v.max(0.0);
    let a = oracle::linear(x, &h.hidden1.weight, &h.hidden1.bias);
    let a = oracle::batch_norm_fixed(
        &a,
        &s.norm1.running_mean,
        &s.norm1.running_var,
        h.norm1.gain.data(),
        h.norm1.bias.data(),
        eps,
    );
    let a = oracle::linear(&oracle::map(&a, relu), &h.hidden2.weight, &h.hidden2.bias);
    let a = oracle::batch_norm_fixed(
        &a,
        &s.norm2.running_mean,
        &s.norm2.running_var,
        h.norm2.gain.data(),
        h.norm2.bias.data(),
        eps,
    );
    oracle::linear(&oracle::map(&a, relu), &h.output.weight, &h.output.bias)
}

fn max_dev(a: &Mat, b: &Tensor) -> f64 {
    a.iter().flatten().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn single(x: &Tensor) -> PaddedBatch {
    PaddedBatch::new(&[x]).unwrap()
}

#[test]
fn attention_single_timestep_passes_value_through_output_projection() {
    let cfg = small();
    let params = random_params(&cfg, 1);
    let x = random_tensor(&[1, 8], 2);
    let mut tape = Tape::new();
    let net = params.weights.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let (out, weights) = multi_head_attention(&mut tape, xv, &net.blocks[0], 2, &single(&x)).unwrap();
    assert!(weights.iter().all(|&w| tape.value(w).data() == [1.0]));
    let b = &params.weights.blocks[0];
    let v = oracle::matmul(&oracle::mat(&x), &oracle::mat(&b.w_v));
    let expect = oracle::linear(&v, &b.attn_out.weight, &b.attn_out.bias);
    assert!(max_dev(&expect, tape.value(out)) < 1e-12);
}

#[test]
fn zero_query_key_weights_give_uniform_attention_over_valid_keys() {
    let cfg = small();
    let mut params = random_params(&cfg, 3);
    params.weights.blocks[0].w_q = Tensor::zeros(&[8, 8]);
    params.weights.blocks[0].w_k = Tensor::zeros(&[8, 8]);
    let a = random_tensor(&[5, 8], 4);
    let b = random_tensor(&[3, 8], 5);
    let batch = PaddedBatch::new(&[&a, &b]).unwrap();
    let mut tape = Tape::new();
    let net = params.weights.bind(&mut tape);
    let xv = tape.leaf(batch.features.clone());
    let (_, weights) = multi_head_attention(&mut tape, xv, &net.blocks[0], 2, &batch).unwrap();
    for (i, &w) in weights.iter().enumerate() {
        let valid = if i < 2 { 5 } else { 3 };
        let w = tape.value(w);
        for r in 0..5 {
            for c in 0..5 {
                let expect = if c < valid { 1.0 / valid as f64 } else { 0.0 };
                assert!((w.get2(r, c) - expect).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn attention_two_steps_one_head_matches_scalar_oracle() {
    // d = 2, one head, hand-set weights; the oracle is written out by hand.
    let cfg = ModelConfig { feature_dim: 2, num_heads: 1, ..small() };
    let mut params = init_params(&cfg, 0).unwrap();
    let blk = &mut params.weights.blocks[0];
    blk.w_q = Tensor::from_rows(&[&[1.0, 0.5], &[0.0, 2.0]]);
    blk.w_k = Tensor::from_rows(&[&[0.5, -1.0], &[1.0, 0.0]]);
    blk.w_v = Tensor::from_rows(&[&[2.0, 0.0], &[1.0, 1.0]]);
    blk.attn_out.weight = Tensor::from_rows(&[&[1.0, -1.0], &[0.5, 0.25]]);
    blk.attn_out.bias = Tensor::new(&[2], vec![0.1, -0.2]).unwrap();
    let x = Tensor::from_rows(&[&[1.0, 2.0], &[-1.0, 0.5]]);
    let mut tape = Tape::new();
    let net = params.weights.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let (out, _) = multi_head_attention(&mut tape, xv, &net.blocks[0], 1, &single(&x)).unwrap();

    // q = xWq, k = xWk, v = xWv written out per row.
    let q = [[1.0, 0.5 + 4.0], [-1.0, -0.5 + 1.0]];
    let k = [[0.5 + 2.0, -1.0], [-0.5 + 0.5, 1.0]];
    let v = [[2.0 + 2.0, 2.0], [-2.0 + 0.5, 0.5]];
    let mut expect = [[0.0; 2]; 2];
    for i in 0..2 {
        let s: Vec<f64> = (0..2).map(|j| (q[i][0] * k[j][0] + q[i][1] * k[j][1]) / 2f64.sqrt()).collect();
        let e0 = s[0].exp();
        let e1 = s[1].exp();
        let (a0, a1) = (e0 / (e0 + e1), e1 / (e0 + e1));
        let o = [a0 * v[0][0] + a1 * v[1][0], a0 * v[0][1] + a1 * v[1][1]];
        expect[i] = [o[0] * 1.0 + o[1] * 0.5 + 0.1, o[0] * -1.0 + o[1] * 0.25 - 0.2];
    }
    let got = tape.value(out);
    for i in 0..2 {
        for j in 0..2 {
            assert!((got.get2(i, j) - expect[i][j]).abs() < 1e-9);
        }
    }
}

#[test]
fn all_masked_video_rejected() {
    let cfg = small();
    let params = random_params(&cfg, 1);
    let x = random_tensor(&[3, 8], 2);
    let mut batch = single(&x);
    batch.valid.fill(false);
    let mut tape = Tape::new();
    let net = params.weights.bind(&mut tape);
    let xv = tape.leaf(batch.features.clone());
    assert!(multi_head_attention(&mut tape, xv, &net.blocks[0], 2, &batch).is_err());
}

#[test]
fn encoder_with_zero_branches_is_double_layer_norm() {
    let cfg = small();
    let mut params = init_params(&cfg, 5).unwrap();
    let blk = &mut params.weights.blocks[0];
    for t in [&mut blk.w_q, &mut blk.w_k, &mut blk.w_v, &mut blk.attn_out.weight, &mut blk.mlp_in.weight, &mut blk.mlp_out.weight] {
        *t = Tensor::zeros(t.shape());
    }
    let x = random_tensor(&[4, 8], 6);
    let mut tape = Tape::new();
    let net = params.weights.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let y = encoder_block(&mut tape, xv, &net.blocks[0], &cfg, &single(&x)).unwrap();
    let ones = vec![1.0; 8];
    let zeros = vec![0.0; 8];
    let once = oracle::layer_norm(&oracle::mat(&x), &ones, &zeros, 1e-5);
    let twice = oracle::layer_norm(&once, &ones, &zeros, 1e-5);
    assert!(max_dev(&twice, tape.value(y)) < 1e-12);
}

#[test]
fn encoder_block_matches_composition_oracle() {
    let cfg = small();
    let params = random_params(&cfg, 7);
    for t in [1, 4] {
        let x = random_tensor(&[t, 8], 8 + t as u64);
        let mut tape = Tape::new();
        let net = params.weights.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let y = encoder_block(&mut tape, xv, &net.blocks[0], &cfg, &single(&x)).unwrap();
        assert_eq!(tape.shape(y), &[t, 8]);
        let expect = block_oracle(&oracle::mat(&x), &params.weights.blocks[0], 2, cfg.epsilon);
        assert!(max_dev(&expect, tape.value(y)) < 1e-9);
    }
}

#[test]
fn heads_match_layer_by_layer_oracle() {
    let cfg = small();
    let params = random_params(&cfg, 9);
    let h = random_tensor(&[5, 8], 10);
    let mut tape = Tape::new();
    let net = params.weights.bind(&mut tape);
    let hv = tape.leaf(h.clone());
    let mode = HeadMode::Infer { cls: &params.cls_stats, reg: &params.reg_stats };
    let (probs, offsets) = heads_forward(&mut tape, hv, &net, mode, &[true; 5], cfg.epsilon).unwrap();
    let logits = head_oracle(&oracle::mat(&h), &params.weights.cls_head, &params.cls_stats, cfg.epsilon);
    let expect_probs = oracle::masked_softmax(&logits, &[true, true]);
    let expect_off = head_oracle(&oracle::mat(&h), &params.weights.reg_head, &params.reg_stats, cfg.epsilon);
    assert!(max_dev(&expect_probs, tape.value(probs)) < 1e-9);
    assert!(max_dev(&expect_off, tape.value(offsets)) < 1e-9);
    for r in 0..5 {
        let s: f64 = tape.value(probs).row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}

#[test]
fn zero_final_layers_give_half_probability_and_bias_offsets() {
    let cfg = small();
    let mut params = random_params(&cfg, 11);
    params.weights.cls_head.output.weight = Tensor::zeros(&[4, 2]);
    params.weights.cls_head.output.bias = Tensor::zeros(&[2]);
    params.weights.reg_head.output.weight = Tensor::zeros(&[4, 2]);
    params.weights.reg_head.output.bias = Tensor::new(&[2], vec![1.5, -0.25]).unwrap();
    let preds = params.predict(&random_tensor(&[6, 8], 12)).unwrap();
    for p in preds {
        assert_eq!(p.p_event, 0.5);
        assert_eq!((p.d_start, p.d_end), (1.5, -0.25));
    }
}

#[test]
fn inference_before_training_rejected() {
    let params = init_params(&small(), 0).unwrap();
    let err = params.predict(&random_tensor(&[3, 8], 1)).unwrap_err();
    assert!(matches!(err, crate::Error::BatchNorm(_)));
}

#[test]
fn training_pass_initialises_running_statistics() {
    let mut params = init_params(&small(), 0).unwrap();
    let x = random_tensor(&[4, 8], 1);
    params.forward_train(&[&x]).unwrap();
    assert!(params.cls_stats.initialized() && params.reg_stats.initialized());
    params.predict(&x).unwrap();
}

#[test]
fn output_count_equals_input_count() {
    let params = random_params(&small(), 13);
    for t in [1, 5, 84] {
        assert_eq!(params.predict(&random_tensor(&[t, 8], t as u64)).unwrap().len(), t);
    }
}

#[test]
fn dimension_mismatch_rejected() {
    let params = random_params(&small(), 13);
    let err = params.predict(&random_tensor(&[3, 6], 1)).unwrap_err();
    assert!(matches!(err, crate::Error::DimensionMismatch { expected: 8, found: 6 }));
}

#[test]
fn forward_is_bitwise_deterministic() {
    let a = random_params(&small(), 21);
    let b = random_params(&small(), 21);
    let x = random_tensor(&[7, 8], 3);
    let pa = a.predict(&x).unwrap();
    let pb = b.predict(&x).unwrap();
    for (p, q) in pa.iter().zip(&pb) {
        assert_eq!(p.p_event.to_bits(), q.p_event.to_bits());
        assert_eq!(p.d_start.to_bits(), q.d_start.to_bits());
        assert_eq!(p.d_end.to_bits(), q.d_end.to_bits());
    }
}

#[test]
fn padding_does_not_change_predictions() {
    let params = random_params(&small(), 23);
    let short = random_tensor(&[3, 8], 1);
    let long = random_tensor(&[7, 8], 2);
    let alone = params.predict(&short).unwrap();
    let batched = params.predict_batch(&[&short, &long]).unwrap();
    assert_eq!(batched[0].len(), 3);
    for (p, q) in alone.iter().zip(&batched[0]) {
        assert!((p.p_event - q.p_event).abs() < 1e-12);
        assert!((p.d_start - q.d_start).abs() < 1e-12);
    }
}

fn run_without_pe(params: &ModelParams, x: &Tensor, pe: bool) -> Vec<TimestepPrediction> {
    let batch = single(x);
    let mut tape = Tape::new();
    let net = params.weights.bind(&mut tape);
    let mode = HeadMode::Infer { cls: &params.cls_stats, reg: &params.reg_stats };
    let opts = ForwardOptions { no_positional_encoding: !pe, ..Default::default() };
    let out = forward_tape(&mut tape, &net, &params.config, &batch, mode, opts).unwrap();
    collect_predictions(&tape, &out, &batch).pop().unwrap()
}

#[test]
fn encoder_without_positional_encoding_is_permutation_equivariant() {
    let cfg = ModelConfig { num_encoder_blocks: 2, ..small() };
    let params = random_params(&cfg, 31);
    let x = random_tensor(&[6, 8], 32);
    let perm = [3, 0, 5, 1, 4, 2];
    let rows: Vec<&[f64]> = perm.iter().map(|&i| x.row(i)).collect();
    let xp = Tensor::from_rows(&rows);
    let base = run_without_pe(&params, &x, false);
    let permuted = run_without_pe(&params, &xp, false);
    let mut dev: f64 = 0.0;
    for (i, &src) in perm.iter().enumerate() {
        let (a, b) = (permuted[i], base[src]);
        dev = dev.max((a.p_event - b.p_event).abs()).max((a.d_start - b.d_start).abs()).max((a.d_end - b.d_end).abs());
    }
    assert!(dev < 1e-9, "deviation {dev}");

    let base = run_without_pe(&params, &x, true);
    let permuted = run_without_pe(&params, &xp, true);
    let moved = perm.iter().enumerate().any(|(i, &src)| (permuted[i].d_start - base[src].d_start).abs() > 1e-6);
    assert!(moved, "positional encoding should break equivariance");
}

#[test]
fn forward_cost_is_quadratic_in_sequence_length() {
    let params = random_params(&small(), 41);
    let cost = |t: usize| {
        let x = random_tensor(&[t, 8], 1);
        let batch = single(&x);
        let mut tape = Tape::new();
        let net = params.weights.bind(&mut tape);
        let mode = HeadMode::Infer { cls: &params.cls_stats, reg: &params.reg_stats };
        forward_tape(&mut tape, &net, &params.config, &batch, mode, ForwardOptions::default()).unwrap();
        tape.op_count() as i64
    };
    let c: Vec<i64> = [16, 32, 48, 64].iter().map(|&t| cost(t)).collect();
    let d1: Vec<i64> = c.windows(2).map(|w| w[1] - w[0]).collect();
    let d2: Vec<i64> = d1.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(d2[0] > 0);
    assert_eq!(d2[1] - d2[0], 0);
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let cfg = small();
    let params = random_params(&cfg, 51);
    let a = random_tensor(&[6, 8], 52);
    let b = random_tensor(&[4, 8], 53);
    let batch = PaddedBatch::new(&[&a, &b]).unwrap();
    let w1 = random_tensor(&[12, 2], 54);
    let w2 = random_tensor(&[12, 2], 55);
    let mask: Vec<f64> = batch.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();

    let build = |weights: &Network<Tensor>, tape: &mut Tape| {
        let net = weights.bind(tape);
        let (mut cls, mut reg) = (params.cls_stats.clone(), params.reg_stats.clone());
        let mode = HeadMode::Train { cls: &mut cls, reg: &mut reg };
        let out = forward_tape(tape, &net, &cfg, &batch, mode, ForwardOptions::default()).unwrap();
        let mut weight = |w: &Tensor| {
            let mut w = w.clone();
            for (r, m) in mask.iter().enumerate() {
                w.row_mut(r).iter_mut().for_each(|v| *v *= m);
            }
            tape.leaf(w)
        };
        let (l1, l2) = (weight(&w1), weight(&w2));
        let p = tape.mul(out.probs, l1).unwrap();
        let o = tape.mul(out.offsets, l2).unwrap();
        let both = tape.add(p, o).unwrap();
        (net, tape.sum(both))
    };

    let mut tape = Tape::new();
    let (net, loss) = build(&params.weights, &mut tape);
    let grads = tape.backward(loss).unwrap();
    let vars: Vec<_> = net.named().into_iter().map(|(n, v)| (n, *v)).collect();
    for (name, var) in vars {
        let base = params.weights.named().into_iter().find(|(n, _)| *n == name).unwrap().1.clone();
        let numeric = numeric_gradient(&base, 1e-5, |probe| {
            let mut w = params.weights.clone();
            w.visit_mut(&mut |n, t| {
                if n == name {
                    *t = probe.clone();
                }
            });
            let mut tape = Tape::new();
            let (_, loss) = build(&w, &mut tape);
            tape.value(loss).item().unwrap()
        });
        let analytic = grads.get(var);
        for (x, y) in analytic.data().iter().zip(numeric.data()) {
            assert!(relative_error(*x, *y, 1e-6) < 1e-4, "{name}: analytic {x} numeric {y}");
        }
    }
}
