//! The next-cell sequence predictors: a stacked LSTM and a causal
//! Transformer encoder sharing one embedding/input pipeline and output head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{
    EncodedWindow, FeatureFlags, Vocab, DISTANCE_BUCKETS, DURATION_BUCKETS,
};
use crate::nn::{ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    Lstm,
    Transformer,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Lstm => "lstm",
            Arch::Transformer => "transformer",
        })
    }
}

impl std::str::FromStr for Arch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lstm" => Ok(Arch::Lstm),
            "transformer" => Ok(Arch::Transformer),
            other => Err(format!("unknown architecture '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub window_len: usize,
    pub stride: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub flags: FeatureFlags,
    /// Width of the user profile vector consumed when user_semantic is on.
    pub semantic_dim: usize,
}

impl ModelConfig {
    pub fn baseline(arch: Arch) -> Self {
        ModelConfig {
            arch,
            d_model: 64,
            layers: 2,
            heads: 4,
            window_len: 128,
            stride: 64,
            lr: 2e-5,
            epochs: 10,
            batch_size: 4,
            seed: 42,
            flags: FeatureFlags::baseline(),
            semantic_dim: 512,
        }
    }

    /// A deliberately tiny configuration for CI-scale tests.
    pub fn tiny(arch: Arch) -> Self {
        ModelConfig {
            arch,
            d_model: 8,
            layers: 1,
            heads: 2,
            window_len: 8,
            stride: 4,
            lr: 0.05,
            epochs: 4,
            batch_size: 2,
            seed: 42,
            flags: FeatureFlags::baseline(),
            semantic_dim: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LstmIds {
    wx: usize,
    wh: usize,
    b: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlockIds {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln1_g: usize,
    ln1_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    ff1: usize,
    ff1_b: usize,
    ff2: usize,
    ff2_b: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Ids {
    emb_cell: usize,
    emb_hour: usize,
    emb_dow: usize,
    emb_seg: Option<usize>,
    emb_dist: Option<usize>,
    emb_dur: Option<usize>,
    w_sem: Option<usize>,
    emb_pos: Option<usize>,
    lstm: Vec<LstmIds>,
    blocks: Vec<BlockIds>,
    ln_f: Option<(usize, usize)>,
    out_w: usize,
    out_b: usize,
}

/// A sequence model: parameters plus the layout needed to rebuild the
/// computation graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeqNet {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamSet,
    ids: Ids,
}

const ATTN_MASK: f64 = -1e30;

impl SeqNet {
    pub fn new(config: ModelConfig, vocab: Vocab) -> Self {
        assert!(config.d_model % config.heads == 0, "heads must divide d_model");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let v = vocab.size();
        let scale = 1.0 / (d as f64).sqrt();
        let mut params = ParamSet::new();

        let emb_cell = params.add("emb.cell", Tensor::uniform(v, d, scale, &mut rng));
        let emb_hour = params.add("emb.hour", Tensor::uniform(24, d, scale, &mut rng));
        let emb_dow = params.add("emb.dow", Tensor::uniform(7, d, scale, &mut rng));
        let (mut emb_seg, mut emb_dist, mut emb_dur) = (None, None, None);
        if config.flags.ext_spatiotemporal {
            emb_seg = Some(params.add("emb.segment", Tensor::uniform(2, d, scale, &mut rng)));
            emb_dist = Some(params.add(
                "emb.distance",
                Tensor::uniform(DISTANCE_BUCKETS, d, scale, &mut rng),
            ));
            emb_dur = Some(params.add(
                "emb.duration",
                Tensor::uniform(DURATION_BUCKETS, d, scale, &mut rng),
            ));
        }
        let w_sem = config.flags.user_semantic.then(|| {
            params.add(
                "sem.proj",
                Tensor::uniform(config.semantic_dim, d, scale, &mut rng),
            )
        });

        let mut emb_pos = None;
        let mut lstm = Vec::new();
        let mut blocks = Vec::new();
        let mut ln_f = None;
        match config.arch {
            Arch::Lstm => {
                for l in 0..config.layers {
                    lstm.push(LstmIds {
                        wx: params.add(
                            &format!("lstm.{l}.wx"),
                            Tensor::uniform(d, 4 * d, scale, &mut rng),
                        ),
                        wh: params.add(
                            &format!("lstm.{l}.wh"),
                            Tensor::uniform(d, 4 * d, scale, &mut rng),
                        ),
                        b: params.add(&format!("lstm.{l}.b"), Tensor::zeros(1, 4 * d)),
                    });
                }
            }
            Arch::Transformer => {
                emb_pos = Some(params.add(
                    "emb.pos",
                    Tensor::uniform(config.window_len, d, scale, &mut rng),
                ));
                for l in 0..config.layers {
                    blocks.push(BlockIds {
                        wq: params.add(&format!("tf.{l}.wq"), Tensor::uniform(d, d, scale, &mut rng)),
                        wk: params.add(&format!("tf.{l}.wk"), Tensor::uniform(d, d, scale, &mut rng)),
                        wv: params.add(&format!("tf.{l}.wv"), Tensor::uniform(d, d, scale, &mut rng)),
                        wo: params.add(&format!("tf.{l}.wo"), Tensor::uniform(d, d, scale, &mut rng)),
                        ln1_g: params.add(&format!("tf.{l}.ln1.g"), ones(1, d)),
                        ln1_b: params.add(&format!("tf.{l}.ln1.b"), Tensor::zeros(1, d)),
                        ln2_g: params.add(&format!("tf.{l}.ln2.g"), ones(1, d)),
                        ln2_b: params.add(&format!("tf.{l}.ln2.b"), Tensor::zeros(1, d)),
                        ff1: params.add(
                            &format!("tf.{l}.ff1"),
                            Tensor::uniform(d, 4 * d, scale, &mut rng),
                        ),
                        ff1_b: params.add(&format!("tf.{l}.ff1.b"), Tensor::zeros(1, 4 * d)),
                        ff2: params.add(
                            &format!("tf.{l}.ff2"),
                            Tensor::uniform(4 * d, d, 0.5 * scale, &mut rng),
                        ),
                        ff2_b: params.add(&format!("tf.{l}.ff2.b"), Tensor::zeros(1, d)),
                    });
                }
                ln_f = Some((
                    params.add("tf.final_ln.g", ones(1, d)),
                    params.add("tf.final_ln.b", Tensor::zeros(1, d)),
                ));
            }
        }

        // Zero head: every class starts with identical logits, so the
        // initial loss is exactly ln(vocab).
        let out_w = params.add("head.w", Tensor::zeros(d, v));
        let out_b = params.add("head.b", Tensor::zeros(1, v));

        SeqNet {
            config,
            vocab,
            params,
            ids: Ids {
                emb_cell,
                emb_hour,
                emb_dow,
                emb_seg,
                emb_dist,
                emb_dur,
                w_sem,
                emb_pos,
                lstm,
                blocks,
                ln_f,
                out_w,
                out_b,
            },
        }
    }

    /// Row of the cell embedding table for a token (fusion gate input).
    pub fn cell_embedding(&self, token: usize) -> &[f64] {
        self.params.tensors[self.ids.emb_cell].row(token)
    }

    /// Register every parameter on a fresh tape, ids aligned with `params`.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(t.clone(), i))
            .collect()
    }

    /// Forward pass over one encoded window: logits for every position.
    pub fn logits(&self, tape: &mut Tape, leaves: &[Var], w: &EncodedWindow) -> Var {
        let ids = &self.ids;
        let mut x = tape.gather(leaves[ids.emb_cell], &w.cell);
        let hour = tape.gather(leaves[ids.emb_hour], &w.hour);
        x = tape.add(x, hour);
        let dow = tape.gather(leaves[ids.emb_dow], &w.dow);
        x = tape.add(x, dow);
        if let (Some(seg), Some(dist), Some(dur)) = (ids.emb_seg, ids.emb_dist, ids.emb_dur) {
            let e = tape.gather(leaves[seg], &w.segment);
            x = tape.add(x, e);
            let e = tape.gather(leaves[dist], &w.dist_bucket);
            x = tape.add(x, e);
            let e = tape.gather(leaves[dur], &w.dur_bucket);
            x = tape.add(x, e);
        }
        if let Some(w_sem) = ids.w_sem {
            let sem = w
                .semantic
                .clone()
                .unwrap_or_else(|| vec![0.0; self.config.semantic_dim]);
            let sem = tape.constant(Tensor::from_vec(1, sem.len(), sem));
            let proj = tape.matmul(sem, leaves[w_sem]);
            x = tape.add_row_broadcast(x, proj);
        }

        let h = match self.config.arch {
            Arch::Lstm => self.lstm_forward(tape, leaves, x),
            Arch::Transformer => self.transformer_forward(tape, leaves, x),
        };
        let logits = tape.matmul(h, leaves[ids.out_w]);
        tape.add_row_broadcast(logits, leaves[ids.out_b])
    }

    fn lstm_forward(&self, tape: &mut Tape, leaves: &[Var], x: Var) -> Var {
        let d = self.config.d_model;
        let steps = tape.value(x).rows;
        let mut layer_in = x;
        for l in &self.ids.lstm {
            let mut h = tape.constant(Tensor::zeros(1, d));
            let mut c = tape.constant(Tensor::zeros(1, d));
            let mut outs = Vec::with_capacity(steps);
            for t in 0..steps {
                let xt = tape.gather(layer_in, &[t]);
                let a = tape.matmul(xt, leaves[l.wx]);
                let b = tape.matmul(h, leaves[l.wh]);
                let s = tape.add(a, b);
                let s = tape.add_row_broadcast(s, leaves[l.b]);
                let i = tape.slice_cols(s, 0, d);
                let f = tape.slice_cols(s, d, d);
                let o = tape.slice_cols(s, 2 * d, d);
                let g = tape.slice_cols(s, 3 * d, d);
                let i = tape.sigmoid(i);
                let f = tape.sigmoid(f);
                let o = tape.sigmoid(o);
                let g = tape.tanh(g);
                let fc = tape.mul(f, c);
                let ig = tape.mul(i, g);
                c = tape.add(fc, ig);
                let ct = tape.tanh(c);
                h = tape.mul(o, ct);
                outs.push(h);
            }
            layer_in = tape.stack_rows(&outs);
        }
        layer_in
    }

    fn transformer_forward(&self, tape: &mut Tape, leaves: &[Var], x: Var) -> Var {
        let d = self.config.d_model;
        let heads = self.config.heads;
        let dh = d / heads;
        let steps = tape.value(x).rows;
        let positions: Vec<usize> = (0..steps).collect();
        let pos = tape.gather(leaves[self.ids.emb_pos.unwrap()], &positions);
        let mut x = tape.add(x, pos);

        let mut mask = Tensor::zeros(steps, steps);
        for r in 0..steps {
            for c in (r + 1)..steps {
                *mask.at_mut(r, c) = ATTN_MASK;
            }
        }
        let mask = tape.constant(mask);

        for blk in &self.ids.blocks {
            let xn = tape.layer_norm_rows(x, leaves[blk.ln1_g], leaves[blk.ln1_b]);
            let q = tape.matmul(xn, leaves[blk.wq]);
            let k = tape.matmul(xn, leaves[blk.wk]);
            let v = tape.matmul(xn, leaves[blk.wv]);
            let mut head_outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = tape.slice_cols(q, hd * dh, dh);
                let kh = tape.slice_cols(k, hd * dh, dh);
                let vh = tape.slice_cols(v, hd * dh, dh);
                let scores = tape.matmul_t(qh, kh, false, true);
                let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
                let scores = tape.add(scores, mask);
                let attn = tape.softmax_rows(scores);
                head_outs.push(tape.matmul(attn, vh));
            }
            let concat = tape.concat_cols(&head_outs);
            let attn_out = tape.matmul(concat, leaves[blk.wo]);
            x = tape.add(x, attn_out);

            let xn = tape.layer_norm_rows(x, leaves[blk.ln2_g], leaves[blk.ln2_b]);
            let f1 = tape.matmul(xn, leaves[blk.ff1]);
            let f1 = tape.add_row_broadcast(f1, leaves[blk.ff1_b]);
            let f1 = tape.relu(f1);
            let f2 = tape.matmul(f1, leaves[blk.ff2]);
            let f2 = tape.add_row_broadcast(f2, leaves[blk.ff2_b]);
            x = tape.add(x, f2);
        }
        let (g, b) = self.ids.ln_f.unwrap();
        tape.layer_norm_rows(x, leaves[g], leaves[b])
    }

    /// Masked next-token cross-entropy averaged over a batch of windows.
    pub fn batch_loss(&self, tape: &mut Tape, leaves: &[Var], batch: &[&EncodedWindow]) -> Var {
        assert!(!batch.is_empty());
        let mut total = None;
        for w in batch {
            let logits = self.logits(tape, leaves, w);
            let loss = tape.cross_entropy_mean(logits, &w.target, &w.mask);
            total = Some(match total {
                None => loss,
                Some(t) => tape.add(t, loss),
            });
        }
        tape.scale(total.unwrap(), 1.0 / batch.len() as f64)
    }

    /// Loss of a batch without keeping the tape (for finite differencing).
    pub fn eval_loss(&self, batch: &[&EncodedWindow]) -> f64 {
        let mut tape = Tape::new();
        let leaves = self.leaves(&mut tape);
        let loss = self.batch_loss(&mut tape, &leaves, batch);
        tape.scalar(loss)
    }

    /// Logit row for the last real position of a window, as probabilities
    /// over the emittable (seen) tokens only.
    pub fn next_token_distribution(&self, w: &EncodedWindow) -> Vec<(usize, f64)> {
        assert!(w.len >= 1);
        let mut tape = Tape::new();
        let leaves = self.leaves(&mut tape);
        let logits = self.logits(&mut tape, &leaves, w);
        let row = tape.value(logits).row(w.len - 1);
        let mut pairs: Vec<(usize, f64)> = self
            .vocab
            .seen
            .iter()
            .map(|&t| (t, row[t]))
            .collect();
        let max = pairs
            .iter()
            .map(|(_, l)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for p in &mut pairs {
            p.1 = (p.1 - max).exp();
            sum += p.1;
        }
        for p in &mut pairs {
            p.1 /= sum;
        }
        pairs
    }

    /// Greedy next token: highest probability, smallest token on ties.
    pub fn argmax_next(&self, w: &EncodedWindow) -> (usize, f64) {
        let dist = self.next_token_distribution(w);
        let mut best = dist[0];
        for &(t, p) in &dist[1..] {
            if p > best.1 {
                best = (t, p);
            }
        }
        best
    }
}

fn ones(rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, vec![1.0; rows * cols])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::encoder::{PAD, SPECIALS};
    use std::collections::BTreeSet;

    fn tiny_vocab() -> Vocab {
        Vocab {
            rows: 3,
            cols: 3,
            seen: (0..9).map(|f| f + SPECIALS).collect::<BTreeSet<_>>(),
        }
    }

    fn window_of_tokens(tokens: &[usize], window_len: usize) -> EncodedWindow {
        let mut w = EncodedWindow {
            len: tokens.len(),
            cell: vec![PAD; window_len],
            target: vec![PAD; window_len],
            mask: vec![false; window_len],
            hour: vec![0; window_len],
            dow: vec![0; window_len],
            segment: vec![0; window_len],
            dist_bucket: vec![0; window_len],
            dur_bucket: vec![0; window_len],
            semantic: None,
        };
        for (i, &t) in tokens.iter().enumerate() {
            w.cell[i] = t;
            w.hour[i] = (9 + i) % 24;
            w.dow[i] = i % 7;
            if i + 1 < tokens.len() {
                w.target[i] = tokens[i + 1];
                w.mask[i] = true;
            }
        }
        w
    }

    fn assert_initial_loss_is_ln_vocab(arch: Arch) {
        let vocab = tiny_vocab();
        let expected = (vocab.size() as f64).ln();
        let net = SeqNet::new(ModelConfig::tiny(arch), vocab);
        let w = window_of_tokens(&[2, 3, 4, 5], net.config.window_len);
        let loss = net.eval_loss(&[&w]);
        assert!(
            (loss - expected).abs() / expected < 0.05,
            "{arch}: initial loss {loss} vs ln(V) = {expected}"
        );
    }

    #[test]
    fn lstm_initial_loss_is_uniform() {
        assert_initial_loss_is_ln_vocab(Arch::Lstm);
    }

    #[test]
    fn transformer_initial_loss_is_uniform() {
        assert_initial_loss_is_ln_vocab(Arch::Transformer);
    }

    #[test]
    fn forward_is_deterministic_under_seed() {
        let a = SeqNet::new(ModelConfig::tiny(Arch::Transformer), tiny_vocab());
        let b = SeqNet::new(ModelConfig::tiny(Arch::Transformer), tiny_vocab());
        let w = window_of_tokens(&[2, 5, 7], a.config.window_len);
        assert_eq!(a.params.tensors[0].data, b.params.tensors[0].data);
        assert_eq!(a.eval_loss(&[&w]), b.eval_loss(&[&w]));
    }

    #[test]
    fn distribution_sums_to_one_and_excludes_specials() {
        let net = SeqNet::new(ModelConfig::tiny(Arch::Lstm), tiny_vocab());
        let w = window_of_tokens(&[2, 3], net.config.window_len);
        let dist = net.next_token_distribution(&w);
        let sum: f64 = dist.iter().map(|(_, p)| p).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(dist.iter().all(|(t, _)| *t >= SPECIALS));
    }

    #[test]
    fn semantic_flag_changes_output() {
        let mut cfg = ModelConfig::tiny(Arch::Lstm);
        cfg.flags.user_semantic = true;
        let net = SeqNet::new(cfg, tiny_vocab());
        // head is zero-init, so train one step first to break ties
        let mut w = window_of_tokens(&[2, 3, 4], net.config.window_len);
        let mut net = net;
        let w0 = w.clone();
        let batch = [&w0];
        let mut opt = crate::nn::Adam::new(crate::nn::AdamConfig::with_lr(0.1), &net.params);
        let mut tape = Tape::new();
        let leaves = net.leaves(&mut tape);
        let loss = net.batch_loss(&mut tape, &leaves, &batch);
        let grads = tape.backward(loss, &net.params.shapes());
        opt.step(&mut net.params, &grads);

        w.semantic = Some(vec![0.5; net.config.semantic_dim]);
        let with = net.next_token_distribution(&w);
        w.semantic = Some(vec![-0.5; net.config.semantic_dim]);
        let without = net.next_token_distribution(&w);
        assert_ne!(with, without);
    }

    #[test]
    fn ext_features_ignored_when_flag_off() {
        let net = SeqNet::new(ModelConfig::tiny(Arch::Lstm), tiny_vocab());
        let w1 = window_of_tokens(&[2, 3, 4], net.config.window_len);
        let mut w2 = w1.clone();
        w2.dist_bucket = vec![9; net.config.window_len];
        assert_eq!(net.eval_loss(&[&w1]), net.eval_loss(&[&w2]));
    }

    // Finite-difference gradient spot check through the full architecture.
    fn run_gradcheck(arch: Arch) {
        let mut cfg = ModelConfig::tiny(arch);
        cfg.d_model = 4;
        cfg.heads = 2;
        cfg.window_len = 5;
        cfg.flags.ext_spatiotemporal = true;
        let net = SeqNet::new(cfg, tiny_vocab());
        let mut w = window_of_tokens(&[2, 3, 4, 5], cfg.window_len);
        w.segment = vec![1, 0, 1, 0, 0];
        w.dist_bucket = vec![3, 0, 7, 1, 0];
        w.dur_bucket = vec![0, 5, 2, 9, 0];
        let err = crate::model::gradient_check(&net, &[&w], 250, 1e-4);
        assert!(err < 1e-4, "{arch}: max rel error {err}");
    }

    #[test]
    fn gradcheck_lstm_end_to_end() {
        run_gradcheck(Arch::Lstm);
    }

    #[test]
    fn gradcheck_transformer_end_to_end() {
        run_gradcheck(Arch::Transformer);
    }
}
