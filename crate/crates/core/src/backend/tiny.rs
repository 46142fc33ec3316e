//! A small trainable encoder-decoder.
//!
//! The encoder averages hashed feature embeddings of the prompt (unigrams,
//! utterance-position unigrams and bigrams) and passes them through one dense
//! `tanh` layer. The decoder is a conditioned trigram model: at step `t` the
//! hidden state is `tanh(h + D1[y(t-1)] + D2[y(t-2)] + P[t])`, projected onto
//! the target vocabulary. Training is plain cross-entropy with Adam, updating
//! embedding rows lazily.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    normalize_label_scores, BackendConfig, BackendError, EarlyStopper, EpochRecord, GenerationResult,
    LabelScore, SamplingConfig, Selection, Seq2Seq, TrainingLog,
};
use crate::records::{derive_seed, read_json, write_json, RecordError};
use crate::tasks::{LabelSpace, TaskExample, TaskKind, SEPARATOR};
use crate::text::{detokenize, hash_feature, tokenize};

const BOS: usize = 0;
const EOS: usize = 1;
const UNK: usize = 2;
const SPECIALS: [&str; 3] = ["<bos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TinyModelConfig {
    pub hidden: usize,
    pub feature_buckets: usize,
    pub max_vocab: usize,
    pub max_target_positions: usize,
}

impl Default for TinyModelConfig {
    fn default() -> Self {
        TinyModelConfig {
            hidden: 64,
            feature_buckets: 1 << 16,
            max_vocab: 6000,
            max_target_positions: 64,
        }
    }
}

impl TinyModelConfig {
    /// Larger preset selected by `backend = "full"`.
    pub fn full() -> Self {
        TinyModelConfig {
            hidden: 256,
            feature_buckets: 1 << 17,
            max_vocab: 16000,
            max_target_positions: 128,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.hidden == 0 || self.feature_buckets == 0 || self.max_target_positions == 0 {
            return Err(BackendError::Config("model sizes must be positive".into()));
        }
        if self.max_vocab <= SPECIALS.len() {
            return Err(BackendError::Config("model.max_vocab too small".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Tensor {
    data: Vec<f32>,
    cols: usize,
}

impl Tensor {
    fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            data: vec![0.0; rows * cols],
            cols,
        }
    }

    fn uniform(rows: usize, cols: usize, scale: f32, rng: &mut ChaCha8Rng) -> Self {
        Tensor {
            data: (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect(),
            cols,
        }
    }

    fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn append_rows(&mut self, n: usize, scale: f32, rng: &mut ChaCha8Rng) {
        self.data
            .extend((0..n * self.cols).map(|_| if scale == 0.0 { 0.0 } else { rng.gen_range(-scale..scale) }));
    }
}

#[derive(Debug, Clone)]
struct Weights {
    emb: Tensor,
    enc_w: Tensor,
    enc_b: Tensor,
    d1: Tensor,
    d2: Tensor,
    pos: Tensor,
    out_w: Tensor,
    out_b: Tensor,
}

impl Weights {
    fn tensors(&self) -> [&Tensor; 8] {
        [&self.emb, &self.enc_w, &self.enc_b, &self.d1, &self.d2, &self.pos, &self.out_w, &self.out_b]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.emb,
            &mut self.enc_w,
            &mut self.enc_b,
            &mut self.d1,
            &mut self.d2,
            &mut self.pos,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(t.rows(), t.cols);
        Weights {
            emb: z(&self.emb),
            enc_w: z(&self.enc_w),
            enc_b: z(&self.enc_b),
            d1: z(&self.d1),
            d2: z(&self.d2),
            pos: z(&self.pos),
            out_w: z(&self.out_w),
            out_b: z(&self.out_b),
        }
    }
}

/// Gradients: dense for the small tensors, row-sparse for embeddings.
struct Grads {
    emb: BTreeMap<usize, Vec<f32>>,
    d1: BTreeMap<usize, Vec<f32>>,
    d2: BTreeMap<usize, Vec<f32>>,
    enc_w: Vec<f32>,
    enc_b: Vec<f32>,
    pos: Vec<f32>,
    out_w: Vec<f32>,
    out_b: Vec<f32>,
}

impl Grads {
    fn new(w: &Weights) -> Self {
        Grads {
            emb: BTreeMap::new(),
            d1: BTreeMap::new(),
            d2: BTreeMap::new(),
            enc_w: vec![0.0; w.enc_w.data.len()],
            enc_b: vec![0.0; w.enc_b.data.len()],
            pos: vec![0.0; w.pos.data.len()],
            out_w: vec![0.0; w.out_w.data.len()],
            out_b: vec![0.0; w.out_b.data.len()],
        }
    }
}

fn add_row(map: &mut BTreeMap<usize, Vec<f32>>, row: usize, g: &[f32], scale: f32) {
    let dst = map.entry(row).or_insert_with(|| vec![0.0; g.len()]);
    for (d, x) in dst.iter_mut().zip(g) {
        *d += x * scale;
    }
}

struct Adam {
    m: Weights,
    v: Weights,
    step: i32,
    lr: f32,
    b1: f32,
    b2: f32,
    eps: f32,
}

impl Adam {
    fn new(w: &Weights, config: &BackendConfig) -> Self {
        Adam {
            m: w.zeros_like(),
            v: w.zeros_like(),
            step: 0,
            lr: config.learning_rate as f32,
            b1: config.beta1 as f32,
            b2: config.beta2 as f32,
            eps: config.epsilon as f32,
        }
    }

    fn apply(&mut self, w: &mut Weights, g: &Grads, scale: f32) {
        self.step += 1;
        let h = AdamStep {
            lr: self.lr,
            b1: self.b1,
            b2: self.b2,
            eps: self.eps,
            c1: 1.0 - self.b1.powi(self.step),
            c2: 1.0 - self.b2.powi(self.step),
            scale,
        };
        let (m, v) = (&mut self.m, &mut self.v);
        h.dense(&mut w.enc_w, &mut m.enc_w, &mut v.enc_w, &g.enc_w);
        h.dense(&mut w.enc_b, &mut m.enc_b, &mut v.enc_b, &g.enc_b);
        h.dense(&mut w.pos, &mut m.pos, &mut v.pos, &g.pos);
        h.dense(&mut w.out_w, &mut m.out_w, &mut v.out_w, &g.out_w);
        h.dense(&mut w.out_b, &mut m.out_b, &mut v.out_b, &g.out_b);
        h.sparse(&mut w.emb, &mut m.emb, &mut v.emb, &g.emb);
        h.sparse(&mut w.d1, &mut m.d1, &mut v.d1, &g.d1);
        h.sparse(&mut w.d2, &mut m.d2, &mut v.d2, &g.d2);
    }
}

struct AdamStep {
    lr: f32,
    b1: f32,
    b2: f32,
    eps: f32,
    c1: f32,
    c2: f32,
    scale: f32,
}

impl AdamStep {
    fn update(&self, w: &mut [f32], m: &mut [f32], v: &mut [f32], g: &[f32]) {
        for i in 0..w.len() {
            let gi = g[i] * self.scale;
            m[i] = self.b1 * m[i] + (1.0 - self.b1) * gi;
            v[i] = self.b2 * v[i] + (1.0 - self.b2) * gi * gi;
            w[i] -= self.lr * (m[i] / self.c1) / ((v[i] / self.c2).sqrt() + self.eps);
        }
    }

    fn dense(&self, w: &mut Tensor, m: &mut Tensor, v: &mut Tensor, g: &[f32]) {
        self.update(&mut w.data, &mut m.data, &mut v.data, g);
    }

    /// Lazy update: only rows with a gradient this step move.
    fn sparse(&self, w: &mut Tensor, m: &mut Tensor, v: &mut Tensor, rows: &BTreeMap<usize, Vec<f32>>) {
        let c = w.cols;
        for (&r, g) in rows {
            let span = r * c..(r + 1) * c;
            self.update(&mut w.data[span.clone()], &mut m.data[span.clone()], &mut v.data[span], g);
        }
    }
}

struct Encoded {
    feats: Vec<usize>,
    h0: Vec<f32>,
    h: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TinyModelConfig,
    seed: u64,
    max_sequence_length: usize,
    vocab: Vec<String>,
    trained: bool,
    shapes: Vec<(usize, usize)>,
}

/// See the module documentation.
#[derive(Debug, Clone)]
pub struct TinyBackend {
    config: TinyModelConfig,
    seed: u64,
    max_sequence_length: usize,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    weights: Weights,
    trained: bool,
}

impl TinyBackend {
    pub fn new(config: TinyModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "tiny/init"));
        let h = config.hidden;
        let v = SPECIALS.len();
        let dense = (6.0 / (2 * h) as f32).sqrt();
        let weights = Weights {
            emb: Tensor::uniform(config.feature_buckets, h, 0.1, &mut rng),
            enc_w: Tensor::uniform(h, h, dense, &mut rng),
            enc_b: Tensor::zeros(1, h),
            d1: Tensor::uniform(v, h, 0.1, &mut rng),
            d2: Tensor::uniform(v, h, 0.1, &mut rng),
            pos: Tensor::uniform(config.max_target_positions, h, 0.1, &mut rng),
            out_w: Tensor::uniform(v, h, dense, &mut rng),
            out_b: Tensor::zeros(v, 1),
        };
        let vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        TinyBackend {
            config,
            seed,
            max_sequence_length: 256,
            vocab,
            index,
            weights,
            trained: false,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn load(dir: &Path) -> Result<Self, BackendError> {
        let header: Header = read_json(&dir.join("tiny.json"))?;
        let bin_path = dir.join("tiny.bin");
        let bytes = fs::read(&bin_path).map_err(|e| RecordError::io(&bin_path, e))?;
        let mut model = TinyBackend::new(header.config, header.seed);
        model.max_sequence_length = header.max_sequence_length;
        model.vocab = header.vocab;
        model.index = model.vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        model.trained = header.trained;
        let total: usize = header.shapes.iter().map(|(r, c)| r * c).sum();
        if bytes.len() != total * 4 || header.shapes.len() != 8 {
            return Err(BackendError::Config(format!(
                "checkpoint {} does not match its header",
                bin_path.display()
            )));
        }
        let mut offset = 0;
        for (t, &(rows, cols)) in model.weights.tensors_mut().into_iter().zip(&header.shapes) {
            let n = rows * cols;
            t.cols = cols;
            t.data = bytes[offset * 4..(offset + n) * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            offset += n;
        }
        Ok(model)
    }

    fn token_id(&self, tok: &str) -> usize {
        self.index.get(tok).copied().unwrap_or(UNK)
    }

    fn target_ids(&self, target: &str) -> Vec<usize> {
        let mut ids: Vec<usize> = tokenize(target)
            .iter()
            .take(self.max_sequence_length)
            .map(|t| self.token_id(t))
            .collect();
        ids.push(EOS);
        ids
    }

    /// Adds the most frequent unseen target tokens, up to `max_vocab`.
    fn extend_vocab(&mut self, examples: &[TaskExample], rng: &mut ChaCha8Rng) {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for ex in examples {
            for tok in tokenize(&ex.target) {
                if !self.index.contains_key(&tok) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut fresh: Vec<(String, usize)> = counts.into_iter().collect();
        fresh.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = self.config.max_vocab.saturating_sub(self.vocab.len());
        fresh.truncate(room);
        if fresh.is_empty() {
            return;
        }
        let n = fresh.len();
        for (tok, _) in fresh {
            self.index.insert(tok.clone(), self.vocab.len());
            self.vocab.push(tok);
        }
        // Existing rows keep their values, so later stages continue training.
        let dense = (6.0 / (2 * self.config.hidden) as f32).sqrt();
        self.weights.d1.append_rows(n, 0.1, rng);
        self.weights.d2.append_rows(n, 0.1, rng);
        self.weights.out_w.append_rows(n, dense, rng);
        self.weights.out_b.append_rows(n, 0.0, rng);
    }

    fn features(&self, prompt: &str) -> Vec<usize> {
        let buckets = self.config.feature_buckets;
        let mut feats = Vec::new();
        let mut budget = self.max_sequence_length;
        for (u, utterance) in prompt.split(SEPARATOR).enumerate() {
            let toks = tokenize(utterance);
            let toks = &toks[..toks.len().min(budget)];
            budget -= toks.len();
            let slot = u.min(4).to_string();
            for t in toks {
                feats.push(hash_feature(&["u", t], buckets));
                feats.push(hash_feature(&["p", &slot, t], buckets));
            }
            for w in toks.windows(2) {
                feats.push(hash_feature(&["b", &w[0], &w[1]], buckets));
            }
            if budget == 0 {
                break;
            }
        }
        if feats.is_empty() {
            feats.push(hash_feature(&["<empty>"], buckets));
        }
        feats
    }

    fn encode(&self, prompt: &str) -> Encoded {
        let h = self.config.hidden;
        let feats = self.features(prompt);
        let mut h0 = vec![0.0f32; h];
        for &f in &feats {
            for (a, b) in h0.iter_mut().zip(self.weights.emb.row(f)) {
                *a += b;
            }
        }
        let inv = 1.0 / feats.len() as f32;
        h0.iter_mut().for_each(|x| *x *= inv);
        let mut out = self.weights.enc_b.data.clone();
        for (i, o) in out.iter_mut().enumerate() {
            *o = (*o + dot(self.weights.enc_w.row(i), &h0)).tanh();
        }
        Encoded { feats, h0, h: out }
    }

    fn hidden_at(&self, enc: &Encoded, prev1: usize, prev2: usize, t: usize) -> Vec<f32> {
        let p = t.min(self.config.max_target_positions - 1);
        let (d1, d2, pos) = (self.weights.d1.row(prev1), self.weights.d2.row(prev2), self.weights.pos.row(p));
        (0..self.config.hidden)
            .map(|i| (enc.h[i] + d1[i] + d2[i] + pos[i]).tanh())
            .collect()
    }

    fn log_probs(&self, z: &[f32]) -> Vec<f32> {
        let v = self.vocab.len();
        let mut logits: Vec<f32> = (0..v)
            .map(|j| self.weights.out_b.data[j] + dot(self.weights.out_w.row(j), z))
            .collect();
        let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f32>().ln();
        logits.iter_mut().for_each(|l| *l -= lse);
        logits
    }

    /// Sum of target log-probabilities and the token count.
    fn score_ids(&self, enc: &Encoded, ids: &[usize]) -> (f64, usize) {
        let (mut p1, mut p2) = (BOS, BOS);
        let mut total = 0.0f64;
        for (t, &y) in ids.iter().enumerate() {
            let z = self.hidden_at(enc, p1, p2, t);
            total += self.log_probs(&z)[y] as f64;
            p2 = p1;
            p1 = y;
        }
        (total, ids.len())
    }

    /// Forward and backward pass for one example; returns the summed loss and
    /// token count, accumulating unnormalised gradients.
    fn backprop(&self, ex: &TaskExample, g: &mut Grads) -> (f64, usize) {
        let hd = self.config.hidden;
        let enc = self.encode(&ex.input);
        let ids = self.target_ids(&ex.target);
        let mut dh = vec![0.0f32; hd];
        let (mut p1, mut p2) = (BOS, BOS);
        let mut loss = 0.0f64;
        for (t, &y) in ids.iter().enumerate() {
            let z = self.hidden_at(&enc, p1, p2, t);
            let lp = self.log_probs(&z);
            loss -= lp[y] as f64;
            let mut dz = vec![0.0f32; hd];
            for (j, l) in lp.iter().enumerate() {
                let dl = l.exp() - if j == y { 1.0 } else { 0.0 };
                g.out_b[j] += dl;
                let row = &mut g.out_w[j * hd..(j + 1) * hd];
                let w = self.weights.out_w.row(j);
                for i in 0..hd {
                    row[i] += dl * z[i];
                    dz[i] += dl * w[i];
                }
            }
            let da: Vec<f32> = dz.iter().zip(&z).map(|(d, zi)| d * (1.0 - zi * zi)).collect();
            let p = t.min(self.config.max_target_positions - 1);
            for i in 0..hd {
                dh[i] += da[i];
                g.pos[p * hd + i] += da[i];
            }
            add_row(&mut g.d1, p1, &da, 1.0);
            add_row(&mut g.d2, p2, &da, 1.0);
            p2 = p1;
            p1 = y;
        }
        let dpre: Vec<f32> = dh.iter().zip(&enc.h).map(|(d, h)| d * (1.0 - h * h)).collect();
        let mut dh0 = vec![0.0f32; hd];
        for (i, &dp) in dpre.iter().enumerate() {
            g.enc_b[i] += dp;
            let w = self.weights.enc_w.row(i);
            let row = &mut g.enc_w[i * hd..(i + 1) * hd];
            for k in 0..hd {
                row[k] += dp * enc.h0[k];
                dh0[k] += dp * w[k];
            }
        }
        let inv = 1.0 / enc.feats.len() as f32;
        for &f in &enc.feats {
            add_row(&mut g.emb, f, &dh0, inv);
        }
        (loss, ids.len())
    }

    fn mean_loss(&self, examples: &[TaskExample]) -> f64 {
        let (mut total, mut count) = (0.0, 0usize);
        for ex in examples {
            let enc = self.encode(&ex.input);
            let (s, n) = self.score_ids(&enc, &self.target_ids(&ex.target));
            total -= s;
            count += n;
        }
        total / count.max(1) as f64
    }

    fn intent_accuracy(&self, examples: &[&TaskExample], labels: &LabelSpace) -> f64 {
        let correct = examples
            .iter()
            .filter(|ex| {
                self.score_labels_inner(&ex.input, labels)
                    .first()
                    .is_some_and(|top| labels.target(top.index) == ex.target)
            })
            .count();
        correct as f64 / examples.len() as f64
    }

    fn score_labels_inner(&self, prompt: &str, labels: &LabelSpace) -> Vec<LabelScore> {
        let enc = self.encode(prompt);
        let raw: Vec<f64> = (0..labels.len())
            .map(|i| {
                let (s, n) = self.score_ids(&enc, &self.target_ids(labels.target(i)));
                s / n as f64
            })
            .collect();
        normalize_label_scores(&raw, labels)
    }

    fn ensure_trained(&self) -> Result<(), BackendError> {
        if self.trained {
            Ok(())
        } else {
            Err(BackendError::Untrained(self.name().to_string()))
        }
    }

    fn decode_one(&self, enc: &Encoded, sampling: &SamplingConfig, rng: Option<&mut ChaCha8Rng>) -> (String, f64) {
        let mut rng = rng;
        let (mut p1, mut p2) = (BOS, BOS);
        let mut tokens = Vec::new();
        let mut total = 0.0f64;
        for t in 0..=sampling.max_new_tokens {
            let z = self.hidden_at(enc, p1, p2, t);
            let lp = self.log_probs(&z);
            let allowed = |j: usize| j != BOS && j != UNK && !(j == EOS && t == 0);
            let y = if t == sampling.max_new_tokens {
                EOS
            } else {
                match rng.as_deref_mut() {
                    Some(r) if sampling.temperature > 0.0 => sample(&lp, sampling, r, allowed),
                    _ => argmax(&lp, allowed),
                }
            };
            total += lp[y] as f64;
            if y == EOS {
                break;
            }
            tokens.push(self.vocab[y].clone());
            p2 = p1;
            p1 = y;
        }
        let n = tokens.len() + 1;
        (detokenize(&tokens), total / n as f64)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax(lp: &[f32], allowed: impl Fn(usize) -> bool) -> usize {
    let mut best = EOS;
    let mut best_v = f32::NEG_INFINITY;
    for (j, &v) in lp.iter().enumerate() {
        if allowed(j) && v > best_v {
            best = j;
            best_v = v;
        }
    }
    best
}

fn sample(lp: &[f32], s: &SamplingConfig, rng: &mut ChaCha8Rng, allowed: impl Fn(usize) -> bool) -> usize {
    let inv_t = 1.0 / s.temperature;
    let mut cand: Vec<(usize, f64)> = lp
        .iter()
        .enumerate()
        .filter(|(j, _)| allowed(*j))
        .map(|(j, &l)| (j, (l as f64) * inv_t))
        .collect();
    cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if let Some(k) = s.top_k {
        cand.truncate(k.max(1));
    }
    let max = cand[0].1;
    let mut probs: Vec<f64> = cand.iter().map(|(_, l)| (l - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    let mut keep = 0;
    let mut cum = 0.0;
    for p in &probs {
        keep += 1;
        cum += p;
        if cum >= s.top_p {
            break;
        }
    }
    let mass: f64 = probs[..keep].iter().sum();
    let mut u = rng.gen::<f64>() * mass;
    for (i, p) in probs[..keep].iter().enumerate() {
        if u < *p {
            return cand[i].0;
        }
        u -= p;
    }
    cand[keep - 1].0
}

impl Seq2Seq for TinyBackend {
    fn name(&self) -> &str {
        "tiny"
    }

    fn fine_tune(
        &mut self,
        train: &[TaskExample],
        dev: &[TaskExample],
        selection: &Selection,
        config: &BackendConfig,
    ) -> Result<TrainingLog, BackendError> {
        if train.is_empty() {
            return Err(BackendError::EmptyDataset);
        }
        config.validate()?;
        self.max_sequence_length = config.max_sequence_length;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "tiny/train"));
        self.extend_vocab(train, &mut rng);
        self.trained = true;

        let dev_intent: Vec<&TaskExample> = dev.iter().filter(|e| e.task == TaskKind::Intent).collect();
        let by_accuracy = match selection {
            Selection::IntentAccuracy(labels) if !dev_intent.is_empty() => Some(labels),
            _ => None,
        };
        let mut stopper = EarlyStopper::new(config.early_stopping_patience, by_accuracy.is_some());
        let mut adam = Adam::new(&self.weights, config);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut best = self.weights.clone();
        let mut log = TrainingLog::default();

        for epoch in 1..=config.epochs {
            order.shuffle(&mut rng);
            let (mut epoch_loss, mut epoch_tokens) = (0.0f64, 0usize);
            for batch in order.chunks(config.batch_size) {
                let mut grads = Grads::new(&self.weights);
                let (mut loss, mut tokens) = (0.0, 0);
                for &i in batch {
                    let (l, n) = self.backprop(&train[i], &mut grads);
                    loss += l;
                    tokens += n;
                }
                if !loss.is_finite() {
                    return Err(BackendError::NonFinite { epoch });
                }
                adam.apply(&mut self.weights, &grads, 1.0 / tokens as f32);
                epoch_loss += loss;
                epoch_tokens += tokens;
            }
            let train_loss = epoch_loss / epoch_tokens as f64;
            let dev_loss = (!dev.is_empty()).then(|| self.mean_loss(dev));
            if !train_loss.is_finite() || dev_loss.is_some_and(|d| !d.is_finite()) {
                return Err(BackendError::NonFinite { epoch });
            }
            let dev_accuracy = by_accuracy.map(|labels| self.intent_accuracy(&dev_intent, labels));
            let metric = dev_accuracy.or(dev_loss).unwrap_or(train_loss);
            if stopper.observe_with_tiebreak(metric, dev_loss.unwrap_or(train_loss)) {
                best = self.weights.clone();
            }
            log.epochs.push(EpochRecord {
                epoch,
                train_loss,
                dev_loss,
                dev_accuracy,
            });
            if stopper.should_stop() {
                log.stopped_early = true;
                break;
            }
        }
        log.best_epoch = stopper.best_epoch();
        self.weights = best;
        Ok(log)
    }

    fn sequence_score(&self, prompt: &str, target: &str) -> Result<f64, BackendError> {
        self.ensure_trained()?;
        let enc = self.encode(prompt);
        let (s, n) = self.score_ids(&enc, &self.target_ids(target));
        Ok(s / n as f64)
    }

    fn score_labels(&self, prompt: &str, labels: &LabelSpace) -> Result<Vec<LabelScore>, BackendError> {
        self.ensure_trained()?;
        Ok(self.score_labels_inner(prompt, labels))
    }

    fn generate(
        &self,
        prompt: &str,
        n: usize,
        sampling: &SamplingConfig,
        seed: u64,
    ) -> Result<GenerationResult, BackendError> {
        self.ensure_trained()?;
        let enc = self.encode(prompt);
        let (texts, scores) = (0..n)
            .map(|i| {
                if i == 0 && sampling.greedy_first {
                    self.decode_one(&enc, sampling, None)
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("sample/{i}")));
                    self.decode_one(&enc, sampling, Some(&mut rng))
                }
            })
            .unzip();
        Ok(GenerationResult { texts, scores })
    }

    fn save(&self, dir: &Path) -> Result<(), BackendError> {
        fs::create_dir_all(dir).map_err(|e| RecordError::io(dir, e))?;
        let header = Header {
            config: self.config.clone(),
            seed: self.seed,
            max_sequence_length: self.max_sequence_length,
            vocab: self.vocab.clone(),
            trained: self.trained,
            shapes: self.weights.tensors().iter().map(|t| (t.rows(), t.cols)).collect(),
        };
        write_json(&dir.join("tiny.json"), &header)?;
        let bytes: Vec<u8> = self
            .weights
            .tensors()
            .iter()
            .flat_map(|t| t.data.iter().flat_map(|x| x.to_le_bytes()))
            .collect();
        let path = dir.join("tiny.bin");
        fs::write(&path, bytes).map_err(|e| RecordError::io(&path, e))?;
        Ok(())
    }
}
