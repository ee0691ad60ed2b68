use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{axpy, dot, sigmoid, Matrix, NeuralError, Result};
use crate::corpus::{argmax_category, Category};

/// Reserved padding id; real tokens are numbered from 1.
pub const PAD: usize = 0;

const K: usize = Category::COUNT;

/// Keeps the first `seq_len` ids and pads the tail with [`PAD`].
pub fn pad_or_truncate(ids: &[usize], seq_len: usize) -> Vec<usize> {
    let mut out: Vec<usize> = ids.iter().copied().take(seq_len).collect();
    out.resize(seq_len, PAD);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub seq_len: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Train on at most this many batches per epoch.
    pub batches_per_epoch: Option<usize>,
    /// Rescale the gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
    /// Stop once training accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    pub init_scale: f64,
    pub reduction: LossReduction,
}

/// How per-example losses combine into the batch objective that SGD steps on.
/// Reported losses are always per-example means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    #[default]
    Sum,
    Mean,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            seq_len: 15,
            hidden: 128,
            embed_dim: 64,
            lr: 0.001,
            batch_size: 30,
            epochs: 200,
            seed: 0,
            batches_per_epoch: None,
            clip_norm: None,
            target_accuracy: None,
            init_scale: 0.1,
            reduction: LossReduction::Sum,
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(NeuralError::InvalidConfig(what.to_string()));
        if self.seq_len == 0 || self.hidden == 0 || self.embed_dim == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("seq_len, hidden, embed_dim, batch_size and epochs must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batches_per_epoch == Some(0) {
            return bad("batches_per_epoch must be at least 1");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be non-negative");
        }
        Ok(())
    }
}

/// Gate rows are stacked in the order input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// (|V| + 1) × E; row 0 belongs to the pad id and is never read.
    pub embed: Matrix,
    /// 4H × E
    pub w: Matrix,
    /// 4H × H
    pub u: Matrix,
    pub b: Vec<f64>,
    /// 5 × H
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(vocab_size: usize, embed_dim: usize, hidden: usize) -> Self {
        LstmParams {
            embed: Matrix::zeros(vocab_size + 1, embed_dim),
            w: Matrix::zeros(4 * hidden, embed_dim),
            u: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
            w_out: Matrix::zeros(K, hidden),
            b_out: vec![0.0; K],
        }
    }

    /// Uniform(-scale, scale) init with the forget-gate bias shifted by +1.
    pub fn init(vocab_size: usize, embed_dim: usize, hidden: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LstmParams::zeros(vocab_size, embed_dim, hidden);
        for t in p.tensors_mut() {
            let m = Matrix::uniform(1, t.len(), scale, &mut rng);
            t.copy_from_slice(&m.data);
        }
        p.embed.row_mut(PAD).fill(0.0);
        for x in &mut p.b[hidden..2 * hidden] {
            *x += 1.0;
        }
        p
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows - 1
    }

    pub fn hidden(&self) -> usize {
        self.u.cols
    }

    pub fn embed_dim(&self) -> usize {
        self.w.cols
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.embed.data, &self.w.data, &self.u.data, &self.b, &self.w_out.data, &self.b_out]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.embed.data,
            &mut self.w.data,
            &mut self.u.data,
            &mut self.b,
            &mut self.w_out.data,
            &mut self.b_out,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn check_ids(&self, seq: &[usize]) -> Result<()> {
        let limit = self.vocab_size() + 1;
        match seq.iter().find(|&&id| id >= limit) {
            Some(&id) => Err(NeuralError::TokenOutOfRange { id, limit }),
            None => Ok(()),
        }
    }
}

struct Step {
    id: usize,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// activated gates, 4H
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Activations kept from a forward pass over one sequence.
pub struct SequenceCache {
    steps: Vec<Step>,
    h: Vec<f64>,
}

pub struct LstmOutput {
    pub probs: Vec<[f64; K]>,
    pub caches: Vec<SequenceCache>,
}

fn softmax(logits: &[f64; K]) -> [f64; K] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; K];
    let mut z = 0.0;
    for k in 0..K {
        p[k] = (logits[k] - m).exp();
        z += p[k];
    }
    p.iter_mut().for_each(|x| *x /= z);
    p
}

fn forward_one(p: &LstmParams, seq: &[usize]) -> ([f64; K], SequenceCache) {
    let hd = p.hidden();
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut steps = Vec::new();
    let mut z = vec![0.0; 4 * hd];
    for &id in seq {
        if id == PAD {
            continue;
        }
        let x = p.embed.row(id);
        for r in 0..4 * hd {
            z[r] = p.b[r] + dot(p.w.row(r), x) + dot(p.u.row(r), &h);
        }
        let mut gates = vec![0.0; 4 * hd];
        for j in 0..hd {
            gates[j] = sigmoid(z[j]);
            gates[hd + j] = sigmoid(z[hd + j]);
            gates[2 * hd + j] = z[2 * hd + j].tanh();
            gates[3 * hd + j] = sigmoid(z[3 * hd + j]);
        }
        let c_prev = std::mem::take(&mut c);
        let h_prev = std::mem::take(&mut h);
        c = (0..hd).map(|j| gates[hd + j] * c_prev[j] + gates[j] * gates[2 * hd + j]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        h = (0..hd).map(|j| gates[3 * hd + j] * tanh_c[j]).collect();
        steps.push(Step { id, h_prev, c_prev, gates, tanh_c });
    }
    let mut logits = [0.0; K];
    for (k, l) in logits.iter_mut().enumerate() {
        *l = p.b_out[k] + dot(p.w_out.row(k), &h);
    }
    (softmax(&logits), SequenceCache { steps, h })
}

/// Class probabilities for a batch of id sequences. Pad steps leave the
/// state untouched, so sequences may have any length.
pub fn lstm_forward(params: &LstmParams, batch: &[Vec<usize>]) -> Result<LstmOutput> {
    let mut probs = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    for seq in batch {
        params.check_ids(seq)?;
        let (pr, cache) = forward_one(params, seq);
        probs.push(pr);
        caches.push(cache);
    }
    Ok(LstmOutput { probs, caches })
}

fn check_labels(batch: &[Vec<usize>], labels: &[Category]) -> Result<()> {
    if batch.len() != labels.len() {
        return Err(NeuralError::LengthMismatch { docs: batch.len(), labels: labels.len() });
    }
    if batch.is_empty() {
        return Err(NeuralError::EmptyCorpus);
    }
    Ok(())
}

/// Mean cross-entropy of the batch.
pub fn lstm_loss(params: &LstmParams, batch: &[Vec<usize>], labels: &[Category]) -> Result<f64> {
    check_labels(batch, labels)?;
    let out = lstm_forward(params, batch)?;
    Ok(mean_ce(&out.probs, labels))
}

fn mean_ce(probs: &[[f64; K]], labels: &[Category]) -> f64 {
    let total: f64 = probs.iter().zip(labels).map(|(p, y)| -p[y.index()].ln()).sum();
    total / labels.len() as f64
}

/// Mean cross-entropy and its gradient by backpropagation through time.
pub fn lstm_gradients(params: &LstmParams, batch: &[Vec<usize>], labels: &[Category]) -> Result<(f64, LstmParams)> {
    check_labels(batch, labels)?;
    let out = lstm_forward(params, batch)?;
    let hd = params.hidden();
    let ed = params.embed_dim();
    let n = labels.len() as f64;
    let mut g = LstmParams::zeros(params.vocab_size(), ed, hd);
    let mut dz = vec![0.0; 4 * hd];
    let mut dx = vec![0.0; ed];

    for ((probs, cache), y) in out.probs.iter().zip(&out.caches).zip(labels) {
        let mut dlogits = *probs;
        dlogits[y.index()] -= 1.0;
        dlogits.iter_mut().for_each(|d| *d /= n);

        let mut dh = vec![0.0; hd];
        for k in 0..K {
            g.b_out[k] += dlogits[k];
            axpy(dlogits[k], &cache.h, g.w_out.row_mut(k));
            axpy(dlogits[k], params.w_out.row(k), &mut dh);
        }
        let mut dc = vec![0.0; hd];

        for step in cache.steps.iter().rev() {
            let gt = &step.gates;
            for j in 0..hd {
                let (i, f, gg, o) = (gt[j], gt[hd + j], gt[2 * hd + j], gt[3 * hd + j]);
                let tc = step.tanh_c[j];
                let d_o = dh[j] * tc;
                dc[j] += dh[j] * o * (1.0 - tc * tc);
                dz[j] = dc[j] * gg * i * (1.0 - i);
                dz[hd + j] = dc[j] * step.c_prev[j] * f * (1.0 - f);
                dz[2 * hd + j] = dc[j] * i * (1.0 - gg * gg);
                dz[3 * hd + j] = d_o * o * (1.0 - o);
                dc[j] *= f;
            }
            let x = params.embed.row(step.id);
            dx.fill(0.0);
            dh.fill(0.0);
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.b[r] += d;
                axpy(d, x, g.w.row_mut(r));
                axpy(d, &step.h_prev, g.u.row_mut(r));
                axpy(d, params.w.row(r), &mut dx);
                axpy(d, params.u.row(r), &mut dh);
            }
            axpy(1.0, &dx, g.embed.row_mut(step.id));
        }
    }
    Ok((mean_ce(&out.probs, labels), g))
}

fn predict_probs(probs: &[f64; K]) -> Category {
    argmax_category(Category::ALL.iter().map(|&c| (c, probs[c.index()]))).expect("five finite scores")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmClassifier {
    pub vocab: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub params: LstmParams,
    pub config: LstmConfig,
}

#[derive(Serialize, Deserialize)]
struct LstmFile {
    kind: String,
    version: u32,
    #[serde(flatten)]
    model: LstmClassifier,
}

impl LstmClassifier {
    pub fn new(vocab: Vec<String>, params: LstmParams, config: LstmConfig) -> Result<Self> {
        if params.vocab_size() != vocab.len() {
            return Err(NeuralError::InvalidConfig(format!(
                "embedding has {} token rows for {} vocabulary entries",
                params.vocab_size(),
                vocab.len()
            )));
        }
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i + 1)).collect();
        Ok(LstmClassifier { vocab, index, params, config })
    }

    /// Token ids of the in-vocabulary tokens, padded or truncated to `seq_len`.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        let ids: Vec<usize> = tokens.iter().filter_map(|t| self.index.get(t).copied()).collect();
        pad_or_truncate(&ids, self.config.seq_len)
    }

    pub fn predict_proba(&self, tokens: &[String]) -> [f64; K] {
        forward_one(&self.params, &self.encode(tokens)).0
    }

    pub fn predict(&self, tokens: &[String]) -> Category {
        predict_probs(&self.predict_proba(tokens))
    }

    pub fn to_json(&self) -> String {
        let file = LstmFile { kind: "lstm".into(), version: 1, model: self.clone() };
        serde_json::to_string(&file).expect("lstm serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: LstmFile = serde_json::from_str(s).map_err(|e| NeuralError::Json(e.to_string()))?;
        if file.kind != "lstm" || file.version != 1 {
            return Err(NeuralError::Json(format!("unsupported model {} v{}", file.kind, file.version)));
        }
        let m = file.model;
        LstmClassifier::new(m.vocab, m.params, m.config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LstmTrainReport {
    /// Mean pre-update batch loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Training-set accuracy after each epoch.
    pub train_accuracy: Vec<f64>,
    pub epochs_run: usize,
    /// Classes with no training document.
    pub missing_classes: Vec<Category>,
}

fn scale(g: &mut LstmParams, s: f64) {
    for t in g.tensors_mut() {
        t.iter_mut().for_each(|x| *x *= s);
    }
}

fn clip(g: &mut LstmParams, max_norm: f64) {
    let norm = g.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        scale(g, max_norm / norm);
    }
}

fn sgd(params: &mut LstmParams, grad: &LstmParams, lr: f64) {
    for (p, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
        axpy(-lr, g, p);
    }
}

fn accuracy(params: &LstmParams, seqs: &[Vec<usize>], labels: &[Category]) -> f64 {
    let hits = seqs.iter().zip(labels).filter(|(s, y)| predict_probs(&forward_one(params, s).0) == **y).count();
    hits as f64 / labels.len() as f64
}

/// Trains embeddings, recurrence and output layer jointly with plain SGD on
/// batch cross-entropy.
pub fn lstm_train(docs: &[Vec<String>], labels: &[Category], config: &LstmConfig) -> Result<(LstmClassifier, LstmTrainReport)> {
    config.validate()?;
    if docs.len() != labels.len() {
        return Err(NeuralError::LengthMismatch { docs: docs.len(), labels: labels.len() });
    }
    if docs.is_empty() {
        return Err(NeuralError::EmptyCorpus);
    }
    let vocab: Vec<String> = docs.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if vocab.is_empty() {
        return Err(NeuralError::EmptyVocabulary);
    }
    let params = LstmParams::init(vocab.len(), config.embed_dim, config.hidden, config.init_scale, config.seed);
    let mut model = LstmClassifier::new(vocab, params, config.clone())?;
    let seqs: Vec<Vec<usize>> = docs.iter().map(|d| model.encode(d)).collect();
    let present: BTreeSet<Category> = labels.iter().copied().collect();
    let missing_classes = Category::ALL.iter().copied().filter(|c| !present.contains(c)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut report = LstmTrainReport { epoch_loss: Vec::new(), train_accuracy: Vec::new(), epochs_run: 0, missing_classes };

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let cap = config.batches_per_epoch.unwrap_or(usize::MAX);
        let mut losses = Vec::new();
        for chunk in order.chunks(config.batch_size).take(cap) {
            let batch: Vec<Vec<usize>> = chunk.iter().map(|&i| seqs[i].clone()).collect();
            let ys: Vec<Category> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, mut grad) = lstm_gradients(&model.params, &batch, &ys)?;
            if config.reduction == LossReduction::Sum {
                scale(&mut grad, chunk.len() as f64);
            }
            if let Some(c) = config.clip_norm {
                clip(&mut grad, c);
            }
            sgd(&mut model.params, &grad, config.lr);
            losses.push(loss);
        }
        report.epoch_loss.push(losses.iter().sum::<f64>() / losses.len() as f64);
        let acc = accuracy(&model.params, &seqs, labels);
        report.train_accuracy.push(acc);
        report.epochs_run += 1;
        if config.target_accuracy.is_some_and(|t| acc >= t) {
            break;
        }
    }
    Ok((model, report))
}
