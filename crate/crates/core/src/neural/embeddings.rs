use std::collections::{BTreeMap, HashMap};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{axpy, content_key, dot, sigmoid, Matrix, NeuralError, Result, SgdConfig};

/// One negative-sampling term: row `input` of the input matrix (a word or a
/// document) should score `target` high and every negative low.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegSamplingExample {
    pub input: usize,
    pub target: usize,
    pub negatives: Vec<usize>,
}

/// Draws token ids from the unigram distribution raised to the 3/4 power.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    dist: WeightedIndex<f64>,
}

impl NoiseSampler {
    pub fn new(counts: &[u64]) -> Result<Self> {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        let dist = WeightedIndex::new(weights).map_err(|_| NeuralError::EmptyVocabulary)?;
        Ok(NoiseSampler { dist })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        self.dist.sample(rng)
    }

    /// `n` negatives for `target`; draws equal to the target are discarded.
    fn negatives(&self, target: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..n).map(|_| self.sample(rng)).filter(|&w| w != target).collect()
    }
}

fn ln_sigmoid(x: f64) -> f64 {
    // ln σ(x) = -ln(1 + e^{-x})
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Loss of one example given its input vector, plus the coefficient `g_r`
/// of every output row, so that `∂L/∂v = Σ g_r u_r` and `∂L/∂u_r = g_r v`.
fn neg_sampling_terms(v: &[f64], output: &Matrix, ex: &NegSamplingExample) -> (f64, Vec<(usize, f64)>) {
    let mut coeffs = Vec::with_capacity(1 + ex.negatives.len());
    let s = dot(output.row(ex.target), v);
    let mut loss = -ln_sigmoid(s);
    coeffs.push((ex.target, sigmoid(s) - 1.0));
    for &n in &ex.negatives {
        let s = dot(output.row(n), v);
        loss -= ln_sigmoid(-s);
        coeffs.push((n, sigmoid(s)));
    }
    (loss, coeffs)
}

/// One SGD step on a single example, updating both matrices. Returns the
/// pre-step loss.
fn neg_sampling_step(input: &mut Matrix, output: &mut Matrix, ex: &NegSamplingExample, lr: f64) -> f64 {
    let v = input.row(ex.input).to_vec();
    let (loss, coeffs) = neg_sampling_terms(&v, output, ex);
    let mut grad_v = vec![0.0; v.len()];
    for &(r, g) in &coeffs {
        axpy(g, output.row(r), &mut grad_v);
    }
    for &(r, g) in &coeffs {
        axpy(-lr * g, &v, output.row_mut(r));
    }
    axpy(-lr, &grad_v, input.row_mut(ex.input));
    loss
}

/// Same step with the output matrix held fixed.
fn neg_sampling_step_frozen(v: &mut [f64], output: &Matrix, ex: &NegSamplingExample, lr: f64) -> f64 {
    let (loss, coeffs) = neg_sampling_terms(v, output, ex);
    let mut grad_v = vec![0.0; v.len()];
    for &(r, g) in &coeffs {
        axpy(g, output.row(r), &mut grad_v);
    }
    axpy(-lr, &grad_v, v);
    loss
}

/// Summed negative-sampling loss of a set of examples.
pub fn neg_sampling_loss(input: &Matrix, output: &Matrix, examples: &[NegSamplingExample]) -> f64 {
    examples
        .iter()
        .map(|ex| {
            let v = input.row(ex.input);
            let mut l = -ln_sigmoid(dot(output.row(ex.target), v));
            for &n in &ex.negatives {
                l -= ln_sigmoid(-dot(output.row(n), v));
            }
            l
        })
        .sum()
}

/// Analytic gradient of [`neg_sampling_loss`] with respect to both matrices.
pub fn neg_sampling_gradient(input: &Matrix, output: &Matrix, examples: &[NegSamplingExample]) -> (Matrix, Matrix) {
    let mut g_in = Matrix::zeros(input.rows, input.cols);
    let mut g_out = Matrix::zeros(output.rows, output.cols);
    for ex in examples {
        let v = input.row(ex.input);
        let (_, coeffs) = neg_sampling_terms(v, output, ex);
        for &(r, g) in &coeffs {
            axpy(g, output.row(r), g_in.row_mut(ex.input));
            axpy(g, v, g_out.row_mut(r));
        }
    }
    (g_in, g_out)
}

struct TokenVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
}

fn token_vocab(docs: &[Vec<String>]) -> TokenVocab {
    let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
    for t in docs.iter().flatten() {
        *freq.entry(t).or_insert(0) += 1;
    }
    let words: Vec<String> = freq.keys().map(|w| w.to_string()).collect();
    let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    TokenVocab { words, index, counts: freq.into_values().collect() }
}

fn encode(index: &HashMap<String, usize>, tokens: &[String]) -> Vec<usize> {
    tokens.iter().filter_map(|t| index.get(t).copied()).collect()
}

fn doc_skipgrams(
    doc: &[usize],
    window: usize,
    negatives: usize,
    noise: &NoiseSampler,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<NegSamplingExample>,
) {
    for (c, &center) in doc.iter().enumerate() {
        let lo = c.saturating_sub(window);
        let hi = (c + window).min(doc.len().saturating_sub(1));
        for j in (lo..=hi).filter(|&j| j != c) {
            let target = doc[j];
            out.push(NegSamplingExample { input: center, target, negatives: noise.negatives(target, negatives, rng) });
        }
    }
}

/// Skip-gram examples for already-encoded documents, as one training epoch
/// would draw them.
pub fn skipgram_examples(
    docs: &[Vec<usize>],
    config: &SgdConfig,
    noise: &NoiseSampler,
    rng: &mut ChaCha8Rng,
) -> Vec<NegSamplingExample> {
    let mut out = Vec::new();
    for d in docs {
        doc_skipgrams(d, config.window, config.negatives, noise, rng, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub vocab: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub dim: usize,
    pub input_vectors: Matrix,
    pub output_vectors: Matrix,
    pub seed: u64,
}

impl EmbeddingTable {
    pub fn from_parts(vocab: Vec<String>, input_vectors: Matrix, output_vectors: Matrix, seed: u64) -> Self {
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let dim = input_vectors.cols;
        EmbeddingTable { vocab, index, dim, input_vectors, output_vectors, seed }
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.id(token).map(|i| self.input_vectors.row(i))
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        encode(&self.index, tokens)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("embedding table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: EmbeddingTable = serde_json::from_str(s).map_err(|e| NeuralError::Json(e.to_string()))?;
        Ok(EmbeddingTable::from_parts(t.vocab, t.input_vectors, t.output_vectors, t.seed))
    }
}

/// Skip-gram with negative sampling over token lists. Returns the table and
/// the mean per-example loss of every epoch.
pub fn train_skipgram(docs: &[Vec<String>], config: &SgdConfig) -> Result<(EmbeddingTable, Vec<f64>)> {
    config.validate()?;
    if docs.is_empty() {
        return Err(NeuralError::EmptyCorpus);
    }
    let vocab = token_vocab(docs);
    if vocab.words.is_empty() {
        return Err(NeuralError::EmptyVocabulary);
    }
    let noise = NoiseSampler::new(&vocab.counts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.dim;
    let mut input = Matrix::uniform(vocab.words.len(), dim, 0.5 / dim as f64, &mut rng);
    let mut output = Matrix::zeros(vocab.words.len(), dim);
    let encoded: Vec<Vec<usize>> = docs.iter().map(|d| encode(&vocab.index, d)).collect();

    let mut losses = Vec::with_capacity(config.epochs);
    let mut buf = Vec::new();
    for _ in 0..config.epochs {
        let (mut total, mut n) = (0.0, 0usize);
        for d in &encoded {
            buf.clear();
            doc_skipgrams(d, config.window, config.negatives, &noise, &mut rng, &mut buf);
            for ex in &buf {
                total += neg_sampling_step(&mut input, &mut output, ex, config.lr);
                n += 1;
            }
        }
        losses.push(if n == 0 { 0.0 } else { total / n as f64 });
    }
    Ok((EmbeddingTable::from_parts(vocab.words, input, output, config.seed), losses))
}

/// Mean input vector of the in-vocabulary tokens; zero when there are none.
pub fn doc_embed_average(tokens: &[String], table: &EmbeddingTable) -> Vec<f64> {
    let mut acc = vec![0.0; table.dim];
    let mut n = 0usize;
    for t in tokens {
        if let Some(v) = table.vector(t) {
            axpy(1.0, v, &mut acc);
            n += 1;
        }
    }
    if n > 0 {
        acc.iter_mut().for_each(|x| *x /= n as f64);
    }
    acc
}

/// Document vectors trained with PV-DBOW.
///
/// Every document vector is re-inferred against the trained output vectors
/// with initialization and sampling keyed by the document's content, so
/// identical documents always receive identical vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocVectorTable {
    pub vocab: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub dim: usize,
    pub doc_vectors: Matrix,
    pub output_vectors: Matrix,
    pub counts: Vec<u64>,
    pub config: SgdConfig,
}

fn keyed_rng(seed: u64, tokens: &[String]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ content_key(tokens))
}

impl DocVectorTable {
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        encode(&self.index, tokens)
    }

    fn noise(&self) -> Result<NoiseSampler> {
        NoiseSampler::new(&self.counts)
    }

    /// Fits a vector for a token list against the frozen output vectors.
    pub fn infer(&self, tokens: &[String]) -> Vec<f64> {
        let mut rng = keyed_rng(self.config.seed, tokens);
        let mut v = Matrix::uniform(1, self.dim, 0.5 / self.dim as f64, &mut rng).data;
        let ids = self.encode(tokens);
        let Ok(noise) = self.noise() else { return v };
        for _ in 0..self.config.epochs {
            for &t in &ids {
                let ex = NegSamplingExample { input: 0, target: t, negatives: noise.negatives(t, self.config.negatives, &mut rng) };
                neg_sampling_step_frozen(&mut v, &self.output_vectors, &ex, self.config.lr);
            }
        }
        v
    }

    pub fn doc_vector(&self, doc: usize) -> &[f64] {
        self.doc_vectors.row(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("doc vectors serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut t: DocVectorTable = serde_json::from_str(s).map_err(|e| NeuralError::Json(e.to_string()))?;
        t.index = t.vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(t)
    }
}

/// PV-DBOW examples (input = document row) as one joint epoch would draw them.
pub fn pvdbow_examples(docs: &[Vec<usize>], config: &SgdConfig, noise: &NoiseSampler, rng: &mut ChaCha8Rng) -> Vec<NegSamplingExample> {
    let mut out = Vec::new();
    for (d, ids) in docs.iter().enumerate() {
        for &t in ids {
            out.push(NegSamplingExample { input: d, target: t, negatives: noise.negatives(t, config.negatives, rng) });
        }
    }
    out
}

pub fn train_pvdbow(docs: &[Vec<String>], config: &SgdConfig) -> Result<(DocVectorTable, Vec<f64>)> {
    config.validate()?;
    if docs.is_empty() {
        return Err(NeuralError::EmptyCorpus);
    }
    let vocab = token_vocab(docs);
    if vocab.words.is_empty() {
        return Err(NeuralError::EmptyVocabulary);
    }
    let noise = NoiseSampler::new(&vocab.counts)?;
    let dim = config.dim;
    let scale = 0.5 / dim as f64;
    let mut doc_vectors = Matrix::zeros(docs.len(), dim);
    for (d, tokens) in docs.iter().enumerate() {
        let init = Matrix::uniform(1, dim, scale, &mut keyed_rng(config.seed, tokens));
        doc_vectors.row_mut(d).copy_from_slice(&init.data);
    }
    let mut output = Matrix::zeros(vocab.words.len(), dim);
    let encoded: Vec<Vec<usize>> = docs.iter().map(|d| encode(&vocab.index, d)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (mut total, mut n) = (0.0, 0usize);
        for (d, ids) in encoded.iter().enumerate() {
            for &t in ids {
                let ex = NegSamplingExample { input: d, target: t, negatives: noise.negatives(t, config.negatives, &mut rng) };
                total += neg_sampling_step(&mut doc_vectors, &mut output, &ex, config.lr);
                n += 1;
            }
        }
        losses.push(if n == 0 { 0.0 } else { total / n as f64 });
    }

    let mut table = DocVectorTable {
        vocab: vocab.words,
        index: vocab.index,
        dim,
        doc_vectors,
        output_vectors: output,
        counts: vocab.counts,
        config: config.clone(),
    };
    for (d, tokens) in docs.iter().enumerate() {
        let v = table.infer(tokens);
        table.doc_vectors.row_mut(d).copy_from_slice(&v);
    }
    Ok((table, losses))
}
