//! From-scratch gradient-trained models: skip-gram word vectors, PV-DBOW
//! document vectors and an LSTM sequence classifier.

mod embeddings;
mod lstm;

pub use embeddings::{
    doc_embed_average, neg_sampling_gradient, neg_sampling_loss, pvdbow_examples, skipgram_examples,
    train_pvdbow, train_skipgram, DocVectorTable, EmbeddingTable, NegSamplingExample, NoiseSampler,
};
pub use lstm::{
    lstm_forward, lstm_gradients, lstm_loss, lstm_train, pad_or_truncate, LstmClassifier, LstmConfig, LstmParams,
    LossReduction, LstmOutput, LstmTrainReport, SequenceCache, PAD,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range (limit {limit})")]
    TokenOutOfRange { id: usize, limit: usize },
    #[error("{docs} documents but {labels} labels")]
    LengthMismatch { docs: usize, labels: usize },
    #[error("model json: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, NeuralError>;

/// Plain SGD settings shared by the embedding trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub negatives: usize,
    pub window: usize,
    pub dim: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr: 0.025, epochs: 5, batch_size: 1, seed: 0, negatives: 5, window: 5, dim: 50 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(NeuralError::InvalidConfig(what.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.negatives == 0 || self.window == 0 || self.dim == 0 {
            return bad("epochs, batch_size, negatives, window and dim must be at least 1");
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-scale..=scale)).collect();
        Matrix { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Stable 64-bit key of a token sequence, for content-keyed seeding.
pub(crate) fn content_key(tokens: &[String]) -> u64 {
    let mut h = Sha256::new();
    for t in tokens {
        h.update(t.as_bytes());
        h.update([0x1f]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sgd_config_validation() {
        assert!(SgdConfig::default().validate().is_ok());
        assert!(SgdConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(SgdConfig { negatives: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn content_key_depends_on_boundaries() {
        let a = content_key(&["ab".into(), "c".into()]);
        let b = content_key(&["a".into(), "bc".into()]);
        assert_ne!(a, b);
        assert_eq!(a, content_key(&["ab".into(), "c".into()]));
    }
}
