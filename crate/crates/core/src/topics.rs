//! Latent Dirichlet allocation fit by collapsed Gibbs sampling, used to
//! surface related hashtags from a seed collection.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_TOPICS: usize = 10;
pub const DEFAULT_BETA: f64 = 0.01;
pub const DEFAULT_SWEEPS: usize = 500;

/// The usual `50 / K` document-topic prior.
pub fn default_alpha(topics: usize) -> f64 {
    50.0 / topics as f64
}

#[derive(Debug, Error, PartialEq)]
pub enum TopicError {
    #[error("topic count must be at least 1")]
    NoTopics,
    #[error("hyperparameters must be positive (alpha = {alpha}, beta = {beta})")]
    InvalidPrior { alpha: f64, beta: f64 },
    #[error("corpus has no tokens")]
    EmptyVocabulary,
    #[error("topic {topic} out of range for {k} topics")]
    TopicOutOfRange { topic: usize, k: usize },
    #[error("term count must be at least 1")]
    NoTerms,
}

pub type Result<T> = std::result::Result<T, TopicError>;

#[derive(Debug, Clone, PartialEq)]
pub struct LdaConfig {
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            topics: DEFAULT_TOPICS,
            alpha: default_alpha(DEFAULT_TOPICS),
            beta: DEFAULT_BETA,
            sweeps: DEFAULT_SWEEPS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub config: LdaConfig,
    /// Vocabulary in lexicographic order.
    pub vocab: Vec<String>,
    /// Documents as vocabulary ids.
    pub docs: Vec<Vec<usize>>,
    /// Topic of every token, parallel to `docs`.
    pub assignments: Vec<Vec<usize>>,
    pub doc_topic: Vec<Vec<u32>>,
    pub topic_word: Vec<Vec<u32>>,
    pub topic_total: Vec<u32>,
    /// Per-token log-likelihood after each sweep.
    pub log_likelihood: Vec<f64>,
}

impl LdaModel {
    pub fn num_topics(&self) -> usize {
        self.config.topics
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    /// Checks that the three count tables agree with the assignments.
    pub fn counts_consistent(&self) -> bool {
        let k = self.num_topics();
        let v = self.vocab.len();
        let mut dt = vec![vec![0u32; k]; self.docs.len()];
        let mut tw = vec![vec![0u32; v]; k];
        let mut tt = vec![0u32; k];
        for (d, (words, zs)) in self.docs.iter().zip(&self.assignments).enumerate() {
            if words.len() != zs.len() {
                return false;
            }
            for (&w, &z) in words.iter().zip(zs) {
                dt[d][z] += 1;
                tw[z][w] += 1;
                tt[z] += 1;
            }
        }
        let doc_sums = self.doc_topic.iter().zip(&self.docs).all(|(row, d)| row.iter().sum::<u32>() as usize == d.len());
        let topic_sums = self.topic_word.iter().zip(&self.topic_total).all(|(row, &n)| row.iter().sum::<u32>() == n);
        let grand = self.topic_total.iter().sum::<u32>() as usize == self.total_tokens();
        doc_sums && topic_sums && grand && dt == self.doc_topic && tw == self.topic_word && tt == self.topic_total
    }

    /// Smoothed `p(word | topic)` over the whole vocabulary.
    pub fn topic_distribution(&self, topic: usize) -> Result<Vec<f64>> {
        if topic >= self.num_topics() {
            return Err(TopicError::TopicOutOfRange { topic, k: self.num_topics() });
        }
        let beta = self.config.beta;
        let denom = self.topic_total[topic] as f64 + beta * self.vocab.len() as f64;
        Ok(self.topic_word[topic].iter().map(|&c| (c as f64 + beta) / denom).collect())
    }

    fn sweep(&mut self, rng: &mut ChaCha8Rng, weights: &mut [f64]) {
        let (alpha, beta) = (self.config.alpha, self.config.beta);
        let v_beta = beta * self.vocab.len() as f64;
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i];
                let old = self.assignments[d][i];
                self.doc_topic[d][old] -= 1;
                self.topic_word[old][w] -= 1;
                self.topic_total[old] -= 1;

                let mut total = 0.0;
                for (k, slot) in weights.iter_mut().enumerate() {
                    let p = (self.doc_topic[d][k] as f64 + alpha) * (self.topic_word[k][w] as f64 + beta)
                        / (self.topic_total[k] as f64 + v_beta);
                    total += p;
                    *slot = total;
                }
                let u = rng.gen::<f64>() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(weights.len() - 1);

                self.assignments[d][i] = new;
                self.doc_topic[d][new] += 1;
                self.topic_word[new][w] += 1;
                self.topic_total[new] += 1;
            }
        }
    }

    /// Mean log `Σ_k θ_dk φ_kw` over all tokens under the current counts.
    pub fn per_token_log_likelihood(&self) -> f64 {
        let (alpha, beta) = (self.config.alpha, self.config.beta);
        let k = self.num_topics();
        let v_beta = beta * self.vocab.len() as f64;
        let mut ll = 0.0;
        for (d, words) in self.docs.iter().enumerate() {
            let theta_denom = words.len() as f64 + alpha * k as f64;
            for &w in words {
                let p: f64 = (0..k)
                    .map(|t| {
                        (self.doc_topic[d][t] as f64 + alpha) / theta_denom * (self.topic_word[t][w] as f64 + beta)
                            / (self.topic_total[t] as f64 + v_beta)
                    })
                    .sum();
                ll += p.ln();
            }
        }
        ll / self.total_tokens().max(1) as f64
    }
}

fn validate(config: &LdaConfig) -> Result<()> {
    if config.topics == 0 {
        return Err(TopicError::NoTopics);
    }
    if !(config.alpha > 0.0 && config.beta > 0.0) {
        return Err(TopicError::InvalidPrior { alpha: config.alpha, beta: config.beta });
    }
    Ok(())
}

/// Builds the model with uniformly random initial assignments, no sweeps yet.
pub fn init_lda(docs: &[Vec<String>], config: &LdaConfig) -> Result<(LdaModel, ChaCha8Rng)> {
    validate(config)?;
    let vocab: Vec<String> = docs.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if vocab.is_empty() {
        return Err(TopicError::EmptyVocabulary);
    }
    let ids: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let encoded: Vec<Vec<usize>> = docs.iter().map(|d| d.iter().map(|w| ids[w.as_str()]).collect()).collect();

    let k = config.topics;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut doc_topic = vec![vec![0u32; k]; encoded.len()];
    let mut topic_word = vec![vec![0u32; vocab.len()]; k];
    let mut topic_total = vec![0u32; k];
    let assignments = encoded
        .iter()
        .enumerate()
        .map(|(d, words)| {
            words
                .iter()
                .map(|&w| {
                    let z = rng.gen_range(0..k);
                    doc_topic[d][z] += 1;
                    topic_word[z][w] += 1;
                    topic_total[z] += 1;
                    z
                })
                .collect()
        })
        .collect();
    let model = LdaModel {
        config: config.clone(),
        vocab,
        docs: encoded,
        assignments,
        doc_topic,
        topic_word,
        topic_total,
        log_likelihood: Vec::new(),
    };
    Ok((model, rng))
}

/// Fits LDA, calling `after_sweep` with the model after every sweep.
pub fn fit_lda_with<F: FnMut(usize, &LdaModel)>(docs: &[Vec<String>], config: &LdaConfig, mut after_sweep: F) -> Result<LdaModel> {
    let (mut model, mut rng) = init_lda(docs, config)?;
    let mut weights = vec![0.0; config.topics];
    for s in 0..config.sweeps {
        model.sweep(&mut rng, &mut weights);
        let ll = model.per_token_log_likelihood();
        model.log_likelihood.push(ll);
        after_sweep(s, &model);
    }
    Ok(model)
}

pub fn fit_lda(docs: &[Vec<String>], config: &LdaConfig) -> Result<LdaModel> {
    fit_lda_with(docs, config, |_, _| {})
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicSummary {
    pub topic: usize,
    pub top_terms: Vec<(String, f64)>,
    pub hashtags: Vec<String>,
}

/// The `t` most probable terms of a topic; equal probabilities sort lexicographically.
pub fn top_terms(model: &LdaModel, topic: usize, t: usize) -> Result<Vec<(String, f64)>> {
    if t == 0 {
        return Err(TopicError::NoTerms);
    }
    let probs = model.topic_distribution(topic)?;
    let mut ranked: Vec<(usize, f64)> = probs.into_iter().enumerate().collect();
    // vocab ids are already lexicographic, so id order breaks ties
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(t).map(|(w, p)| (model.vocab[w].clone(), p)).collect())
}

/// Per topic, the `t` highest-ranked `#`-prefixed terms.
pub fn suggest_hashtags(model: &LdaModel, t: usize) -> Vec<Vec<String>> {
    (0..model.num_topics())
        .map(|k| {
            top_terms(model, k, model.vocab.len())
                .unwrap_or_default()
                .into_iter()
                .map(|(w, _)| w)
                .filter(|w| w.starts_with('#'))
                .take(t)
                .collect()
        })
        .collect()
}

pub fn summarize(model: &LdaModel, terms: usize, hashtags: usize) -> Result<Vec<TopicSummary>> {
    let tags = suggest_hashtags(model, hashtags);
    (0..model.num_topics())
        .zip(tags)
        .map(|(k, hashtags)| Ok(TopicSummary { topic: k, top_terms: top_terms(model, k, terms)?, hashtags }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(raw: &[&str]) -> Vec<Vec<String>> {
        raw.iter().map(|d| d.split_whitespace().map(str::to_string).collect()).collect()
    }

    fn cfg(topics: usize, sweeps: usize, seed: u64) -> LdaConfig {
        LdaConfig { topics, alpha: default_alpha(topics), beta: DEFAULT_BETA, sweeps, seed }
    }

    #[test]
    fn single_token_single_topic() {
        let m = fit_lda(&docs(&["#mkr"]), &cfg(1, 5, 0)).unwrap();
        assert_eq!(m.topic_word, vec![vec![1]]);
        assert_eq!(m.topic_total, vec![1]);
        assert_eq!(top_terms(&m, 0, 3).unwrap()[0].0, "#mkr");
    }

    #[test]
    fn single_topic_ranks_by_frequency() {
        let d = docs(&["b a c b", "b c", "d"]);
        let m = fit_lda(&d, &cfg(1, 3, 1)).unwrap();
        let terms: Vec<String> = top_terms(&m, 0, 4).unwrap().into_iter().map(|(w, _)| w).collect();
        assert_eq!(terms, ["b", "c", "a", "d"]);
        let total: f64 = m.topic_distribution(0).unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(fit_lda(&docs(&["a"]), &cfg(0, 1, 0)).unwrap_err(), TopicError::NoTopics);
        assert_eq!(fit_lda(&docs(&["", ""]), &cfg(2, 1, 0)).unwrap_err(), TopicError::EmptyVocabulary);
        let bad = LdaConfig { beta: 0.0, ..cfg(2, 1, 0) };
        assert!(matches!(fit_lda(&docs(&["a"]), &bad), Err(TopicError::InvalidPrior { .. })));
        let m = fit_lda(&docs(&["a b"]), &cfg(2, 1, 0)).unwrap();
        assert!(matches!(top_terms(&m, 2, 1), Err(TopicError::TopicOutOfRange { topic: 2, k: 2 })));
        assert_eq!(top_terms(&m, 0, 0), Err(TopicError::NoTerms));
    }

    #[test]
    fn counts_hold_each_sweep_and_seed_repeats() {
        let d = docs(&["a b c a", "c d e", "#x a e e", "b b #y"]);
        let mut ok = true;
        let m1 = fit_lda_with(&d, &cfg(3, 50, 9), |_, m| ok &= m.counts_consistent()).unwrap();
        assert!(ok);
        let m2 = fit_lda(&d, &cfg(3, 50, 9)).unwrap();
        assert_eq!(m1.assignments, m2.assignments);
        assert_eq!(m1.log_likelihood.len(), 50);
    }

    #[test]
    fn hashtags_filtered() {
        let m = fit_lda(&docs(&["plain words only", "more words"]), &cfg(2, 5, 0)).unwrap();
        assert!(suggest_hashtags(&m, 3).iter().all(Vec::is_empty));
        let m = fit_lda(&docs(&["#a b #c", "#a d"]), &cfg(2, 5, 0)).unwrap();
        for tags in suggest_hashtags(&m, 5) {
            assert!(tags.iter().all(|t| t.starts_with('#') && m.vocab.contains(t)));
        }
    }
}
