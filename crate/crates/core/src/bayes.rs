//! Naive Bayes classifiers: multinomial over sparse n-gram counts and
//! diagonal Gaussian over dense document embeddings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{argmax_category, Category};
use crate::features::SparseVector;

pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_VAR_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum BayesError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("smoothing alpha must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("variance floor must be positive and finite, got {0}")]
    InvalidVarFloor(f64),
    #[error("feature id {id} out of range for vocabulary of size {size}")]
    FeatureOutOfRange { id: usize, size: usize },
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported model {kind:?} version {version}")]
    UnsupportedModel { kind: String, version: u32 },
    #[error("model json: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, BayesError>;

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn normalize(classes: &[Category], scores: Vec<f64>) -> Vec<(Category, f64)> {
    let z = log_sum_exp(&scores);
    classes.iter().copied().zip(scores.into_iter().map(|s| s - z)).collect()
}

/// Distinct classes in code order plus `log(count/N)` for each.
fn class_priors(y: &[Category]) -> (Vec<Category>, Vec<usize>, Vec<f64>) {
    let mut counts = [0usize; Category::COUNT];
    for c in y {
        counts[c.index()] += 1;
    }
    let n = y.len() as f64;
    let classes: Vec<Category> =
        Category::ALL.iter().copied().filter(|c| counts[c.index()] > 0).collect();
    let log_prior = classes.iter().map(|c| (counts[c.index()] as f64 / n).ln()).collect();
    let counts = classes.iter().map(|c| counts[c.index()]).collect();
    (classes, counts, log_prior)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialNb {
    pub classes: Vec<Category>,
    pub log_prior: Vec<f64>,
    /// `classes.len()` rows of `vocab_size` log-probabilities.
    pub log_likelihood: Vec<Vec<f64>>,
    pub alpha: f64,
    pub vocab_size: usize,
}

pub fn train_multinomial(
    x: &[SparseVector],
    y: &[Category],
    vocab_size: usize,
    alpha: f64,
) -> Result<MultinomialNb> {
    if x.len() != y.len() {
        return Err(BayesError::LengthMismatch { features: x.len(), labels: y.len() });
    }
    if x.is_empty() {
        return Err(BayesError::EmptyTrainingSet);
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(BayesError::InvalidAlpha(alpha));
    }
    let (classes, _, log_prior) = class_priors(y);
    let row_of = |c: Category| classes.iter().position(|&k| k == c).expect("class present");

    let mut counts = vec![vec![0u64; vocab_size]; classes.len()];
    for (v, &label) in x.iter().zip(y) {
        let row = &mut counts[row_of(label)];
        for (id, c) in v.iter() {
            if id >= vocab_size {
                return Err(BayesError::FeatureOutOfRange { id, size: vocab_size });
            }
            row[id] += c as u64;
        }
    }
    let log_likelihood = counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            let denom = (total as f64 + alpha * vocab_size as f64).ln();
            row.iter().map(|&c| (c as f64 + alpha).ln() - denom).collect()
        })
        .collect();
    Ok(MultinomialNb { classes, log_prior, log_likelihood, alpha, vocab_size })
}

impl MultinomialNb {
    fn check(&self, x: &SparseVector) -> Result<()> {
        match x.max_index() {
            Some(id) if id >= self.vocab_size => {
                Err(BayesError::FeatureOutOfRange { id, size: self.vocab_size })
            }
            _ => Ok(()),
        }
    }

    /// Unnormalized joint log scores, one per class.
    pub fn joint_log_scores(&self, x: &SparseVector) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self
            .log_prior
            .iter()
            .zip(&self.log_likelihood)
            .map(|(p, row)| p + x.iter().map(|(id, c)| c as f64 * row[id]).sum::<f64>())
            .collect())
    }

    pub fn predict_log_proba(&self, x: &SparseVector) -> Result<Vec<(Category, f64)>> {
        Ok(normalize(&self.classes, self.joint_log_scores(x)?))
    }

    pub fn predict(&self, x: &SparseVector) -> Result<Category> {
        let scores = self.joint_log_scores(x)?;
        Ok(argmax_category(self.classes.iter().copied().zip(scores)).expect("at least one class"))
    }

    pub fn to_json(&self, vocab_hash: &str) -> String {
        serde_json::to_string(&ModelFile {
            kind: "mnb".into(),
            version: MODEL_VERSION,
            vocab_hash: Some(vocab_hash.to_string()),
            model: ModelBody::Mnb(self.clone()),
        })
        .expect("model serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub classes: Vec<Category>,
    pub log_prior: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub variance: Vec<Vec<f64>>,
    pub var_floor: f64,
}

pub fn train_gaussian(x: &[Vec<f64>], y: &[Category], var_floor: f64) -> Result<GaussianNb> {
    if x.len() != y.len() {
        return Err(BayesError::LengthMismatch { features: x.len(), labels: y.len() });
    }
    if x.is_empty() {
        return Err(BayesError::EmptyTrainingSet);
    }
    if !(var_floor > 0.0 && var_floor.is_finite()) {
        return Err(BayesError::InvalidVarFloor(var_floor));
    }
    let dim = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != dim) {
        return Err(BayesError::DimensionMismatch { expected: dim, got: bad.len() });
    }
    let (classes, counts, log_prior) = class_priors(y);
    let row_of = |c: Category| classes.iter().position(|&k| k == c).expect("class present");

    let mut mean = vec![vec![0.0; dim]; classes.len()];
    for (v, &label) in x.iter().zip(y) {
        for (m, xi) in mean[row_of(label)].iter_mut().zip(v) {
            *m += xi;
        }
    }
    for (row, &n) in mean.iter_mut().zip(&counts) {
        row.iter_mut().for_each(|m| *m /= n as f64);
    }
    let mut variance = vec![vec![0.0; dim]; classes.len()];
    for (v, &label) in x.iter().zip(y) {
        let r = row_of(label);
        for ((s, xi), m) in variance[r].iter_mut().zip(v).zip(&mean[r]) {
            *s += (xi - m) * (xi - m);
        }
    }
    for (row, &n) in variance.iter_mut().zip(&counts) {
        row.iter_mut().for_each(|s| *s = (*s / n as f64).max(var_floor));
    }
    Ok(GaussianNb { classes, log_prior, mean, variance, var_floor })
}

impl GaussianNb {
    pub fn dim(&self) -> usize {
        self.mean.first().map_or(0, Vec::len)
    }

    pub fn joint_log_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(BayesError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        Ok((0..self.classes.len())
            .map(|k| {
                let ll: f64 = x
                    .iter()
                    .zip(&self.mean[k])
                    .zip(&self.variance[k])
                    .map(|((xi, m), v)| -0.5 * (ln_2pi + v.ln() + (xi - m) * (xi - m) / v))
                    .sum();
                self.log_prior[k] + ll
            })
            .collect())
    }

    pub fn predict_log_proba(&self, x: &[f64]) -> Result<Vec<(Category, f64)>> {
        Ok(normalize(&self.classes, self.joint_log_scores(x)?))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Category> {
        let scores = self.joint_log_scores(x)?;
        Ok(argmax_category(self.classes.iter().copied().zip(scores)).expect("at least one class"))
    }

    pub fn to_json(&self, vocab_hash: Option<&str>) -> String {
        serde_json::to_string(&ModelFile {
            kind: "gnb".into(),
            version: MODEL_VERSION,
            vocab_hash: vocab_hash.map(str::to_string),
            model: ModelBody::Gnb(self.clone()),
        })
        .expect("model serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelBody {
    Mnb(MultinomialNb),
    Gnb(GaussianNb),
}

/// Versioned on-disk wrapper. `vocab_hash` names the vocabulary (or embedding
/// table) the parameters were fit against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kind: String,
    pub version: u32,
    pub vocab_hash: Option<String>,
    #[serde(flatten)]
    pub model: ModelBody,
}

impl ModelFile {
    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s).map_err(|e| BayesError::Json(e.to_string()))?;
        let kind_ok = matches!(
            (&file.model, file.kind.as_str()),
            (ModelBody::Mnb(_), "mnb") | (ModelBody::Gnb(_), "gnb")
        );
        if !kind_ok || file.version != MODEL_VERSION {
            return Err(BayesError::UnsupportedModel { kind: file.kind, version: file.version });
        }
        Ok(file)
    }
}
