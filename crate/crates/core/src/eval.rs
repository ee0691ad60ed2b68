//! Cross-validation, metrics and the accuracy results table.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{self, GaussianNb, MultinomialNb, DEFAULT_ALPHA, DEFAULT_VAR_FLOOR};
use crate::corpus::{Category, Corpus, Document};
use crate::features::{self, build_vocab, vectorize, NgramSpec, Vocabulary};
use crate::neural::{self, doc_embed_average, DocVectorTable, EmbeddingTable, LstmClassifier, LstmConfig, SgdConfig};

pub const DEFAULT_FOLDS: usize = 10;

const K: usize = Category::COUNT;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k must be at least 2, got {0}")]
    TooFewFolds(usize),
    #[error("{k} folds requested for {n} documents")]
    TooManyFolds { k: usize, n: usize },
    #[error("{truth} true labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("document {0} has no label")]
    Unlabeled(String),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("results table has no rows with fold accuracies")]
    EmptyTable,
    #[error("results csv: {0}")]
    Csv(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Features(#[from] features::FeatureError),
    #[error(transparent)]
    Bayes(#[from] bayes::BayesError),
    #[error(transparent)]
    Neural(#[from] neural::NeuralError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Held-out document indices for each fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
    pub stratified: bool,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn len(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Training indices of fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut out: Vec<usize> =
            self.folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, idx)| idx.iter().copied()).collect();
        out.sort_unstable();
        out
    }

    /// True when the folds are disjoint and cover `0..n` exactly.
    pub fn is_partition(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.folds.iter().flatten() {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k < 2 {
        return Err(EvalError::TooFewFolds(k));
    }
    if k > n {
        return Err(EvalError::TooManyFolds { k, n });
    }
    Ok(())
}

fn deal(order: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k];
    for (p, &i) in order.iter().enumerate() {
        folds[p % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

/// Shuffles each class separately, lays the classes end to end and deals
/// the sequence round-robin, so every class spreads over the folds within one.
pub fn stratified_kfold(labels: &[Category], k: usize, seed: u64) -> Result<FoldPlan> {
    check_k(k, labels.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(labels.len());
    for c in Category::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        order.extend(members);
    }
    Ok(FoldPlan { folds: deal(&order, k), seed, stratified: true })
}

pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    check_k(k, n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(FoldPlan { folds: deal(&order, k), seed, stratified: false })
}

pub type Confusion = [[u64; K]; K];

/// Entry `[i][j]` counts documents of true class `i` predicted as `j`.
pub fn confusion(y_true: &[Category], y_pred: &[Category]) -> Result<Confusion> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch { truth: y_true.len(), pred: y_pred.len() });
    }
    let mut m = [[0u64; K]; K];
    for (t, p) in y_true.iter().zip(y_pred) {
        m[t.index()][p.index()] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: [f64; K],
    pub recall: [f64; K],
    pub f1: [f64; K],
    pub confusion: Confusion,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Metrics {
    pub fn from_confusion(confusion: Confusion) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..K).map(|i| confusion[i][i]).sum();
        let mut precision = [0.0; K];
        let mut recall = [0.0; K];
        let mut f1 = [0.0; K];
        for c in 0..K {
            let predicted: u64 = (0..K).map(|t| confusion[t][c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            precision[c] = ratio(confusion[c][c], predicted);
            recall[c] = ratio(confusion[c][c], actual);
            let s = precision[c] + recall[c];
            f1[c] = if s == 0.0 { 0.0 } else { 2.0 * precision[c] * recall[c] / s };
        }
        Metrics { accuracy: ratio(trace, total), precision, recall, f1, confusion }
    }

    pub fn evaluate(y_true: &[Category], y_pred: &[Category]) -> Result<Self> {
        Ok(Metrics::from_confusion(confusion(y_true, y_pred)?))
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

/// A classifier fitted on one training split.
pub trait Model: Send + Sync {
    fn predict(&self, doc: &Document) -> Result<Category>;

    /// The n-gram vocabulary the model was fitted with, if it has one.
    fn vocabulary(&self) -> Option<&Vocabulary> {
        None
    }

    /// Self-contained JSON that [`load_model`] reads back, if the model is persistable.
    fn to_json(&self) -> Option<String> {
        None
    }
}

/// A feature extractor plus classifier that can be fitted from documents.
pub trait Pipeline: Send + Sync {
    fn name(&self) -> String;
    fn fit(&self, train: &[&Document]) -> Result<Box<dyn Model>>;
}

fn labels_of(docs: &[&Document]) -> Result<Vec<Category>> {
    docs.iter().map(|d| d.label.ok_or_else(|| EvalError::Unlabeled(d.id.clone()))).collect()
}

fn tokens_of(docs: &[&Document]) -> Vec<Vec<String>> {
    docs.iter().map(|d| d.tokens.clone()).collect()
}

pub struct NgramNb {
    pub name: String,
    pub spec: NgramSpec,
    pub min_df: usize,
    pub alpha: f64,
}

pub struct NgramNbModel {
    pub vocab: Vocabulary,
    pub nb: MultinomialNb,
}

impl Model for NgramNbModel {
    fn predict(&self, doc: &Document) -> Result<Category> {
        Ok(self.nb.predict(&vectorize(doc, &self.vocab)?)?)
    }

    fn vocabulary(&self) -> Option<&Vocabulary> {
        Some(&self.vocab)
    }

    fn to_json(&self) -> Option<String> {
        Some(bundle("ngram+mnb", &[("vocab", self.vocab.to_json()), ("model", self.nb.to_json(&self.vocab.content_hash()))]))
    }
}

impl Pipeline for NgramNb {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn fit(&self, train: &[&Document]) -> Result<Box<dyn Model>> {
        let y = labels_of(train)?;
        let vocab = build_vocab(train.iter().copied(), &self.spec, self.min_df)?;
        let x = train.iter().map(|d| vectorize(d, &vocab)).collect::<features::Result<Vec<_>>>()?;
        let nb = bayes::train_multinomial(&x, &y, vocab.len(), self.alpha)?;
        Ok(Box::new(NgramNbModel { vocab, nb }))
    }
}

/// Averaged skip-gram vectors into Gaussian NB.
pub struct Word2VecNb {
    pub sgd: SgdConfig,
    pub var_floor: f64,
}

pub struct Word2VecNbModel {
    pub table: EmbeddingTable,
    pub nb: GaussianNb,
}

impl Model for Word2VecNbModel {
    fn predict(&self, doc: &Document) -> Result<Category> {
        Ok(self.nb.predict(&doc_embed_average(&doc.tokens, &self.table))?)
    }

    fn to_json(&self) -> Option<String> {
        Some(bundle("word2vec+gnb", &[("embeddings", self.table.to_json()), ("model", self.nb.to_json(None))]))
    }
}

impl Pipeline for Word2VecNb {
    fn name(&self) -> String {
        "word2vec".into()
    }

    fn fit(&self, train: &[&Document]) -> Result<Box<dyn Model>> {
        let y = labels_of(train)?;
        let (table, _) = neural::train_skipgram(&tokens_of(train), &self.sgd)?;
        let x: Vec<Vec<f64>> = train.iter().map(|d| doc_embed_average(&d.tokens, &table)).collect();
        let nb = bayes::train_gaussian(&x, &y, self.var_floor)?;
        Ok(Box::new(Word2VecNbModel { table, nb }))
    }
}

/// PV-DBOW document vectors into Gaussian NB.
pub struct Doc2VecNb {
    pub sgd: SgdConfig,
    pub var_floor: f64,
}

pub struct Doc2VecNbModel {
    pub table: DocVectorTable,
    pub nb: GaussianNb,
}

impl Model for Doc2VecNbModel {
    fn predict(&self, doc: &Document) -> Result<Category> {
        Ok(self.nb.predict(&self.table.infer(&doc.tokens))?)
    }

    fn to_json(&self) -> Option<String> {
        Some(bundle("doc2vec+gnb", &[("doc_vectors", self.table.to_json()), ("model", self.nb.to_json(None))]))
    }
}

impl Pipeline for Doc2VecNb {
    fn name(&self) -> String {
        "doc2vec".into()
    }

    fn fit(&self, train: &[&Document]) -> Result<Box<dyn Model>> {
        let y = labels_of(train)?;
        let (table, _) = neural::train_pvdbow(&tokens_of(train), &self.sgd)?;
        let x: Vec<Vec<f64>> = (0..train.len()).map(|d| table.doc_vector(d).to_vec()).collect();
        let nb = bayes::train_gaussian(&x, &y, self.var_floor)?;
        Ok(Box::new(Doc2VecNbModel { table, nb }))
    }
}

pub struct Lstm {
    pub config: LstmConfig,
}

impl Model for LstmClassifier {
    fn predict(&self, doc: &Document) -> Result<Category> {
        Ok(LstmClassifier::predict(self, &doc.tokens))
    }

    fn to_json(&self) -> Option<String> {
        Some(LstmClassifier::to_json(self))
    }
}

const BUNDLE_VERSION: u64 = 1;

fn bundle(kind: &str, parts: &[(&str, String)]) -> String {
    let mut map = serde_json::Map::new();
    map.insert("kind".into(), kind.into());
    map.insert("version".into(), BUNDLE_VERSION.into());
    for (name, json) in parts {
        map.insert((*name).into(), serde_json::from_str(json).expect("component json is valid"));
    }
    serde_json::Value::Object(map).to_string()
}

fn gnb_of(file: bayes::ModelFile) -> Result<GaussianNb> {
    match file.model {
        bayes::ModelBody::Gnb(nb) => Ok(nb),
        bayes::ModelBody::Mnb(_) => Err(EvalError::ModelFile("expected a gnb model".into())),
    }
}

/// Reads a model written by [`Model::to_json`].
pub fn load_model(s: &str) -> Result<Box<dyn Model>> {
    let bad = |m: &str| EvalError::ModelFile(m.to_string());
    let value: serde_json::Value = serde_json::from_str(s).map_err(|e| bad(&e.to_string()))?;
    let kind = value.get("kind").and_then(|k| k.as_str()).ok_or_else(|| bad("missing kind"))?;
    if kind == "lstm" {
        return Ok(Box::new(LstmClassifier::from_json(s)?));
    }
    if value.get("version").and_then(|v| v.as_u64()) != Some(BUNDLE_VERSION) {
        return Err(bad("unsupported version"));
    }
    let part = |name: &str| value.get(name).map(|v| v.to_string()).ok_or_else(|| bad(&format!("missing {name}")));
    let model = bayes::ModelFile::from_json(&part("model")?)?;
    Ok(match kind {
        "ngram+mnb" => {
            let vocab = Vocabulary::from_json(&part("vocab")?)?;
            if model.vocab_hash.as_deref() != Some(vocab.content_hash().as_str()) {
                return Err(bad("model was fitted against a different vocabulary"));
            }
            let nb = match model.model {
                bayes::ModelBody::Mnb(nb) => nb,
                bayes::ModelBody::Gnb(_) => return Err(bad("expected an mnb model")),
            };
            Box::new(NgramNbModel { vocab, nb })
        }
        "word2vec+gnb" => {
            Box::new(Word2VecNbModel { table: EmbeddingTable::from_json(&part("embeddings")?)?, nb: gnb_of(model)? })
        }
        "doc2vec+gnb" => {
            Box::new(Doc2VecNbModel { table: DocVectorTable::from_json(&part("doc_vectors")?)?, nb: gnb_of(model)? })
        }
        other => return Err(bad(&format!("unknown kind {other:?}"))),
    })
}

impl Pipeline for Lstm {
    fn name(&self) -> String {
        "lstm".into()
    }

    fn fit(&self, train: &[&Document]) -> Result<Box<dyn Model>> {
        let y = labels_of(train)?;
        let (model, _) = neural::lstm_train(&tokens_of(train), &y, &self.config)?;
        Ok(Box::new(model))
    }
}

/// Hyperparameters shared by the pipelines built from method names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    pub min_df: usize,
    pub alpha: f64,
    pub var_floor: f64,
    pub sgd: SgdConfig,
    pub lstm: LstmConfig,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            min_df: 2,
            alpha: DEFAULT_ALPHA,
            var_floor: DEFAULT_VAR_FLOOR,
            sgd: SgdConfig::default(),
            lstm: LstmConfig::default(),
        }
    }
}

/// Result rows in their display order.
pub const METHOD_ORDER: [&str; 12] = [
    "bigrams",
    "trigrams",
    "fourgrams",
    "char2",
    "char3",
    "char4",
    "all-grams",
    "all-chars",
    "all",
    "word2vec",
    "doc2vec",
    "lstm",
];

fn split_method(method: &str) -> (String, Option<String>) {
    let lower = method.trim().to_ascii_lowercase();
    match lower.rsplit_once('+') {
        Some((feat, clf)) if matches!(clf, "mnb" | "gnb" | "nb" | "lstm") => (feat.to_string(), Some(clf.to_string())),
        _ => (lower, None),
    }
}

/// Canonical row name of a method string, e.g. `char3+mnb` -> `char3`.
pub fn canonical_method(method: &str) -> String {
    let (feat, _) = split_method(method);
    match feat.as_str() {
        "threegrams" => "trigrams".into(),
        "four-grams" => "fourgrams".into(),
        _ => feat,
    }
}

/// Builds a pipeline from names like `char3+mnb`, `bigrams`, `word2vec+gnb`,
/// `doc2vec` or `lstm`.
pub fn pipeline_for(method: &str, options: &PipelineOptions) -> Result<Box<dyn Pipeline>> {
    let unknown = || EvalError::UnknownMethod(method.to_string());
    let (feat, clf) = split_method(method);
    let clf = clf.as_deref();
    Ok(match feat.as_str() {
        "word2vec" if matches!(clf, None | Some("gnb") | Some("nb")) => {
            Box::new(Word2VecNb { sgd: options.sgd.clone(), var_floor: options.var_floor })
        }
        "doc2vec" if matches!(clf, None | Some("gnb") | Some("nb")) => {
            Box::new(Doc2VecNb { sgd: options.sgd.clone(), var_floor: options.var_floor })
        }
        "lstm" if matches!(clf, None | Some("lstm")) => Box::new(Lstm { config: options.lstm.clone() }),
        _ if matches!(clf, None | Some("mnb") | Some("nb")) => {
            let spec = NgramSpec::named(&feat).map_err(|_| unknown())?;
            Box::new(NgramNb { name: canonical_method(method), spec, min_df: options.min_df, alpha: options.alpha })
        }
        _ => return Err(unknown()),
    })
}

pub struct FoldResult {
    pub fold: usize,
    pub metrics: Metrics,
    pub model: Box<dyn Model>,
}

pub struct CvResult {
    pub method: String,
    pub folds: Vec<FoldResult>,
}

impl CvResult {
    pub fn fold_accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.metrics.accuracy).collect()
    }

    /// Unweighted mean of the fold accuracies.
    pub fn mean_accuracy(&self) -> f64 {
        let a = self.fold_accuracies();
        a.iter().sum::<f64>() / a.len() as f64
    }

    pub fn pooled_confusion(&self) -> Confusion {
        let mut m = [[0u64; K]; K];
        for f in &self.folds {
            for i in 0..K {
                for j in 0..K {
                    m[i][j] += f.metrics.confusion[i][j];
                }
            }
        }
        m
    }

    pub fn row(&self) -> ResultRow {
        ResultRow { method: self.method.clone(), mean_accuracy: self.mean_accuracy(), fold_accuracies: self.fold_accuracies() }
    }
}

/// Fits on k-1 folds and scores the held-out fold, for every fold. Folds run
/// in parallel; results come back in fold order.
pub fn cross_validate(pipeline: &dyn Pipeline, corpus: &Corpus, plan: &FoldPlan) -> Result<CvResult> {
    let docs = &corpus.documents;
    if let Some(d) = docs.iter().find(|d| d.label.is_none()) {
        return Err(EvalError::Unlabeled(d.id.clone()));
    }
    if !plan.is_partition(docs.len()) {
        return Err(EvalError::TooManyFolds { k: plan.k(), n: docs.len() });
    }
    let folds = (0..plan.k())
        .into_par_iter()
        .map(|f| {
            let train: Vec<&Document> = plan.train_indices(f).into_iter().map(|i| &docs[i]).collect();
            let model = pipeline.fit(&train)?;
            let test = &plan.folds[f];
            let truth: Vec<Category> = test.iter().map(|&i| docs[i].label.expect("checked above")).collect();
            let pred = test.iter().map(|&i| model.predict(&docs[i])).collect::<Result<Vec<_>>>()?;
            Ok(FoldResult { fold: f, metrics: Metrics::evaluate(&truth, &pred)?, model })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvResult { method: pipeline.name(), folds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub mean_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

fn display_label(method: &str) -> (String, &'static str) {
    let label = match canonical_method(method).as_str() {
        "bigrams" => "word bigrams (BOW)",
        "trigrams" => "word trigrams (BOW)",
        "fourgrams" => "word 4-grams (BOW)",
        "char2" => "char 2-grams (BOW)",
        "char3" => "char 3-grams (BOW)",
        "char4" => "char 4-grams (BOW)",
        "all-grams" => "all word n-grams (BOW)",
        "all-chars" => "all char n-grams (BOW)",
        "all" => "all word + char n-grams (BOW)",
        "word2vec" => "Word2vec",
        "doc2vec" => "Doc2vec",
        "lstm" => "LSTM",
        _ => return (method.to_string(), "-"),
    };
    let clf = match canonical_method(method).as_str() {
        "lstm" => "LSTM",
        "word2vec" | "doc2vec" => "Gaussian NB",
        _ => "multinomial NB",
    };
    (label.to_string(), clf)
}

impl ResultsTable {
    pub fn push(&mut self, row: ResultRow) {
        self.rows.push(row);
    }

    /// Rows with at least one fold, known methods first in display order.
    pub fn ordered(&self) -> Vec<&ResultRow> {
        let rank = |r: &ResultRow| {
            let c = canonical_method(&r.method);
            METHOD_ORDER.iter().position(|m| *m == c).unwrap_or(METHOD_ORDER.len())
        };
        let mut rows: Vec<&ResultRow> = self.rows.iter().filter(|r| !r.fold_accuracies.is_empty()).collect();
        rows.sort_by_key(|r| rank(r));
        rows
    }

    pub fn to_text(&self) -> Result<String> {
        let rows = self.ordered();
        if rows.is_empty() {
            return Err(EvalError::EmptyTable);
        }
        let labels: Vec<(String, &str)> = rows.iter().map(|r| display_label(&r.method)).collect();
        let w = labels.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max("Method".len());
        let mut out = String::new();
        writeln!(out, "{:<w$}  {:<14}  Accuracy", "Method", "Classifier").unwrap();
        for (r, (label, clf)) in rows.iter().zip(&labels) {
            writeln!(out, "{label:<w$}  {clf:<14}  {:.4}", r.mean_accuracy).unwrap();
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> Result<String> {
        let rows = self.ordered();
        if rows.is_empty() {
            return Err(EvalError::EmptyTable);
        }
        let k = rows.iter().map(|r| r.fold_accuracies.len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string(), "mean_accuracy".to_string()];
        header.extend((1..=k).map(|f| format!("fold_{f}")));
        let csv_err = |e: csv::Error| EvalError::Csv(e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for r in rows {
            let mut rec = vec![r.method.clone(), r.mean_accuracy.to_string()];
            rec.extend((0..k).map(|f| r.fold_accuracies.get(f).map(f64::to_string).unwrap_or_default()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let csv_err = |e: csv::Error| EvalError::Csv(e.to_string());
        let header = r.headers().map_err(csv_err)?.clone();
        if header.get(0) != Some("method") || header.get(1) != Some("mean_accuracy") {
            return Err(EvalError::Csv("expected header method,mean_accuracy,fold_1..".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| EvalError::Csv(format!("bad number {s:?}")));
        let mut table = ResultsTable::default();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let method = rec.get(0).unwrap_or_default().to_string();
            let mean_accuracy = num(rec.get(1).unwrap_or_default())?;
            let fold_accuracies = rec.iter().skip(2).filter(|s| !s.is_empty()).map(num).collect::<Result<_>>()?;
            table.push(ResultRow { method, mean_accuracy, fold_accuracies });
        }
        Ok(table)
    }
}
