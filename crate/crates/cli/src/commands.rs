use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use harasskit_core::agreement::{
    constant_panel_subset, fleiss_kappa, read_label_csv, write_label_csv, AgreementError, KappaResult, LabelRecord,
    RatingMatrix,
};
use harasskit_core::corpus::{
    dedupe as dedupe_corpus, infer_gender, ingest as read_corpus, legacy_code_mapping, preprocess as preprocess_doc,
    preprocess_corpus, Category, Corpus, Format, Gender, GenderLexicon, PreprocessConfig,
};
use harasskit_core::crowd::{
    aggregate, batch_policy, class_histogram, simulate_study, update_trust, GoldSet, RaterProfile, RaterState,
    SimulationConfig, DEFAULT_GOLD_RATIO,
};
use harasskit_core::eval::{
    cross_validate, kfold, load_model, pipeline_for, stratified_kfold, Metrics, PipelineOptions, ResultsTable,
    DEFAULT_FOLDS, METHOD_ORDER,
};
use harasskit_core::features::{build_vocab, vectorize, NgramSpec};
use harasskit_core::neural::lstm_train;
use harasskit_core::topics::{default_alpha, fit_lda_with, summarize, LdaConfig, DEFAULT_BETA, DEFAULT_SWEEPS, DEFAULT_TOPICS};
use harasskit_service::{label_records, read_events, ServiceConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{resolve, section};

const DEFAULT_SEED: u64 = 0;

fn need<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| anyhow!("missing required option --{flag} (flag or config)"))
}

fn seed_or_default(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        eprintln!("seed: {DEFAULT_SEED} (default)");
        DEFAULT_SEED
    })
}

fn load_corpus(path: &Path, format: Option<&str>) -> Result<Corpus> {
    let format = match format {
        Some(f) => f.parse()?,
        None => Format::from_path(path),
    };
    read_corpus(path, format).with_context(|| format!("reading corpus {}", path.display()))
}

/// Preprocesses, with default settings, any document that has no tokens yet.
fn with_tokens(corpus: Corpus) -> Corpus {
    let raw = corpus.documents.iter().filter(|d| !d.preprocessed).count();
    if raw == 0 {
        return corpus;
    }
    eprintln!("preprocessing {raw} raw documents with default settings");
    let config = PreprocessConfig::default();
    let documents = corpus.documents.iter().map(|d| if d.preprocessed { d.clone() } else { preprocess_doc(d, &config) }).collect();
    Corpus { documents }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>, path: Option<&Path>) -> Result<()> {
    let mut out = output(path)?;
    for row in rows {
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn load_gold(path: &Path) -> Result<GoldSet> {
    let f = File::open(path).with_context(|| format!("opening gold set {}", path.display()))?;
    Ok(GoldSet::from_csv(f)?)
}

fn load_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    let f = File::open(path).with_context(|| format!("opening labels {}", path.display()))?;
    Ok(read_label_csv(f)?)
}

#[derive(Serialize)]
struct VectorRow<'a> {
    id: &'a str,
    label: Option<Category>,
    features: Vec<(usize, u32)>,
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    id: &'a str,
    category: Category,
}

#[derive(Serialize)]
struct GenderRow<'a> {
    id: &'a str,
    gender: Gender,
    score: f64,
}

macro_rules! flags {
    ($(#[$meta:meta])* $name:ident { $($body:tt)* }) => {
        $(#[$meta])*
        #[derive(Args, Serialize, Deserialize, Default)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name { $($body)* }
    };
}

flags!(IngestArgs {
    /// Corpus file (.jsonl or .csv).
    #[arg(long)]
    input: Option<PathBuf>,
    /// jsonl or csv; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<String>,
    /// Output JSONL; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
});

pub fn ingest(a: IngestArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "ingest")?, "ingest")?;
    let corpus = load_corpus(&need(a.input, "input")?, a.format.as_deref())?;
    let hist = corpus.label_histogram();
    eprintln!("{} documents; labels per class {:?}", corpus.len(), hist);
    let mut out = output(a.output.as_deref())?;
    corpus.write_jsonl(&mut out)?;
    out.flush()?;
    Ok(())
}

flags!(PreprocessArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Drop non-hashtag tokens shorter than this [default: 3].
    #[arg(long)]
    min_token_chars: Option<usize>,
    /// Drop documents that do not look like English.
    #[arg(long)]
    english_only: bool,
    /// Stopword share below which a document counts as non-English [default: 0.1].
    #[arg(long)]
    min_stopword_coverage: Option<f64>,
    /// Drop documents whose tokens are more than this share hashtags.
    #[arg(long)]
    max_hashtag_ratio: Option<f64>,
});

pub fn preprocess(a: PreprocessArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "preprocess")?, "preprocess")?;
    let corpus = load_corpus(&need(a.input, "input")?, a.format.as_deref())?;
    let d = PreprocessConfig::default();
    let config = PreprocessConfig {
        min_token_chars: a.min_token_chars.unwrap_or(d.min_token_chars),
        english_only: a.english_only,
        min_stopword_coverage: a.min_stopword_coverage.unwrap_or(d.min_stopword_coverage),
        max_hashtag_ratio: a.max_hashtag_ratio,
    };
    let done = preprocess_corpus(&corpus, &config);
    eprintln!("kept {} of {} documents", done.len(), corpus.len());
    let mut out = output(a.output.as_deref())?;
    done.write_jsonl(&mut out)?;
    out.flush()?;
    Ok(())
}

flags!(DedupeArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
});

pub fn dedupe(a: DedupeArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "dedupe")?, "dedupe")?;
    let corpus = with_tokens(load_corpus(&need(a.input, "input")?, a.format.as_deref())?);
    let kept = dedupe_corpus(&corpus)?;
    eprintln!("removed {} duplicates, {} remain", corpus.len() - kept.len(), kept.len());
    let mut out = output(a.output.as_deref())?;
    kept.write_jsonl(&mut out)?;
    out.flush()?;
    Ok(())
}

flags!(FeaturizeArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Feature spec: a method name (bigrams, char3, all, ...) or parts like w1+c3 [default: char3].
    #[arg(long)]
    spec: Option<String>,
    /// Minimum document frequency [default: 2].
    #[arg(long)]
    min_df: Option<usize>,
    /// Where to write the vocabulary JSON.
    #[arg(long)]
    vocab_out: Option<PathBuf>,
    /// Sparse vectors as JSONL {id, label, features: [[id, count], ...]}; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
});

pub fn featurize(a: FeaturizeArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "featurize")?, "featurize")?;
    let corpus = with_tokens(load_corpus(&need(a.input, "input")?, None)?);
    let vocab_out = need(a.vocab_out, "vocab-out")?;
    let spec = NgramSpec::named(a.spec.as_deref().unwrap_or("char3"))?;
    let vocab = build_vocab(corpus.documents.iter(), &spec, a.min_df.unwrap_or(2))?;
    std::fs::write(&vocab_out, vocab.to_json()).with_context(|| format!("writing {}", vocab_out.display()))?;
    eprintln!("{} features", vocab.len());
    let rows = corpus
        .documents
        .iter()
        .map(|d| {
            let v = vectorize(d, &vocab)?;
            Ok(VectorRow { id: &d.id, label: d.label, features: v.iter().collect() })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(rows, a.output.as_deref())
}

fn pipeline_options(options: Option<PipelineOptions>, seed: Option<u64>) -> PipelineOptions {
    let mut o = options.unwrap_or_default();
    if let Some(s) = seed {
        o.sgd.seed = s;
        o.lstm.seed = s;
    }
    o
}

flags!(TrainArgs {
    /// Method name, e.g. char3, char3+mnb, all-chars, word2vec, doc2vec, lstm.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed for the embedding and LSTM trainers (overrides the config's).
    #[arg(long)]
    seed: Option<u64>,
    /// LSTM only: write the per-epoch loss as CSV epoch,loss.
    #[arg(long)]
    loss_curve: Option<PathBuf>,
    /// Hyperparameters; config file only.
    #[arg(skip)]
    options: Option<PipelineOptions>,
});

pub fn train(a: TrainArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "train")?, "train")?;
    let method = need(a.method, "method")?;
    let corpus = with_tokens(load_corpus(&need(a.corpus, "corpus")?, None)?);
    let out = need(a.output, "output")?;
    if a.seed.is_none() && a.options.is_none() {
        eprintln!("seed: {DEFAULT_SEED} (default)");
    }
    let options = pipeline_options(a.options, a.seed);
    let docs: Vec<_> = corpus.documents.iter().collect();
    let labels = docs
        .iter()
        .map(|d| d.label.ok_or_else(|| anyhow!("document {} has no label", d.id)))
        .collect::<Result<Vec<Category>>>()?;
    let pipeline = pipeline_for(&method, &options)?;
    let model: Box<dyn harasskit_core::eval::Model> = if pipeline.name() == "lstm" {
        let tokens: Vec<Vec<String>> = docs.iter().map(|d| d.tokens.clone()).collect();
        let (model, report) = lstm_train(&tokens, &labels, &options.lstm)?;
        eprintln!("lstm: {} epochs, final loss {:.6}", report.epochs_run, report.epoch_loss.last().copied().unwrap_or(f64::NAN));
        if let Some(path) = &a.loss_curve {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(["epoch", "loss"])?;
            for (i, l) in report.epoch_loss.iter().enumerate() {
                w.write_record([(i + 1).to_string(), l.to_string()])?;
            }
            w.flush()?;
        }
        Box::new(model)
    } else {
        if a.loss_curve.is_some() {
            bail!("--loss-curve only applies to lstm");
        }
        pipeline.fit(&docs)?
    };
    let pred = docs.iter().map(|d| model.predict(d)).collect::<std::result::Result<Vec<_>, _>>()?;
    eprintln!("training accuracy {:.4}", Metrics::evaluate(&labels, &pred)?.accuracy);
    let json = model.to_json().ok_or_else(|| anyhow!("method {method} cannot be saved"))?;
    std::fs::write(&out, json).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

flags!(PredictArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// JSONL {id, category}; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
});

pub fn predict(a: PredictArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "predict")?, "predict")?;
    let path = need(a.model, "model")?;
    let model = load_model(&std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?)?;
    let corpus = with_tokens(load_corpus(&need(a.corpus, "corpus")?, None)?);
    let mut rows = Vec::with_capacity(corpus.len());
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for d in &corpus.documents {
        let c = model.predict(d)?;
        if let Some(l) = d.label {
            truth.push(l);
            pred.push(c);
        }
        rows.push(PredictionRow { id: &d.id, category: c });
    }
    if !truth.is_empty() {
        eprintln!("accuracy on {} labeled documents {:.4}", truth.len(), Metrics::evaluate(&truth, &pred)?.accuracy);
    }
    write_jsonl(rows, a.output.as_deref())
}

flags!(EvaluateArgs {
    /// Method to evaluate; repeat for several, or `table` for every row.
    #[arg(long = "method")]
    method: Vec<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Number of folds [default: 10].
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Plain k-fold instead of stratified folds.
    #[arg(long)]
    unstratified: bool,
    /// Results CSV; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Hyperparameters; config file only.
    #[arg(skip)]
    options: Option<PipelineOptions>,
});

pub fn evaluate(a: EvaluateArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "evaluate")?, "evaluate")?;
    if a.method.is_empty() {
        bail!("missing required option --method (flag or config)");
    }
    let methods: Vec<String> = if a.method.iter().any(|m| m == "table") {
        METHOD_ORDER.iter().map(|m| m.to_string()).collect()
    } else {
        a.method.clone()
    };
    let corpus = with_tokens(load_corpus(&need(a.corpus, "corpus")?, None)?);
    let seed = seed_or_default(a.seed);
    let k = a.k.unwrap_or(DEFAULT_FOLDS);
    let plan = if a.unstratified {
        kfold(corpus.len(), k, seed)?
    } else {
        let labels = corpus
            .documents
            .iter()
            .map(|d| d.label.ok_or_else(|| anyhow!("document {} has no label", d.id)))
            .collect::<Result<Vec<_>>>()?;
        stratified_kfold(&labels, k, seed)?
    };
    let options = pipeline_options(a.options, a.seed);
    let mut table = ResultsTable::default();
    for method in &methods {
        let pipeline = pipeline_for(method, &options)?;
        let cv = cross_validate(pipeline.as_ref(), &corpus, &plan)?;
        eprintln!("{:<10} mean accuracy {:.4}", cv.method, cv.mean_accuracy());
        table.push(cv.row());
    }
    eprint!("{}", table.to_text()?);
    let mut out = output(a.output.as_deref())?;
    out.write_all(table.to_csv()?.as_bytes())?;
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct KappaJson {
    kappa: Option<f64>,
    p_bar: f64,
    p_e: f64,
}

fn kappa_json(matrix: &RatingMatrix) -> Result<KappaJson> {
    match fleiss_kappa(matrix) {
        Ok(KappaResult { kappa, p_bar, p_e, .. }) => Ok(KappaJson { kappa: Some(kappa), p_bar, p_e }),
        Err(AgreementError::Undefined(r)) => {
            eprintln!("kappa is undefined for this matrix (expected agreement is 1)");
            Ok(KappaJson { kappa: None, p_bar: r.p_bar, p_e: r.p_e })
        }
        Err(e) => Err(e.into()),
    }
}

flags!(KappaArgs {
    /// Label CSV item_id,rater_id,category (header optional).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Number of categories [default: 5].
    #[arg(long)]
    categories: Option<usize>,
    /// Keep only the items rated by the most common number of raters.
    #[arg(long)]
    constant_panel: bool,
});

pub fn kappa(a: KappaArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "kappa")?, "kappa")?;
    let mut records = load_labels(&need(a.labels, "labels")?)?;
    if a.constant_panel {
        let before = records.len();
        records = constant_panel_subset(&records);
        eprintln!("constant panel keeps {} of {before} ratings", records.len());
    }
    let matrix = RatingMatrix::from_labels(&records, a.categories.unwrap_or(Category::COUNT))?;
    eprintln!("{} items, {} raters each", matrix.num_items(), matrix.raters());
    println!("{}", serde_json::to_string(&kappa_json(&matrix)?)?);
    Ok(())
}

fn parse_mapping(s: &str) -> Result<BTreeMap<u32, u32>> {
    s.split(',')
        .map(|pair| {
            let (a, b) = pair.split_once(':').ok_or_else(|| anyhow!("mapping entry {pair:?} is not old:new"))?;
            Ok((a.trim().parse()?, b.trim().parse()?))
        })
        .collect()
}

flags!(MergeKappaArgs {
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Categories in the label file [default: 9].
    #[arg(long)]
    categories: Option<usize>,
    /// Merge as old:new pairs, e.g. 1:1,2:1,3:2. Defaults to the legacy 9-to-5 remap.
    #[arg(long)]
    map: Option<String>,
});

pub fn merge_kappa(a: MergeKappaArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "merge-kappa")?, "merge-kappa")?;
    let records = load_labels(&need(a.labels, "labels")?)?;
    // the legacy remap targets the full final scheme, including the unused "not sexist" column
    let (mapping, new_k) = match &a.map {
        Some(m) => {
            let mapping = parse_mapping(m)?;
            let k = mapping.values().copied().max().unwrap_or(0) as usize;
            (mapping, k)
        }
        None => (legacy_code_mapping().into_iter().collect(), Category::COUNT),
    };
    let matrix = RatingMatrix::from_labels(&records, a.categories.unwrap_or(9))?;
    let merged = matrix.merge_categories(&mapping, new_k)?;
    let out = json!({
        "before": kappa_json(&matrix)?,
        "after": kappa_json(&merged)?,
        "categories_before": matrix.num_categories(),
        "categories_after": new_k,
    });
    println!("{out}");
    Ok(())
}

flags!(ScoreArgs {
    /// Correct answers among the rater's last 8 gold questions.
    #[arg(long)]
    gold_correct: Option<u32>,
});

pub fn crowd_score(a: ScoreArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "crowd-score")?, "crowd-score")?;
    println!("{}", batch_policy(need(a.gold_correct, "gold-correct")?)?);
    Ok(())
}

flags!(AggregateArgs {
    /// Label CSV item_id,rater_id,category; gold answers are scored in file order.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Gold CSV item_id,category.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// JSONL {item_id, category, confidence, votes}; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
});

pub fn crowd_aggregate(a: AggregateArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "crowd-aggregate")?, "crowd-aggregate")?;
    let records = load_labels(&need(a.labels, "labels")?)?;
    let gold = load_gold(&need(a.gold, "gold")?)?;
    let category = |r: &LabelRecord| {
        u8::try_from(r.category).ok().and_then(Category::from_code).ok_or_else(|| anyhow!("category {} is not in 1..=5", r.category))
    };
    let mut gold_answers: BTreeMap<&str, Vec<(String, Category)>> = BTreeMap::new();
    let mut per_item: BTreeMap<&str, Vec<(String, Category)>> = BTreeMap::new();
    for r in &records {
        let c = category(r)?;
        gold_answers.entry(&r.rater_id).or_default();
        if gold.contains(&r.item_id) {
            gold_answers.get_mut(r.rater_id.as_str()).expect("inserted").push((r.item_id.clone(), c));
        } else {
            per_item.entry(&r.item_id).or_default().push((r.rater_id.clone(), c));
        }
    }
    let mut weights = HashMap::new();
    for (rater, answers) in &gold_answers {
        let state = update_trust(&RaterState::new(*rater), answers, &gold)?;
        eprintln!("{}", serde_json::to_string(&state.summary())?);
        if !state.excluded {
            weights.insert(rater.to_string(), state.weight());
        }
    }
    let mut labels = Vec::new();
    for (item, votes) in per_item {
        match aggregate(item, &votes, &weights) {
            Ok(l) => labels.push(l),
            Err(e) => eprintln!("skipping {item}: {e}"),
        }
    }
    eprintln!("{}", serde_json::to_string(&class_histogram(&labels))?);
    write_jsonl(labels, a.output.as_deref())
}

fn parse_profile(s: &str) -> Result<RaterProfile> {
    let (acc, count) = s.split_once('x').unwrap_or((s, "1"));
    Ok(RaterProfile {
        accuracy: acc.trim().parse().with_context(|| format!("rater accuracy {acc:?}"))?,
        count: count.trim().parse().with_context(|| format!("rater count {count:?}"))?,
    })
}

flags!(SimulateArgs {
    /// Labeled corpus; gold items are labeled from the gold set.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Rater profile ACCURACY or ACCURACYxCOUNT, e.g. 0.9x5; repeatable.
    #[arg(long = "rater")]
    rater: Vec<String>,
    /// Raters per regular item [default: 3].
    #[arg(long)]
    raters_per_item: Option<usize>,
    /// Share of gold questions per batch [default: 0.08].
    #[arg(long)]
    gold_ratio: Option<f64>,
    /// Serve every batch at this size instead of the trust policy's.
    #[arg(long)]
    fixed_batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Aggregated labels as JSONL; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the class histogram as JSON here.
    #[arg(long)]
    histogram: Option<PathBuf>,
});

pub fn crowd_simulate(a: SimulateArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "crowd-simulate")?, "crowd-simulate")?;
    let corpus = load_corpus(&need(a.corpus, "corpus")?, None)?;
    let gold = load_gold(&need(a.gold, "gold")?)?;
    if a.rater.is_empty() {
        bail!("at least one --rater profile is required");
    }
    let profiles = a.rater.iter().map(|s| parse_profile(s)).collect::<Result<Vec<_>>>()?;
    let config = SimulationConfig {
        raters_per_item: a.raters_per_item.unwrap_or(3),
        gold_ratio: a.gold_ratio.unwrap_or(DEFAULT_GOLD_RATIO),
        seed: seed_or_default(a.seed),
        fixed_batch_size: a.fixed_batch_size,
    };
    let outcome = simulate_study(&corpus, &gold, &profiles, &config)?;
    eprintln!(
        "{} regular and {} gold assignments; {} of {} raters excluded",
        outcome.regular_assignments,
        outcome.gold_assignments,
        outcome.raters.iter().filter(|r| r.excluded).count(),
        outcome.raters.len()
    );
    if let Some(path) = &a.histogram {
        std::fs::write(path, serde_json::to_string(&outcome.histogram)?)?;
    }
    write_jsonl(&outcome.labels, a.output.as_deref())
}

flags!(LdaArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Number of topics [default: 10].
    #[arg(long)]
    topics: Option<usize>,
    /// Document-topic prior [default: 50 / topics].
    #[arg(long)]
    alpha: Option<f64>,
    /// Topic-word prior [default: 0.01].
    #[arg(long)]
    beta: Option<f64>,
    /// Gibbs sweeps [default: 500].
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Top terms per topic [default: 10].
    #[arg(long)]
    terms: Option<usize>,
    /// Suggested hashtags per topic [default: 5].
    #[arg(long)]
    hashtags: Option<usize>,
    /// Per-sweep log-likelihood as CSV sweep,log_likelihood.
    #[arg(long)]
    log_likelihood: Option<PathBuf>,
    /// Topic JSONL; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
});

pub fn lda(a: LdaArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "lda")?, "lda")?;
    let corpus = with_tokens(load_corpus(&need(a.corpus, "corpus")?, None)?);
    let topics = a.topics.unwrap_or(DEFAULT_TOPICS);
    let config = LdaConfig {
        topics,
        alpha: a.alpha.unwrap_or_else(|| default_alpha(topics)),
        beta: a.beta.unwrap_or(DEFAULT_BETA),
        sweeps: a.sweeps.unwrap_or(DEFAULT_SWEEPS),
        seed: seed_or_default(a.seed),
    };
    let docs: Vec<Vec<String>> = corpus.documents.iter().map(|d| d.tokens.clone()).collect();
    let model = fit_lda_with(&docs, &config, |_, _| {})?;
    if let Some(path) = &a.log_likelihood {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sweep", "log_likelihood"])?;
        for (i, ll) in model.log_likelihood.iter().enumerate() {
            w.write_record([(i + 1).to_string(), ll.to_string()])?;
        }
        w.flush()?;
    }
    eprintln!("per-token log-likelihood {:.6}", model.per_token_log_likelihood());
    write_jsonl(summarize(&model, a.terms.unwrap_or(10), a.hashtags.unwrap_or(5))?, a.output.as_deref())
}

flags!(GenderArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Header-less CSV token,weight.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Gender that positive weights point to [default: female].
    #[arg(long)]
    positive_pole: Option<String>,
    /// JSONL {id, gender, score}; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
});

pub fn gender(a: GenderArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "gender")?, "gender")?;
    let corpus = with_tokens(load_corpus(&need(a.corpus, "corpus")?, None)?);
    let pole: Gender = a.positive_pole.as_deref().unwrap_or("female").parse().map_err(|e: String| anyhow!(e))?;
    let lexicon = GenderLexicon::load(&need(a.lexicon, "lexicon")?, pole)?;
    let rows: Vec<_> = corpus
        .documents
        .iter()
        .map(|d| {
            let (g, score) = infer_gender(d, &lexicon);
            GenderRow { id: &d.id, gender: g, score }
        })
        .collect();
    write_jsonl(rows, a.output.as_deref())
}

#[derive(Args)]
pub struct ServeArgs {
    /// Port to listen on; overrides the study file.
    #[arg(long)]
    port: Option<u16>,
    /// Address to bind; overrides the study file.
    #[arg(long)]
    host: Option<IpAddr>,
}

pub fn serve(a: ServeArgs, cfg: Option<&Path>) -> Result<()> {
    let path = cfg.ok_or_else(|| anyhow!("serve needs --config <study.json>"))?;
    let mut config = ServiceConfig::from_file(path)?;
    if let Some(p) = a.port {
        config.port = p;
    }
    if let Some(h) = a.host {
        config.host = h;
    }
    let study = config.open_study()?;
    eprintln!("{} labels replayed from {}", study.state().labels.len(), config.event_log.display());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(harasskit_service::serve(study, config.addr()))
}

flags!(ExportLabelsArgs {
    /// Service event log (JSONL).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Also export answers to gold questions.
    #[arg(long)]
    include_gold: bool,
    /// Label CSV; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
});

pub fn export_labels(a: ExportLabelsArgs, cfg: Option<&Path>) -> Result<()> {
    let a = resolve(a, section(cfg, "export-labels")?, "export-labels")?;
    let log = need(a.log, "log")?;
    if !log.exists() {
        bail!("event log {} does not exist", log.display());
    }
    let records = label_records(&read_events(&log)?, a.include_gold);
    let mut out = output(a.output.as_deref())?;
    write_label_csv(&records, &mut out)?;
    out.flush()?;
    Ok(())
}
