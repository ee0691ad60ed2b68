use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use harasskit_core::agreement::{constant_panel_subset, fleiss_kappa, LabelRecord, RatingMatrix};
use harasskit_core::corpus::{instructions, Category, Corpus, Instruction};
use harasskit_core::crowd::{
    aggregate, class_histogram, gold_count, AggregatedLabel, GoldSet, HistogramRow, RaterState, RaterSummary,
    DEFAULT_GOLD_RATIO, PROBATION_BATCH,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("unknown rater {0:?}")]
    UnknownRater(String),
    #[error("rater {0:?} is excluded")]
    Excluded(String),
    #[error("rater name must not be empty")]
    EmptyName,
    #[error("category code {0} is not in 1..=5")]
    BadCategory(u32),
    #[error("rater {rater:?} already labeled item {item:?}")]
    Duplicate { rater: String, item: String },
    #[error("item {item:?} is not in an outstanding batch of rater {rater:?}")]
    NotInBatch { rater: String, item: String },
    #[error("submission has no labels")]
    EmptySubmission,
    #[error("invalid study config: {0}")]
    Config(String),
    #[error("event log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("event log is inconsistent at event {index}: {message}")]
    Replay { index: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StudyError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub gold_ratio: f64,
    /// Batch size while fewer than eight gold answers are on record.
    pub probation_batch: usize,
    /// Stop serving an item once this many raters hold it.
    pub raters_per_item: Option<usize>,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            gold_ratio: DEFAULT_GOLD_RATIO,
            probation_batch: PROBATION_BATCH,
            raters_per_item: None,
            seed: 0,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gold_ratio > 0.0 && self.gold_ratio < 1.0) {
            return Err(StudyError::Config(format!("gold_ratio must be in (0,1), got {}", self.gold_ratio)));
        }
        if self.probation_batch == 0 {
            return Err(StudyError::Config("probation_batch must be at least 1".into()));
        }
        if self.raters_per_item == Some(0) {
            return Err(StudyError::Config("raters_per_item must be at least 1".into()));
        }
        Ok(())
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RaterRegistered {
        timestamp: DateTime<Utc>,
        rater_id: String,
        name: String,
    },
    BatchIssued {
        timestamp: DateTime<Utc>,
        batch_id: String,
        rater_id: String,
        /// Items in presentation order.
        items: Vec<String>,
        gold: Vec<String>,
    },
    Label(LabelEvent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub timestamp: DateTime<Utc>,
    pub rater_id: String,
    pub item_id: String,
    pub category: Category,
    pub was_gold: bool,
    pub correct: Option<bool>,
    pub batch_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuedBatch {
    pub batch_id: String,
    pub items: Vec<String>,
    pub gold: BTreeSet<String>,
    pub answered: BTreeMap<String, Category>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterEntry {
    pub name: String,
    pub state: RaterState,
    pub labeled: BTreeSet<String>,
    pub batches_issued: usize,
    pub outstanding: Option<IssuedBatch>,
}

/// Everything derived from the event log.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct StudyState {
    pub raters: BTreeMap<String, RaterEntry>,
    pub labels: Vec<LabelEvent>,
    /// Completed plus outstanding assignments of each regular item.
    pub holders: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchItem {
    pub item_id: String,
    pub text: String,
}

/// What a client sees of a batch: no gold flags.
#[derive(Debug, Clone, Serialize)]
pub struct BatchView {
    pub batch_id: String,
    pub rater_id: String,
    pub items: Vec<BatchItem>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GoldResult {
    pub item_id: String,
    pub correct: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubmitOutcome {
    #[serde(flatten)]
    pub summary: RaterSummary,
    pub batch_complete: bool,
    /// Filled once the whole batch is in.
    pub gold_results: Vec<GoldResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Stats {
    pub histogram: Vec<HistogramRow>,
    pub raters: Vec<RaterSummary>,
    pub kappa: Option<f64>,
    pub kappa_items: usize,
    pub kappa_raters: Option<u32>,
    pub labels: usize,
}

pub enum BatchOutcome {
    Batch(BatchView),
    Exhausted,
}

struct EventLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl EventLog {
    fn append(&mut self, event: &Event) -> Result<()> {
        let line = serde_json::to_string(event).expect("events serialize");
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        Ok(())
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line).map_err(|e| StudyError::Log { line: i + 1, message: e.to_string() })?;
        events.push(ev);
    }
    Ok(events)
}

/// The label events of a log as `item_id,rater_id,category` records.
pub fn label_records(events: &[Event], include_gold: bool) -> Vec<LabelRecord> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::Label(l) if include_gold || !l.was_gold => {
                Some(LabelRecord::new(l.item_id.clone(), l.rater_id.clone(), l.category.code() as u32))
            }
            _ => None,
        })
        .collect()
}

fn batch_rng(seed: u64, batch_id: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(batch_id.as_bytes());
    ChaCha8Rng::seed_from_u64(seed ^ u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")))
}

pub struct Study {
    config: StudyConfig,
    corpus: Corpus,
    gold: GoldSet,
    text: HashMap<String, usize>,
    regular: Vec<String>,
    state: StudyState,
    log: Option<EventLog>,
    instructions_json: String,
}

impl Study {
    /// A study with no persistence.
    pub fn in_memory(corpus: Corpus, gold: GoldSet, config: StudyConfig) -> Result<Self> {
        config.validate()?;
        let text: HashMap<String, usize> = corpus.documents.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        if let Some(missing) = gold.ids().find(|id| !text.contains_key(*id)) {
            return Err(StudyError::Config(format!("gold item {missing:?} is not in the corpus")));
        }
        if gold.is_empty() {
            return Err(StudyError::Config("gold set is empty".into()));
        }
        let regular = corpus.documents.iter().filter(|d| !gold.contains(&d.id)).map(|d| d.id.clone()).collect();
        let instructions_json = serde_json::to_string(instructions()).expect("instructions serialize");
        Ok(Study { config, corpus, gold, text, regular, state: StudyState::default(), log: None, instructions_json })
    }

    /// Replays `events` into a fresh study.
    pub fn replay(corpus: Corpus, gold: GoldSet, config: StudyConfig, events: &[Event]) -> Result<Self> {
        let mut s = Study::in_memory(corpus, gold, config)?;
        for (index, ev) in events.iter().enumerate() {
            s.apply(ev).map_err(|e| StudyError::Replay { index, message: e.to_string() })?;
        }
        Ok(s)
    }

    /// Rebuilds state from the log at `path` (if any) and appends to it from now on.
    pub fn open(corpus: Corpus, gold: GoldSet, config: StudyConfig, path: &Path) -> Result<Self> {
        let events = read_events(path)?;
        let mut s = Study::replay(corpus, gold, config, &events)?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        s.log = Some(EventLog { path: path.to_path_buf(), out: BufWriter::new(file) });
        Ok(s)
    }

    pub fn state(&self) -> &StudyState {
        &self.state
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(|l| l.path.as_path())
    }

    pub fn instructions(&self) -> &[Instruction] {
        instructions()
    }

    /// Pre-rendered instruction payload, identical on every call.
    pub fn instructions_json(&self) -> &str {
        &self.instructions_json
    }

    fn record(&mut self, event: Event) -> Result<()> {
        if let Some(log) = &mut self.log {
            log.append(&event)?;
        }
        self.apply(&event)
    }

    fn rater(&self, id: &str) -> Result<&RaterEntry> {
        self.state.raters.get(id).ok_or_else(|| StudyError::UnknownRater(id.to_string()))
    }

    /// Folds one event into the state.
    fn apply(&mut self, event: &Event) -> Result<()> {
        match event {
            Event::RaterRegistered { rater_id, name, .. } => {
                if self.state.raters.contains_key(rater_id) {
                    return Err(StudyError::Config(format!("rater {rater_id:?} registered twice")));
                }
                let mut state = RaterState::new(rater_id.clone());
                state.batch_size = self.config.probation_batch;
                let entry = RaterEntry {
                    name: name.clone(),
                    state,
                    labeled: BTreeSet::new(),
                    batches_issued: 0,
                    outstanding: None,
                };
                self.state.raters.insert(rater_id.clone(), entry);
            }
            Event::BatchIssued { batch_id, rater_id, items, gold, .. } => {
                let entry = self.state.raters.get_mut(rater_id).ok_or_else(|| StudyError::UnknownRater(rater_id.clone()))?;
                entry.batches_issued += 1;
                entry.outstanding = Some(IssuedBatch {
                    batch_id: batch_id.clone(),
                    items: items.clone(),
                    gold: gold.iter().cloned().collect(),
                    answered: BTreeMap::new(),
                });
                for item in items.iter().filter(|i| !gold.contains(i)) {
                    *self.state.holders.entry(item.clone()).or_insert(0) += 1;
                }
            }
            Event::Label(l) => {
                let entry =
                    self.state.raters.get_mut(&l.rater_id).ok_or_else(|| StudyError::UnknownRater(l.rater_id.clone()))?;
                let batch = entry.outstanding.as_mut().filter(|b| b.batch_id == l.batch_id).ok_or_else(|| {
                    StudyError::NotInBatch { rater: l.rater_id.clone(), item: l.item_id.clone() }
                })?;
                if !entry.labeled.insert(l.item_id.clone()) {
                    return Err(StudyError::Duplicate { rater: l.rater_id.clone(), item: l.item_id.clone() });
                }
                batch.answered.insert(l.item_id.clone(), l.category);
                if batch.answered.len() == batch.items.len() {
                    let done = entry.outstanding.take().expect("batch present");
                    // gold feedback only once the full batch is in, in presentation order
                    for item in done.items.iter().filter(|i| done.gold.contains(*i)) {
                        let truth = self.gold.get(item).expect("issued gold is in the gold set");
                        entry.state.record_gold(done.answered[item] == truth);
                    }
                    if entry.state.on_probation() {
                        entry.state.batch_size = self.config.probation_batch;
                    }
                }
                self.state.labels.push(l.clone());
            }
        }
        Ok(())
    }

    pub fn register(&mut self, name: &str) -> Result<String> {
        let name = name.trim();
        if name.is_empty() {
            return Err(StudyError::EmptyName);
        }
        let rater_id = format!("r{}", self.state.raters.len() + 1);
        self.record(Event::RaterRegistered { timestamp: Utc::now(), rater_id: rater_id.clone(), name: name.to_string() })?;
        Ok(rater_id)
    }

    pub fn summary(&self, rater_id: &str) -> Result<RaterSummary> {
        Ok(self.rater(rater_id)?.state.summary())
    }

    fn view(&self, rater_id: &str, batch: &IssuedBatch) -> BatchView {
        let items = batch
            .items
            .iter()
            .map(|id| BatchItem { item_id: id.clone(), text: self.corpus.documents[self.text[id]].raw_text.clone() })
            .collect();
        BatchView { batch_id: batch.batch_id.clone(), rater_id: rater_id.to_string(), items }
    }

    /// The rater's outstanding batch, or a new one sized by their trust.
    pub fn next_batch(&mut self, rater_id: &str) -> Result<BatchOutcome> {
        let entry = self.rater(rater_id)?;
        if entry.state.excluded {
            return Err(StudyError::Excluded(rater_id.to_string()));
        }
        if let Some(b) = &entry.outstanding {
            return Ok(BatchOutcome::Batch(self.view(rater_id, b)));
        }
        let size = entry.state.batch_size;
        let n_gold = gold_count(size, self.config.gold_ratio);
        let cap = self.config.raters_per_item.unwrap_or(usize::MAX);
        let mut candidates: Vec<(usize, usize, &String)> = self
            .regular
            .iter()
            .enumerate()
            .filter(|(_, id)| !entry.labeled.contains(*id))
            .map(|(pos, id)| (self.state.holders.get(id).copied().unwrap_or(0), pos, id))
            .filter(|(held, _, _)| *held < cap)
            .collect();
        candidates.sort();
        let regular: Vec<String> = candidates.into_iter().take(size - n_gold).map(|(_, _, id)| id.clone()).collect();
        let fresh_gold: Vec<String> = self.gold.ids().filter(|g| !entry.labeled.contains(*g)).map(str::to_string).collect();
        if regular.is_empty() || fresh_gold.is_empty() {
            return Ok(BatchOutcome::Exhausted);
        }
        let batch_id = format!("{rater_id}-b{}", entry.batches_issued + 1);
        let mut rng = batch_rng(self.config.seed, &batch_id);
        let mut gold: Vec<String> = fresh_gold;
        gold.shuffle(&mut rng);
        gold.truncate(n_gold);
        let mut items: Vec<String> = regular.into_iter().chain(gold.iter().cloned()).collect();
        items.shuffle(&mut rng);
        self.record(Event::BatchIssued {
            timestamp: Utc::now(),
            batch_id,
            rater_id: rater_id.to_string(),
            items,
            gold,
        })?;
        let b = self.rater(rater_id)?.outstanding.as_ref().expect("just issued");
        Ok(BatchOutcome::Batch(self.view(rater_id, b)))
    }

    /// Records a submission atomically: either every label is accepted or none.
    pub fn submit(&mut self, rater_id: &str, labels: &[(String, u32)]) -> Result<SubmitOutcome> {
        let entry = self.rater(rater_id)?;
        if labels.is_empty() {
            return Err(StudyError::EmptySubmission);
        }
        let mut parsed = Vec::with_capacity(labels.len());
        let mut seen = BTreeSet::new();
        for (item, code) in labels {
            let cat = u8::try_from(*code).ok().and_then(Category::from_code).ok_or(StudyError::BadCategory(*code))?;
            if entry.labeled.contains(item) || !seen.insert(item.as_str()) {
                return Err(StudyError::Duplicate { rater: rater_id.to_string(), item: item.clone() });
            }
            parsed.push((item.clone(), cat));
        }
        let batch = entry.outstanding.as_ref();
        for (item, _) in &parsed {
            if !batch.is_some_and(|b| b.items.contains(item)) {
                return Err(StudyError::NotInBatch { rater: rater_id.to_string(), item: item.clone() });
            }
        }
        let batch_id = batch.expect("checked above").batch_id.clone();
        let gold_items: Vec<String> = batch.expect("checked above").gold.iter().cloned().collect();

        let now = Utc::now();
        for (item, cat) in parsed {
            let truth = self.gold.get(&item).filter(|_| gold_items.contains(&item));
            self.record(Event::Label(LabelEvent {
                timestamp: now,
                rater_id: rater_id.to_string(),
                item_id: item,
                category: cat,
                was_gold: truth.is_some(),
                correct: truth.map(|t| t == cat),
                batch_id: batch_id.clone(),
            }))?;
        }
        let entry = self.rater(rater_id)?;
        let batch_complete = entry.outstanding.is_none();
        let gold_results = if batch_complete {
            self.state
                .labels
                .iter()
                .filter(|l| l.batch_id == batch_id && l.was_gold)
                .map(|l| GoldResult { item_id: l.item_id.clone(), correct: l.correct == Some(true) })
                .collect()
        } else {
            Vec::new()
        };
        Ok(SubmitOutcome { summary: entry.state.summary(), batch_complete, gold_results })
    }

    /// Trust-weighted labels of regular items, from non-excluded raters.
    pub fn aggregated(&self) -> Vec<AggregatedLabel> {
        let weights: HashMap<String, f64> = self
            .state
            .raters
            .iter()
            .filter(|(_, r)| !r.state.excluded)
            .map(|(id, r)| (id.clone(), r.state.weight()))
            .collect();
        let mut per_item: BTreeMap<&str, Vec<(String, Category)>> = BTreeMap::new();
        for l in self.state.labels.iter().filter(|l| !l.was_gold) {
            per_item.entry(&l.item_id).or_default().push((l.rater_id.clone(), l.category));
        }
        per_item.into_iter().filter_map(|(item, votes)| aggregate(item, &votes, &weights).ok()).collect()
    }

    pub fn label_records(&self) -> Vec<LabelRecord> {
        self.state
            .labels
            .iter()
            .filter(|l| !l.was_gold)
            .map(|l| LabelRecord::new(l.item_id.clone(), l.rater_id.clone(), l.category.code() as u32))
            .collect()
    }

    pub fn stats(&self) -> Stats {
        let histogram = class_histogram(&self.aggregated());
        let raters = self.state.raters.values().map(|r| r.state.summary()).collect();
        let subset = constant_panel_subset(&self.label_records());
        let matrix = RatingMatrix::from_labels(&subset, Category::COUNT).ok();
        // undefined agreement (single panel category, fewer than two raters) reports null
        let kappa = matrix.as_ref().and_then(|m| fleiss_kappa(m).ok()).map(|k| k.kappa);
        Stats {
            histogram,
            raters,
            kappa,
            kappa_items: matrix.as_ref().map_or(0, |m| m.num_items()),
            kappa_raters: matrix.as_ref().map(|m| m.raters()),
            labels: self.state.labels.len(),
        }
    }
}
