//! Gold-question trust scoring, the batch-size policy and trust-weighted
//! label aggregation for crowdsourced annotation.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::io::Read;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{argmax_category, Category, Corpus};

/// Gold answers considered when sizing a rater's next batch.
pub const GOLD_WINDOW: usize = 8;
/// Batch size for raters whose gold window is not yet full.
pub const PROBATION_BATCH: usize = 10;
pub const DEFAULT_GOLD_RATIO: f64 = 0.08;
/// Aggregation weight of a rater with no gold history.
pub const PROBATION_WEIGHT: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum CrowdError {
    #[error("gold-correct count {0} exceeds {GOLD_WINDOW}")]
    GoldCountOutOfRange(u32),
    #[error("item {0:?} is not a gold question")]
    NotGold(String),
    #[error("item {0:?}: no label from a trusted rater")]
    NoTrustedLabels(String),
    #[error("gold ratio must lie in (0, 1], got {0}")]
    InvalidGoldRatio(f64),
    #[error("gold item {0:?} is not in the corpus")]
    GoldNotInCorpus(String),
    #[error("document {0:?} has no ground-truth label")]
    Unlabeled(String),
    #[error("rater accuracy must lie in [0, 1], got {0}")]
    InvalidAccuracy(f64),
    #[error("raters per item must be at least 1")]
    InvalidPanel,
    #[error("gold set is empty")]
    EmptyGold,
    #[error("gold csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, CrowdError>;

/// Batch size earned by `gold_correct` right answers out of the last 8:
/// 8 → 20, 7 → 15, 6 → 10, anything lower → 0 (excluded).
pub fn batch_policy(gold_correct_of_8: u32) -> Result<usize> {
    match gold_correct_of_8 {
        8 => Ok(20),
        7 => Ok(15),
        6 => Ok(10),
        0..=5 => Ok(0),
        n => Err(CrowdError::GoldCountOutOfRange(n)),
    }
}

/// Gold questions mixed into a batch: `round(size * ratio)`, at least one.
pub fn gold_count(batch_size: usize, gold_ratio: f64) -> usize {
    if batch_size == 0 {
        return 0;
    }
    ((batch_size as f64 * gold_ratio).round() as usize).clamp(1, batch_size)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSet {
    entries: BTreeMap<String, Category>,
}

impl GoldSet {
    pub fn new(entries: impl IntoIterator<Item = (String, Category)>) -> Self {
        GoldSet { entries: entries.into_iter().collect() }
    }

    /// Parses `item_id,category` CSV; a header row is optional.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut entries = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 1;
            let rec = rec.map_err(|e| CrowdError::Csv { line, message: e.to_string() })?;
            if rec.len() != 2 {
                return Err(CrowdError::Csv { line, message: format!("expected 2 fields, found {}", rec.len()) });
            }
            if line == 1 && &rec[0] == "item_id" {
                continue;
            }
            let cat = rec[1].parse::<u8>().ok().and_then(Category::from_code).ok_or_else(|| {
                CrowdError::Csv { line, message: format!("category {:?} is not in 1..=5", &rec[1]) }
            })?;
            if entries.insert(rec[0].to_string(), cat).is_some() {
                return Err(CrowdError::Csv { line, message: format!("duplicate gold item {:?}", &rec[0]) });
            }
        }
        Ok(GoldSet { entries })
    }

    pub fn get(&self, item: &str) -> Option<Category> {
        self.entries.get(item).copied()
    }

    pub fn contains(&self, item: &str) -> bool {
        self.entries.contains_key(item)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Gold bookkeeping for one rater.
///
/// `trust` is the lifetime share of correct gold answers; the batch size is
/// driven by the most recent [`GOLD_WINDOW`] answers only. Until that window
/// fills, the rater is on probation. Exclusion is permanent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterState {
    pub rater_id: String,
    pub gold_answered: u32,
    pub gold_correct: u32,
    pub recent: VecDeque<bool>,
    pub batch_size: usize,
    pub excluded: bool,
}

impl RaterState {
    pub fn new(rater_id: impl Into<String>) -> Self {
        RaterState {
            rater_id: rater_id.into(),
            gold_answered: 0,
            gold_correct: 0,
            recent: VecDeque::with_capacity(GOLD_WINDOW),
            batch_size: PROBATION_BATCH,
            excluded: false,
        }
    }

    pub fn trust(&self) -> Option<f64> {
        (self.gold_answered > 0).then(|| self.gold_correct as f64 / self.gold_answered as f64)
    }

    /// Weight used when aggregating this rater's votes.
    pub fn weight(&self) -> f64 {
        self.trust().unwrap_or(PROBATION_WEIGHT)
    }

    pub fn on_probation(&self) -> bool {
        self.recent.len() < GOLD_WINDOW
    }

    pub fn record_gold(&mut self, correct: bool) {
        self.gold_answered += 1;
        self.gold_correct += correct as u32;
        if self.recent.len() == GOLD_WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(correct);
        if self.excluded {
            return;
        }
        if self.on_probation() {
            self.batch_size = PROBATION_BATCH;
        } else {
            let window_correct = self.recent.iter().filter(|&&c| c).count() as u32;
            self.batch_size = batch_policy(window_correct).expect("window holds at most 8");
            self.excluded = self.batch_size == 0;
        }
    }

    pub fn summary(&self) -> RaterSummary {
        RaterSummary {
            rater_id: self.rater_id.clone(),
            gold_answered: self.gold_answered,
            gold_correct: self.gold_correct,
            trust: self.trust(),
            batch_size: self.batch_size,
            excluded: self.excluded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterSummary {
    pub rater_id: String,
    pub gold_answered: u32,
    pub gold_correct: u32,
    pub trust: Option<f64>,
    pub batch_size: usize,
    pub excluded: bool,
}

/// Scores a run of gold answers, in order, against the gold set. Nothing is
/// applied if any answered item is not gold.
pub fn update_trust(state: &RaterState, answers: &[(String, Category)], gold: &GoldSet) -> Result<RaterState> {
    let truth = answers
        .iter()
        .map(|(item, _)| gold.get(item).ok_or_else(|| CrowdError::NotGold(item.clone())))
        .collect::<Result<Vec<_>>>()?;
    let mut next = state.clone();
    for ((_, answer), want) in answers.iter().zip(truth) {
        next.record_gold(*answer == want);
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub item_id: String,
    pub category: Category,
    pub confidence: f64,
    /// Trust mass per category, indexed by `code - 1`.
    pub votes: [f64; Category::COUNT],
}

/// Trust-weighted plurality vote. Raters missing from `weights` count as
/// excluded and are ignored.
pub fn aggregate(item_id: &str, labels: &[(String, Category)], weights: &HashMap<String, f64>) -> Result<AggregatedLabel> {
    let mut votes = [0.0; Category::COUNT];
    for (rater, cat) in labels {
        if let Some(&w) = weights.get(rater) {
            votes[cat.index()] += w;
        }
    }
    let total: f64 = votes.iter().sum();
    if !(total > 0.0) {
        return Err(CrowdError::NoTrustedLabels(item_id.to_string()));
    }
    let category = argmax_category(Category::ALL.iter().map(|&c| (c, votes[c.index()]))).expect("five categories");
    Ok(AggregatedLabel {
        item_id: item_id.to_string(),
        category,
        confidence: votes[category.index()] / total,
        votes,
    })
}

/// One row of a class histogram: aggregated item count and mean confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub code: u8,
    pub name: String,
    pub count: usize,
    pub mean_confidence: Option<f64>,
}

pub fn class_histogram(labels: &[AggregatedLabel]) -> Vec<HistogramRow> {
    Category::ALL
        .iter()
        .map(|&c| {
            let confs: Vec<f64> = labels.iter().filter(|l| l.category == c).map(|l| l.confidence).collect();
            HistogramRow {
                code: c.code(),
                name: c.name().to_string(),
                count: confs.len(),
                mean_confidence: (!confs.is_empty()).then(|| confs.iter().sum::<f64>() / confs.len() as f64),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaterProfile {
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub raters_per_item: usize,
    pub gold_ratio: f64,
    pub seed: u64,
    /// Serve every batch at this size instead of the trust policy's.
    pub fixed_batch_size: Option<usize>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { raters_per_item: 3, gold_ratio: DEFAULT_GOLD_RATIO, seed: 0, fixed_batch_size: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    /// Input corpus with regular items relabeled by aggregation (unlabeled
    /// when no trusted vote survived) and gold items carrying their gold label.
    pub corpus: Corpus,
    pub labels: Vec<AggregatedLabel>,
    pub raters: Vec<RaterState>,
    pub histogram: Vec<HistogramRow>,
    pub regular_assignments: usize,
    pub gold_assignments: usize,
}

struct SimRater {
    state: RaterState,
    accuracy: f64,
    labeled: HashSet<usize>,
    gold_seen: HashSet<usize>,
}

fn answer(rng: &mut ChaCha8Rng, truth: Category, accuracy: f64) -> Category {
    if rng.gen::<f64>() < accuracy {
        truth
    } else {
        let others: Vec<Category> = Category::ALL.iter().copied().filter(|&c| c != truth).collect();
        *others.choose(rng).expect("four alternatives")
    }
}

/// Runs synthetic raters through batched labeling with gold interleaved,
/// then aggregates the surviving votes. Deterministic for a given seed.
pub fn simulate_study(corpus: &Corpus, gold: &GoldSet, profiles: &[RaterProfile], config: &SimulationConfig) -> Result<StudyOutcome> {
    if !(config.gold_ratio > 0.0 && config.gold_ratio <= 1.0) {
        return Err(CrowdError::InvalidGoldRatio(config.gold_ratio));
    }
    if config.raters_per_item == 0 {
        return Err(CrowdError::InvalidPanel);
    }
    if gold.is_empty() {
        return Err(CrowdError::EmptyGold);
    }
    if let Some(p) = profiles.iter().find(|p| !(0.0..=1.0).contains(&p.accuracy)) {
        return Err(CrowdError::InvalidAccuracy(p.accuracy));
    }
    let position: HashMap<&str, usize> = corpus.documents.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    let gold_idx: Vec<usize> = gold
        .ids()
        .map(|id| position.get(id).copied().ok_or_else(|| CrowdError::GoldNotInCorpus(id.to_string())))
        .collect::<Result<_>>()?;
    let regular: Vec<usize> = (0..corpus.len()).filter(|i| !gold.contains(&corpus.documents[*i].id)).collect();
    let truth_of = |i: usize| -> Result<Category> {
        let d = &corpus.documents[i];
        gold.get(&d.id).or(d.label).ok_or_else(|| CrowdError::Unlabeled(d.id.clone()))
    };
    let truths: HashMap<usize, Category> = regular.iter().chain(&gold_idx).map(|&i| Ok((i, truth_of(i)?))).collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut raters: Vec<SimRater> = profiles
        .iter()
        .flat_map(|p| std::iter::repeat_n(p.accuracy, p.count))
        .enumerate()
        .map(|(i, accuracy)| SimRater {
            state: RaterState::new(format!("sim{:03}", i + 1)),
            accuracy,
            labeled: HashSet::new(),
            gold_seen: HashSet::new(),
        })
        .collect();

    let mut remaining: HashMap<usize, usize> = regular.iter().map(|&i| (i, config.raters_per_item)).collect();
    let mut votes: HashMap<usize, Vec<(usize, Category)>> = HashMap::new();
    let (mut regular_assignments, mut gold_assignments) = (0, 0);

    let mut order: Vec<usize> = (0..raters.len()).collect();
    loop {
        let mut progress = false;
        order.shuffle(&mut rng);
        for &r in &order {
            let rater = &mut raters[r];
            if rater.state.excluded {
                continue;
            }
            let size = config.fixed_batch_size.unwrap_or(rater.state.batch_size);
            let n_gold = gold_count(size, config.gold_ratio);
            let picked: Vec<usize> = regular
                .iter()
                .copied()
                .filter(|i| remaining[i] > 0 && !rater.labeled.contains(i))
                .take(size - n_gold)
                .collect();
            if picked.is_empty() {
                continue;
            }
            let mut fresh: Vec<usize> = gold_idx.iter().copied().filter(|g| !rater.gold_seen.contains(g)).collect();
            fresh.shuffle(&mut rng);
            let mut gold_pick: Vec<usize> = fresh.into_iter().take(n_gold).collect();
            while gold_pick.len() < n_gold {
                gold_pick.push(*gold_idx.choose(&mut rng).expect("gold is non-empty"));
            }

            let mut batch: Vec<(usize, bool)> =
                picked.iter().map(|&i| (i, false)).chain(gold_pick.iter().map(|&g| (g, true))).collect();
            batch.shuffle(&mut rng);
            for (item, is_gold) in batch {
                let given = answer(&mut rng, truths[&item], rater.accuracy);
                if is_gold {
                    rater.gold_seen.insert(item);
                    rater.state.record_gold(given == truths[&item]);
                    gold_assignments += 1;
                } else {
                    rater.labeled.insert(item);
                    *remaining.get_mut(&item).expect("regular item") -= 1;
                    votes.entry(item).or_default().push((r, given));
                    regular_assignments += 1;
                }
            }
            progress = true;
        }
        if !progress {
            break;
        }
    }

    let weights: HashMap<String, f64> = raters
        .iter()
        .filter(|r| !r.state.excluded)
        .map(|r| (r.state.rater_id.clone(), r.state.weight()))
        .collect();
    let mut out = corpus.clone();
    let mut labels = Vec::new();
    for &i in &regular {
        let id = &corpus.documents[i].id;
        let cast: Vec<(String, Category)> = votes
            .get(&i)
            .map(|v| v.iter().map(|&(r, c)| (raters[r].state.rater_id.clone(), c)).collect())
            .unwrap_or_default();
        match aggregate(id, &cast, &weights) {
            Ok(agg) => {
                out.documents[i].label = Some(agg.category);
                labels.push(agg);
            }
            Err(_) => out.documents[i].label = None,
        }
    }
    for &g in &gold_idx {
        out.documents[g].label = Some(truths[&g]);
    }
    let histogram = class_histogram(&labels);
    Ok(StudyOutcome {
        corpus: out,
        labels,
        raters: raters.into_iter().map(|r| r.state).collect(),
        histogram,
        regular_assignments,
        gold_assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use Category::*;

    #[test]
    fn policy_table() {
        assert_eq!(batch_policy(8), Ok(20));
        assert_eq!(batch_policy(7), Ok(15));
        assert_eq!(batch_policy(6), Ok(10));
        for n in 0..=5 {
            assert_eq!(batch_policy(n), Ok(0));
        }
        assert_eq!(batch_policy(9), Err(CrowdError::GoldCountOutOfRange(9)));
        let sizes: Vec<usize> = (0..=8).map(|n| batch_policy(n).unwrap()).collect();
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn gold_counts() {
        assert_eq!(gold_count(100, 0.08), 8);
        assert_eq!(gold_count(10, 0.08), 1);
        assert_eq!(gold_count(20, 0.08), 2);
        assert_eq!(gold_count(0, 0.08), 0);
        assert_eq!(gold_count(5, 1.0), 5);
    }

    fn gold8() -> GoldSet {
        GoldSet::new((0..8).map(|i| (format!("g{i}"), NotSexist)))
    }

    #[test]
    fn perfect_rater_earns_twenty() {
        let fresh = RaterState::new("r");
        assert_eq!(fresh.trust(), None);
        assert_eq!(fresh.batch_size, PROBATION_BATCH);
        let answers: Vec<_> = (0..8).map(|i| (format!("g{i}"), NotSexist)).collect();
        let s = update_trust(&fresh, &answers, &gold8()).unwrap();
        assert_eq!(s.trust(), Some(1.0));
        assert_eq!(s.batch_size, 20);
        assert!(!s.excluded);
    }

    #[test]
    fn window_of_six_then_two_wrong() {
        let mut answers: Vec<_> = (0..6).map(|i| (format!("g{i}"), NotSexist)).collect();
        answers.push(("g6".into(), IndirectHarassment));
        answers.push(("g7".into(), IndirectHarassment));
        let s = update_trust(&RaterState::new("r"), &answers, &gold8()).unwrap();
        assert_eq!(s.batch_size, 10);
        assert_eq!(s.trust(), Some(0.75));
    }

    #[test]
    fn partial_window_stays_on_probation() {
        let answers = vec![("g0".to_string(), IndirectHarassment), ("g1".to_string(), IndirectHarassment)];
        let s = update_trust(&RaterState::new("r"), &answers, &gold8()).unwrap();
        assert_eq!(s.batch_size, PROBATION_BATCH);
        assert_eq!(s.trust(), Some(0.0));
        assert!(!s.excluded);
    }

    #[test]
    fn window_slides_and_exclusion_sticks() {
        let mut s = RaterState::new("r");
        for _ in 0..8 {
            s.record_gold(true);
        }
        assert_eq!(s.batch_size, 20);
        s.record_gold(false);
        assert_eq!(s.batch_size, 15);
        s.record_gold(false);
        s.record_gold(false);
        assert!(s.excluded);
        assert_eq!(s.batch_size, 0);
        for _ in 0..8 {
            s.record_gold(true);
        }
        assert!(s.excluded);
    }

    #[test]
    fn non_gold_answer_rejected() {
        let err = update_trust(&RaterState::new("r"), &[("x".into(), NotSexist)], &gold8()).unwrap_err();
        assert_eq!(err, CrowdError::NotGold("x".into()));
    }

    #[test]
    fn weighted_vote() {
        let weights = HashMap::from([("a".to_string(), 0.9), ("b".to_string(), 0.8), ("c".to_string(), 0.7)]);
        let labels = vec![
            ("a".to_string(), SexualHarassment),
            ("b".to_string(), SexualHarassment),
            ("c".to_string(), NotSexist),
        ];
        let agg = aggregate("i", &labels, &weights).unwrap();
        assert_eq!(agg.category, SexualHarassment);
        assert!((agg.confidence - 1.7 / 2.4).abs() < 1e-12);

        let one = aggregate("i", &labels[..1], &weights).unwrap();
        assert_eq!(one.confidence, 1.0);

        let even: HashMap<String, f64> = (0..5).map(|i| (format!("r{i}"), 1.0)).collect();
        let split: Vec<_> = Category::ALL.iter().enumerate().map(|(i, &c)| (format!("r{i}"), c)).collect();
        let agg = aggregate("i", &split, &even).unwrap();
        assert_eq!(agg.category, IndirectHarassment);
        assert!((agg.confidence - 0.2).abs() < 1e-15);

        let nobody = aggregate("i", &labels, &HashMap::new());
        assert_eq!(nobody, Err(CrowdError::NoTrustedLabels("i".into())));
    }

    #[test]
    fn gold_csv() {
        let g = GoldSet::from_csv("item_id,category\na,1\nb,5\n".as_bytes()).unwrap();
        assert_eq!(g.get("b"), Some(NotSexist));
        assert_eq!(g.len(), 2);
        assert!(GoldSet::from_csv("a,9\n".as_bytes()).is_err());
        assert!(GoldSet::from_csv("a,1\na,2\n".as_bytes()).is_err());
    }

    fn study_corpus(n: usize, n_gold: usize) -> (Corpus, GoldSet) {
        let docs: Vec<Document> = (0..n)
            .map(|i| Document::new(format!("d{i:04}"), format!("text {i}")).with_label(Category::ALL[i % 5]))
            .collect();
        let gold = GoldSet::new(docs.iter().take(n_gold).map(|d| (d.id.clone(), d.label.unwrap())));
        (Corpus::new(docs).unwrap(), gold)
    }

    #[test]
    fn perfect_raters_reproduce_truth() {
        let (corpus, gold) = study_corpus(120, 20);
        let cfg = SimulationConfig { raters_per_item: 3, seed: 7, ..Default::default() };
        let out = simulate_study(&corpus, &gold, &[RaterProfile { accuracy: 1.0, count: 5 }], &cfg).unwrap();
        assert_eq!(out.labels.len(), 100);
        for l in &out.labels {
            assert_eq!(Some(l.category), corpus.get(&l.item_id).unwrap().label);
            assert_eq!(l.confidence, 1.0);
        }
        assert_eq!(out.regular_assignments, 300);
        assert_eq!(out.corpus.label_histogram(), corpus.label_histogram());
    }

    #[test]
    fn fixed_batch_reproduces_gold_ratio() {
        let (corpus, gold) = study_corpus(100, 8);
        let cfg = SimulationConfig { raters_per_item: 1, seed: 1, fixed_batch_size: Some(100), ..Default::default() };
        let out = simulate_study(&corpus, &gold, &[RaterProfile { accuracy: 1.0, count: 1 }], &cfg).unwrap();
        assert_eq!(out.regular_assignments, 92);
        assert_eq!(out.gold_assignments, 8);
        assert_eq!(out.gold_assignments as f64 / (out.regular_assignments + out.gold_assignments) as f64, 0.08);
    }

    #[test]
    fn simulation_is_seeded() {
        let (corpus, gold) = study_corpus(80, 10);
        let cfg = SimulationConfig { raters_per_item: 3, seed: 42, ..Default::default() };
        let profiles = [RaterProfile { accuracy: 0.7, count: 8 }];
        let a = simulate_study(&corpus, &gold, &profiles, &cfg).unwrap();
        let b = simulate_study(&corpus, &gold, &profiles, &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_study(&corpus, &gold, &profiles, &SimulationConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.labels, c.labels);
    }

    #[test]
    fn simulation_errors() {
        let (corpus, gold) = study_corpus(10, 2);
        let p = [RaterProfile { accuracy: 1.0, count: 1 }];
        let bad_ratio = SimulationConfig { gold_ratio: 1.5, ..Default::default() };
        assert_eq!(simulate_study(&corpus, &gold, &p, &bad_ratio), Err(CrowdError::InvalidGoldRatio(1.5)));
        let stranger = GoldSet::new([("zzz".to_string(), NotSexist)]);
        assert!(matches!(
            simulate_study(&corpus, &stranger, &p, &SimulationConfig::default()),
            Err(CrowdError::GoldNotInCorpus(_))
        ));
    }
}
