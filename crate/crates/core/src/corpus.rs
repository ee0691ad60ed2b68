//! Tweet corpus model: the harassment taxonomy, file ingestion, the
//! preprocessing rules, duplicate removal and lexicon-based author gender.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("duplicate document id {0:?}")]
    DuplicateIdInCorpus(String),
    #[error("document {0:?} has not been preprocessed")]
    NotPreprocessed(String),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("unknown corpus format {0:?} (expected jsonl or csv)")]
    UnknownFormat(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// The five final harassment categories, coded 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Category {
    IndirectHarassment = 1,
    InformationThreat = 2,
    SexualHarassment = 3,
    PhysicalHarassment = 4,
    NotSexist = 5,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::IndirectHarassment,
        Category::InformationThreat,
        Category::SexualHarassment,
        Category::PhysicalHarassment,
        Category::NotSexist,
    ];
    pub const COUNT: usize = 5;

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Zero-based position, `code - 1`.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get((code as usize).wrapping_sub(1)).copied()
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::IndirectHarassment => "Indirect harassment",
            Category::InformationThreat => "Information threat",
            Category::SexualHarassment => "Sexual harassment",
            Category::PhysicalHarassment => "Physical harassment",
            Category::NotSexist => "Not sexist",
        }
    }
}

impl From<Category> for u8 {
    fn from(c: Category) -> u8 {
        c.code()
    }
}

impl TryFrom<u8> for Category {
    type Error = String;
    fn try_from(code: u8) -> std::result::Result<Self, String> {
        Category::from_code(code).ok_or_else(|| format!("category code {code} is not in 1..=5"))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (#{})", self.name(), self.code())
    }
}

/// Picks the highest-scoring category; equal scores resolve to the lowest code.
/// NaN scores never win.
pub fn argmax_category<I>(scored: I) -> Option<Category>
where
    I: IntoIterator<Item = (Category, f64)>,
{
    let mut best: Option<(Category, f64)> = None;
    for (cat, score) in scored {
        if score.is_nan() {
            continue;
        }
        best = match best {
            None => Some((cat, score)),
            Some((bc, bs)) if score > bs || (score == bs && cat < bc) => Some((cat, score)),
            keep => keep,
        };
    }
    best.map(|(c, _)| c)
}

/// The nine categories of the first (pilot) instruction, coded 1..=9.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum LegacyCategory {
    Benevolent = 1,
    PhysicalThreats = 2,
    SexualThreats = 3,
    BodyHarassment = 4,
    MasculineHarassment = 5,
    LackOfAttractiveness = 6,
    Stalking = 7,
    Impersonation = 8,
    GeneralSexist = 9,
}

impl LegacyCategory {
    pub const ALL: [LegacyCategory; 9] = [
        LegacyCategory::Benevolent,
        LegacyCategory::PhysicalThreats,
        LegacyCategory::SexualThreats,
        LegacyCategory::BodyHarassment,
        LegacyCategory::MasculineHarassment,
        LegacyCategory::LackOfAttractiveness,
        LegacyCategory::Stalking,
        LegacyCategory::Impersonation,
        LegacyCategory::GeneralSexist,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get((code as usize).wrapping_sub(1)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LegacyCategory::Benevolent => "Benevolent sexism",
            LegacyCategory::PhysicalThreats => "Physical threats",
            LegacyCategory::SexualThreats => "Sexual threats",
            LegacyCategory::BodyHarassment => "Body harassment",
            LegacyCategory::MasculineHarassment => "Masculine harassment",
            LegacyCategory::LackOfAttractiveness => "Lack of attractiveness harassment",
            LegacyCategory::Stalking => "Stalking",
            LegacyCategory::Impersonation => "Impersonation",
            LegacyCategory::GeneralSexist => "General sexist statements",
        }
    }

    /// Collapses a pilot category into the final taxonomy.
    pub fn remap(self) -> Category {
        use Category as C;
        use LegacyCategory as L;
        match self {
            L::Benevolent | L::MasculineHarassment => C::IndirectHarassment,
            L::Stalking | L::Impersonation => C::InformationThreat,
            L::SexualThreats | L::GeneralSexist => C::SexualHarassment,
            L::PhysicalThreats | L::BodyHarassment | L::LackOfAttractiveness => {
                C::PhysicalHarassment
            }
        }
    }
}

impl From<LegacyCategory> for u8 {
    fn from(c: LegacyCategory) -> u8 {
        c.code()
    }
}

impl TryFrom<u8> for LegacyCategory {
    type Error = String;
    fn try_from(code: u8) -> std::result::Result<Self, String> {
        LegacyCategory::from_code(code)
            .ok_or_else(|| format!("legacy category code {code} is not in 1..=9"))
    }
}

pub fn remap_legacy(legacy: LegacyCategory) -> Category {
    legacy.remap()
}

/// The legacy → final remap as `(old code, new code)` pairs, for merging
/// rating matrices.
pub fn legacy_code_mapping() -> Vec<(u32, u32)> {
    LegacyCategory::ALL
        .iter()
        .map(|l| (l.code() as u32, l.remap().code() as u32))
        .collect()
}

/// One category card of the rater instructions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub code: u8,
    pub name: String,
    pub definition: String,
    pub hint: Option<String>,
    pub examples: Vec<String>,
}

static INSTRUCTIONS: LazyLock<Vec<Instruction>> = LazyLock::new(|| {
    serde_json::from_str(include_str!("../data/instructions.json"))
        .expect("bundled instructions.json is valid")
});

/// Rater instructions for the five final categories, in code order.
///
/// The text is reproduced as written, including category 1's second clause
/// ("inferiority of men over women") even though the merged pilot category
/// describes men's control over women.
pub fn instructions() -> &'static [Instruction] {
    &INSTRUCTIONS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    #[default]
    Unknown,
}

impl Gender {
    pub fn opposite(self) -> Gender {
        match self {
            Gender::Female => Gender::Male,
            Gender::Male => Gender::Female,
            Gender::Unknown => Gender::Unknown,
        }
    }
}

impl FromStr for Gender {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Gender::Female),
            "male" | "m" => Ok(Gender::Male),
            "unknown" => Ok(Gender::Unknown),
            other => Err(format!("unknown gender {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub raw_text: String,
    pub tokens: Vec<String>,
    pub hashtags: Vec<String>,
    pub label: Option<Category>,
    pub legacy_label: Option<LegacyCategory>,
    pub author_gender: Gender,
    pub user_id: Option<String>,
    pub preprocessed: bool,
}

impl Document {
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            raw_text: raw_text.into(),
            tokens: Vec::new(),
            hashtags: Vec::new(),
            label: None,
            legacy_label: None,
            author_gender: Gender::Unknown,
            user_id: None,
            preprocessed: false,
        }
    }

    pub fn with_label(mut self, label: Category) -> Self {
        self.label = Some(label);
        self
    }

    /// The preprocessed tokens joined by single spaces.
    pub fn joined_tokens(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for d in &documents {
            if !seen.insert(d.id.as_str()) {
                return Err(CorpusError::DuplicateIdInCorpus(d.id.clone()));
            }
        }
        Ok(Corpus { documents })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Number of labeled documents per category, indexed by `code - 1`.
    pub fn label_histogram(&self) -> [usize; Category::COUNT] {
        let mut h = [0; Category::COUNT];
        for label in self.documents.iter().filter_map(|d| d.label) {
            h[label.index()] += 1;
        }
        h
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for d in &self.documents {
            serde_json::to_writer(&mut out, &DocumentRecord::from(d))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// Guesses the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

impl FromStr for Format {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// On-disk shape of a corpus line. `tokens` is only present once the
/// document has been preprocessed.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: Option<String>,
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legacy_label: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hashtags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author_gender: Option<Gender>,
}

impl From<&Document> for DocumentRecord {
    fn from(d: &Document) -> Self {
        DocumentRecord {
            id: Some(d.id.clone()),
            text: Some(d.raw_text.clone()),
            label: d.label.map(|c| c.code() as i64),
            legacy_label: d.legacy_label.map(|c| c.code() as i64),
            user_id: d.user_id.clone(),
            tokens: d.preprocessed.then(|| d.tokens.clone()),
            hashtags: d.preprocessed.then(|| d.hashtags.clone()),
            author_gender: (d.author_gender != Gender::Unknown).then_some(d.author_gender),
        }
    }
}

impl DocumentRecord {
    fn into_document(self, line: usize) -> Result<Document> {
        let malformed = |message: String| CorpusError::Malformed { line, message };
        let id = self
            .id
            .filter(|s| !s.is_empty())
            .ok_or_else(|| malformed("missing or empty \"id\"".into()))?;
        let text = self.text.ok_or_else(|| malformed("missing \"text\"".into()))?;
        let label = self
            .label
            .map(|v| {
                u8::try_from(v)
                    .ok()
                    .and_then(Category::from_code)
                    .ok_or_else(|| malformed(format!("label {v} is not in 1..=5")))
            })
            .transpose()?;
        let legacy_label = self
            .legacy_label
            .map(|v| {
                u8::try_from(v)
                    .ok()
                    .and_then(LegacyCategory::from_code)
                    .ok_or_else(|| malformed(format!("legacy_label {v} is not in 1..=9")))
            })
            .transpose()?;
        if let (Some(l), Some(old)) = (label, legacy_label) {
            if old.remap() != l {
                return Err(malformed(format!(
                    "label {} disagrees with legacy_label {} (which maps to {})",
                    l.code(),
                    old.code(),
                    old.remap().code()
                )));
            }
        }
        let preprocessed = self.tokens.is_some();
        let tokens = self.tokens.unwrap_or_default();
        let hashtags = match self.hashtags {
            Some(h) => h,
            None => tokens.iter().filter(|t| t.starts_with('#')).cloned().collect(),
        };
        Ok(Document {
            id,
            raw_text: text,
            tokens,
            hashtags,
            label,
            legacy_label,
            author_gender: self.author_gender.unwrap_or_default(),
            user_id: self.user_id,
            preprocessed,
        })
    }
}

fn collect_unique(docs: impl IntoIterator<Item = (usize, Result<Document>)>) -> Result<Corpus> {
    let mut seen = HashSet::new();
    let mut documents = Vec::new();
    for (line, doc) in docs {
        let doc = doc?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: doc.id });
        }
        documents.push(doc);
    }
    Ok(Corpus { documents })
}

/// Reads a corpus from JSONL, one document object per line. Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut parsed = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = serde_json::from_str::<DocumentRecord>(&line)
            .map_err(|e| CorpusError::Malformed { line: line_no, message: e.to_string() })
            .and_then(|r| r.into_document(line_no));
        parsed.push((line_no, doc));
        if parsed.last().is_some_and(|(_, d)| d.is_err()) {
            break;
        }
    }
    collect_unique(parsed)
}

/// Reads a corpus from CSV with a header row naming at least `id` and `text`.
pub fn read_csv<R: Read>(reader: R) -> Result<Corpus> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::Malformed { line: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (id_col, text_col) = (col("id"), col("text"));
    let (label_col, legacy_col, user_col) = (col("label"), col("legacy_label"), col("user_id"));

    let mut parsed = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CorpusError::Malformed {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |c: Option<usize>| c.and_then(|c| rec.get(c)).filter(|s| !s.trim().is_empty());
        let int = |c: Option<usize>, name: &str| -> Result<Option<i64>> {
            field(c)
                .map(|s| {
                    s.trim().parse::<i64>().map_err(|_| CorpusError::Malformed {
                        line,
                        message: format!("{name} {s:?} is not an integer"),
                    })
                })
                .transpose()
        };
        let record = DocumentRecord {
            id: field(id_col).map(str::to_string),
            text: text_col.and_then(|c| rec.get(c)).map(str::to_string),
            label: int(label_col, "label")?,
            legacy_label: int(legacy_col, "legacy_label")?,
            user_id: field(user_col).map(str::to_string),
            ..Default::default()
        };
        parsed.push((line, record.into_document(line)));
        if parsed.last().is_some_and(|(_, d)| d.is_err()) {
            break;
        }
    }
    collect_unique(parsed)
}

pub fn ingest(path: &Path, format: Format) -> Result<Corpus> {
    let file = File::open(path)?;
    match format {
        Format::Jsonl => read_jsonl(BufReader::new(file)),
        Format::Csv => read_csv(BufReader::new(file)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    /// Tokens with fewer characters than this are dropped (hashtags exempt).
    pub min_token_chars: usize,
    /// Drop documents whose stopword coverage falls below `min_stopword_coverage`.
    pub english_only: bool,
    pub min_stopword_coverage: f64,
    /// Drop documents in which hashtags make up more than this share of tokens.
    pub max_hashtag_ratio: Option<f64>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_token_chars: 3,
            english_only: false,
            min_stopword_coverage: 0.1,
            max_hashtag_ratio: None,
        }
    }
}

pub fn is_url(token: &str) -> bool {
    token.starts_with("http://") || token.starts_with("https://") || token.starts_with("www.")
}

/// Lowercases, splits on whitespace, drops links and short non-hashtag tokens.
pub fn tokenize(text: &str, min_token_chars: usize) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .filter(|t| !is_url(t))
        .filter(|t| t.starts_with('#') || t.chars().count() >= min_token_chars)
        .map(str::to_string)
        .collect()
}

pub fn preprocess(doc: &Document, config: &PreprocessConfig) -> Document {
    let tokens = tokenize(&doc.raw_text, config.min_token_chars);
    let hashtags = tokens.iter().filter(|t| t.starts_with('#')).cloned().collect();
    Document { tokens, hashtags, preprocessed: true, ..doc.clone() }
}

const STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

static STOPWORD_SET: LazyLock<HashSet<&'static str>> =
    LazyLock::new(|| STOPWORDS.split_whitespace().collect());

/// Share of the raw (lowercased, punctuation-trimmed) words that are
/// English stopwords. Links and hashtags are not counted.
pub fn stopword_coverage(raw_text: &str) -> f64 {
    let lowered = raw_text.to_lowercase();
    let words: Vec<&str> = lowered
        .split_whitespace()
        .filter(|t| !is_url(t) && !t.starts_with('#'))
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric() && c != '\''))
        .filter(|t| !t.is_empty())
        .collect();
    if words.is_empty() {
        return 0.0;
    }
    let hits = words.iter().filter(|w| STOPWORD_SET.contains(*w)).count();
    hits as f64 / words.len() as f64
}

/// Preprocesses every document, then applies the optional language and
/// hashtag-spam filters.
pub fn preprocess_corpus(corpus: &Corpus, config: &PreprocessConfig) -> Corpus {
    let documents = corpus
        .documents
        .iter()
        .filter(|d| {
            !config.english_only || stopword_coverage(&d.raw_text) >= config.min_stopword_coverage
        })
        .map(|d| preprocess(d, config))
        .filter(|d| match config.max_hashtag_ratio {
            Some(max) if !d.tokens.is_empty() => {
                (d.hashtags.len() as f64 / d.tokens.len() as f64) <= max
            }
            _ => true,
        })
        .collect();
    Corpus { documents }
}

/// Keeps the first document of every distinct token sequence.
pub fn dedupe(corpus: &Corpus) -> Result<Corpus> {
    if let Some(d) = corpus.documents.iter().find(|d| !d.preprocessed) {
        return Err(CorpusError::NotPreprocessed(d.id.clone()));
    }
    let mut seen: HashSet<&[String]> = HashSet::new();
    let documents = corpus
        .documents
        .iter()
        .filter(|d| seen.insert(d.tokens.as_slice()))
        .cloned()
        .collect();
    Ok(Corpus { documents })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenderLexicon {
    weights: HashMap<String, f64>,
    positive_pole: Gender,
}

impl GenderLexicon {
    pub fn new(weights: HashMap<String, f64>, positive_pole: Gender) -> Result<Self> {
        if positive_pole == Gender::Unknown {
            return Err(CorpusError::Lexicon {
                line: 0,
                message: "positive pole must be female or male".into(),
            });
        }
        for (token, w) in &weights {
            if token.is_empty() || !w.is_finite() {
                return Err(CorpusError::Lexicon {
                    line: 0,
                    message: format!("invalid entry {token:?} -> {w}"),
                });
            }
        }
        let weights = weights.into_iter().map(|(t, w)| (t.to_lowercase(), w)).collect();
        Ok(GenderLexicon { weights, positive_pole })
    }

    /// Parses header-less `token,weight` CSV.
    pub fn from_csv<R: Read>(reader: R, positive_pole: Gender) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut weights = HashMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 1;
            let rec = rec.map_err(|e| CorpusError::Lexicon { line, message: e.to_string() })?;
            if rec.len() != 2 {
                return Err(CorpusError::Lexicon {
                    line,
                    message: format!("expected 2 fields, found {}", rec.len()),
                });
            }
            let token = rec[0].trim();
            let weight: f64 = rec[1].trim().parse().map_err(|_| CorpusError::Lexicon {
                line,
                message: format!("weight {:?} is not a number", &rec[1]),
            })?;
            if token.is_empty() || !weight.is_finite() {
                return Err(CorpusError::Lexicon {
                    line,
                    message: "empty token or non-finite weight".into(),
                });
            }
            *weights.entry(token.to_lowercase()).or_insert(0.0) += weight;
        }
        GenderLexicon::new(weights, positive_pole)
    }

    pub fn load(path: &Path, positive_pole: Gender) -> Result<Self> {
        GenderLexicon::from_csv(BufReader::new(File::open(path)?), positive_pole)
    }

    pub fn weight(&self, token: &str) -> Option<f64> {
        self.weights.get(token).copied()
    }

    pub fn positive_pole(&self) -> Gender {
        self.positive_pole
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Sums lexicon weights over the document's tokens; the sign picks the pole.
pub fn infer_gender(doc: &Document, lexicon: &GenderLexicon) -> (Gender, f64) {
    let score: f64 = doc.tokens.iter().filter_map(|t| lexicon.weight(t)).sum();
    let gender = if score > 0.0 {
        lexicon.positive_pole
    } else if score < 0.0 {
        lexicon.positive_pole.opposite()
    } else {
        Gender::Unknown
    };
    (gender, score)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pre(text: &str) -> Document {
        preprocess(&Document::new("x", text), &PreprocessConfig::default())
    }

    #[test]
    fn category_codes_are_total_and_unique() {
        for (i, c) in Category::ALL.iter().enumerate() {
            assert_eq!(c.code() as usize, i + 1);
            assert_eq!(Category::from_code(c.code()), Some(*c));
        }
        assert_eq!(Category::from_code(0), None);
        assert_eq!(Category::from_code(6), None);
        let codes: HashSet<u8> = LegacyCategory::ALL.iter().map(|c| c.code()).collect();
        assert_eq!(codes.len(), 9);
        assert_eq!(LegacyCategory::from_code(10), None);
    }

    #[test]
    fn remap_matches_shared_examples() {
        assert_eq!(remap_legacy(LegacyCategory::Stalking), Category::InformationThreat);
        assert_eq!(remap_legacy(LegacyCategory::GeneralSexist), Category::SexualHarassment);
        assert_eq!(
            remap_legacy(LegacyCategory::LackOfAttractiveness),
            Category::PhysicalHarassment
        );
        let expected = [1, 4, 3, 4, 1, 4, 2, 2, 3];
        for (l, want) in LegacyCategory::ALL.iter().zip(expected) {
            assert_eq!(l.remap().code(), want, "{l:?}");
        }
    }

    #[test]
    fn remap_is_onto_first_four_categories() {
        let image: HashSet<Category> = LegacyCategory::ALL.iter().map(|l| l.remap()).collect();
        assert_eq!(image.len(), 4);
        assert!(!image.contains(&Category::NotSexist));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let even: Vec<_> = Category::ALL.iter().map(|&c| (c, 0.2)).collect();
        assert_eq!(argmax_category(even), Some(Category::IndirectHarassment));
        let rev: Vec<_> = Category::ALL.iter().rev().map(|&c| (c, 1.0)).collect();
        assert_eq!(argmax_category(rev), Some(Category::IndirectHarassment));
        assert_eq!(
            argmax_category([(Category::NotSexist, 0.9), (Category::SexualHarassment, 0.1)]),
            Some(Category::NotSexist)
        );
        assert_eq!(argmax_category(std::iter::empty()), None);
    }

    #[test]
    fn instructions_cover_five_categories() {
        let ins = instructions();
        assert_eq!(ins.len(), 5);
        for (i, card) in ins.iter().enumerate() {
            assert_eq!(card.code as usize, i + 1);
            assert!(!card.definition.is_empty());
        }
        assert!(ins[4].definition.contains("not sexist"));
    }

    #[test]
    fn preprocess_applies_rules() {
        let d = pre("#ok is ok http://t.co/ab now");
        assert_eq!(d.tokens, vec!["#ok", "now"]);
        assert_eq!(d.hashtags, vec!["#ok"]);
        assert!(d.preprocessed);
        assert!(pre("").tokens.is_empty());
        assert_eq!(pre("Visit www.example.com HTTPS://X.CO/1 today").tokens, vec!["visit", "today"]);
        assert_eq!(pre("#A bb CCC").tokens, vec!["#a", "ccc"]);
    }

    #[test]
    fn preprocess_counts_chars_not_bytes() {
        assert_eq!(pre("éé ééé").tokens, vec!["ééé"]);
    }

    #[test]
    fn jsonl_ingest_and_errors() {
        let two = "{\"id\":\"a\",\"text\":\"hello there\"}\n{\"id\":\"b\",\"text\":\"x\",\"label\":3}\n";
        let c = read_jsonl(two.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.documents[1].label, Some(Category::SexualHarassment));
        assert!(!c.documents[0].preprocessed);
        assert!(c.documents[0].tokens.is_empty());

        let missing = "{\"id\":\"a\",\"text\":\"ok\"}\n{\"id\":\"b\"}\n";
        match read_jsonl(missing.as_bytes()) {
            Err(CorpusError::Malformed { line: 2, message }) => assert!(message.contains("text")),
            other => panic!("unexpected {other:?}"),
        }

        let dup = "{\"id\":\"a\",\"text\":\"1\"}\n{\"id\":\"a\",\"text\":\"2\"}\n";
        assert!(matches!(read_jsonl(dup.as_bytes()), Err(CorpusError::DuplicateId { line: 2, .. })));

        let bad_label = "{\"id\":\"a\",\"text\":\"1\",\"label\":6}\n";
        assert!(matches!(read_jsonl(bad_label.as_bytes()), Err(CorpusError::Malformed { line: 1, .. })));

        let garbage = "{\"id\":\"a\",\"text\":\"1\"}\nnot json\n";
        assert!(matches!(read_jsonl(garbage.as_bytes()), Err(CorpusError::Malformed { line: 2, .. })));
    }

    #[test]
    fn legacy_and_final_labels_must_agree() {
        let ok = "{\"id\":\"a\",\"text\":\"t\",\"label\":2,\"legacy_label\":7}\n";
        assert!(read_jsonl(ok.as_bytes()).is_ok());
        let bad = "{\"id\":\"a\",\"text\":\"t\",\"label\":1,\"legacy_label\":7}\n";
        assert!(read_jsonl(bad.as_bytes()).is_err());
    }

    #[test]
    fn csv_ingest() {
        let data = "id,text,label\na,\"hello, world\",1\nb,second,\n";
        let c = read_csv(data.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.documents[0].raw_text, "hello, world");
        assert_eq!(c.documents[1].label, None);
        let bad = "id,text,label\na,t,zz\n";
        assert!(matches!(read_csv(bad.as_bytes()), Err(CorpusError::Malformed { line: 2, .. })));
    }

    #[test]
    fn jsonl_roundtrip_keeps_preprocessed_state() {
        let c = Corpus::new(vec![pre("#tag hello world").with_label(Category::NotSexist)]).unwrap();
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn dedupe_keeps_first() {
        let mk = |id: &str, t: &str| preprocess(&Document::new(id, t), &PreprocessConfig::default());
        let c = Corpus::new(vec![mk("a", "same words here"), mk("b", "SAME words here"), mk("c", "other")])
            .unwrap();
        let d = dedupe(&c).unwrap();
        assert_eq!(d.documents.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["a", "c"]);

        let distinct = Corpus::new(vec![mk("a", "one"), mk("b", "two")]).unwrap();
        assert_eq!(dedupe(&distinct).unwrap(), distinct);

        let raw = Corpus::new(vec![Document::new("z", "text")]).unwrap();
        assert!(matches!(dedupe(&raw), Err(CorpusError::NotPreprocessed(id)) if id == "z"));
    }

    #[test]
    fn spam_and_language_filters() {
        let c = Corpus::new(vec![
            Document::new("a", "#one #two #three spam"),
            Document::new("b", "this is what the rest of the tweet says"),
            Document::new("c", "zzzq qqqz wwwx"),
        ])
        .unwrap();
        let spam = PreprocessConfig { max_hashtag_ratio: Some(0.5), ..Default::default() };
        let out = preprocess_corpus(&c, &spam);
        assert_eq!(out.documents.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        let lang = PreprocessConfig { english_only: true, ..Default::default() };
        let out = preprocess_corpus(&c, &lang);
        assert_eq!(out.documents.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["b"]);
        // both filters off by default
        assert_eq!(preprocess_corpus(&c, &PreprocessConfig::default()).len(), 3);
    }

    #[test]
    fn gender_scoring() {
        let lex = GenderLexicon::new(
            HashMap::from([("she".to_string(), 1.0), ("football".to_string(), -0.5)]),
            Gender::Female,
        )
        .unwrap();
        let mut d = Document::new("x", "");
        d.tokens = vec!["she".into(), "likes".into(), "football".into()];
        assert_eq!(infer_gender(&d, &lex), (Gender::Female, 0.5));
        d.tokens = vec!["nothing".into()];
        assert_eq!(infer_gender(&d, &lex), (Gender::Unknown, 0.0));
        d.tokens = vec!["football".into()];
        assert_eq!(infer_gender(&d, &lex), (Gender::Male, -0.5));

        let flipped = GenderLexicon::new(HashMap::from([("she".to_string(), 1.0)]), Gender::Male).unwrap();
        d.tokens = vec!["she".into()];
        assert_eq!(infer_gender(&d, &flipped).0, Gender::Male);
        assert!(GenderLexicon::new(HashMap::new(), Gender::Unknown).is_err());
    }

    #[test]
    fn lexicon_csv() {
        let lex = GenderLexicon::from_csv("she,1.5\nhe,-2\n".as_bytes(), Gender::Female).unwrap();
        assert_eq!(lex.weight("she"), Some(1.5));
        assert_eq!(lex.len(), 2);
        assert!(matches!(
            GenderLexicon::from_csv("she,abc\n".as_bytes(), Gender::Female),
            Err(CorpusError::Lexicon { line: 1, .. })
        ));
        assert!(GenderLexicon::from_csv("she,inf\n".as_bytes(), Gender::Female).is_err());
    }
}
