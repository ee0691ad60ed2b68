//! Word and character n-gram bag-of-words features over a frozen vocabulary.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Document;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("n-gram order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("n-gram spec has no parts")]
    EmptySpec,
    #[error("n-gram spec repeats part {0}")]
    DuplicatePart(String),
    #[error("unknown feature spec {0:?}")]
    UnknownSpec(String),
    #[error("vocabulary is frozen")]
    Frozen,
    #[error("vocabulary must be frozen before vectorizing")]
    NotFrozen,
    #[error("min_df must be at least 1")]
    InvalidMinDf,
    #[error("document {0:?} has not been preprocessed")]
    NotPreprocessed(String),
    #[error("vocabulary json: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Unit {
    Word,
    Char,
}

/// One n-gram family, e.g. word bigrams. Features carry a namespace prefix
/// (`w2:`, `c3:`) so families never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NgramPart {
    pub unit: Unit,
    pub n: usize,
}

impl NgramPart {
    pub fn word(n: usize) -> Self {
        NgramPart { unit: Unit::Word, n }
    }

    pub fn char(n: usize) -> Self {
        NgramPart { unit: Unit::Char, n }
    }

    pub fn prefix(&self) -> String {
        format!("{self}:")
    }

    /// Un-namespaced grams of this family for a token sequence.
    pub fn grams(&self, tokens: &[String]) -> Result<Vec<String>> {
        match self.unit {
            Unit::Word => word_ngrams(tokens, self.n),
            Unit::Char => char_ngrams(&tokens.join(" "), self.n),
        }
    }
}

impl fmt::Display for NgramPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let u = match self.unit {
            Unit::Word => 'w',
            Unit::Char => 'c',
        };
        write!(f, "{u}{}", self.n)
    }
}

impl FromStr for NgramPart {
    type Err = FeatureError;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || FeatureError::UnknownSpec(s.to_string());
        let mut chars = s.chars();
        let unit = match chars.next() {
            Some('w') => Unit::Word,
            Some('c') => Unit::Char,
            _ => return Err(bad()),
        };
        let n: usize = chars.as_str().parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(FeatureError::InvalidOrder(0));
        }
        Ok(NgramPart { unit, n })
    }
}

/// A non-empty set of n-gram families whose features are concatenated.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NgramSpec {
    parts: Vec<NgramPart>,
}

impl NgramSpec {
    pub fn new(parts: impl IntoIterator<Item = NgramPart>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for p in parts {
            if p.n == 0 {
                return Err(FeatureError::InvalidOrder(0));
            }
            if !seen.insert(p) {
                return Err(FeatureError::DuplicatePart(p.to_string()));
            }
            out.push(p);
        }
        if out.is_empty() {
            return Err(FeatureError::EmptySpec);
        }
        out.sort();
        Ok(NgramSpec { parts: out })
    }

    pub fn parts(&self) -> &[NgramPart] {
        &self.parts
    }

    /// Feature families named after the bag-of-words result rows:
    /// `bigrams`, `trigrams`, `fourgrams`, `char2`..`char4`, `all-grams`,
    /// `all-chars` and `all`. Explicit lists like `w1+c3` are accepted too.
    pub fn named(name: &str) -> Result<Self> {
        let words = |ns: &[usize]| ns.iter().map(|&n| NgramPart::word(n)).collect::<Vec<_>>();
        let chars = |ns: &[usize]| ns.iter().map(|&n| NgramPart::char(n)).collect::<Vec<_>>();
        let parts = match name.to_ascii_lowercase().as_str() {
            "unigrams" => words(&[1]),
            "bigrams" => words(&[2]),
            "trigrams" | "threegrams" => words(&[3]),
            "fourgrams" | "four-grams" => words(&[4]),
            "char2" => chars(&[2]),
            "char3" => chars(&[3]),
            "char4" => chars(&[4]),
            "all-grams" => words(&[2, 3, 4]),
            "all-chars" => chars(&[2, 3, 4]),
            "all" => [words(&[2, 3, 4]), chars(&[2, 3, 4])].concat(),
            other => other
                .split(['+', ','])
                .map(str::parse)
                .collect::<Result<Vec<NgramPart>>>()
                .map_err(|_| FeatureError::UnknownSpec(name.to_string()))?,
        };
        NgramSpec::new(parts)
    }

    /// All namespaced features of a token sequence, with multiplicity.
    pub fn features(&self, tokens: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        for p in &self.parts {
            let prefix = p.prefix();
            // orders are validated >= 1 at construction
            for g in p.grams(tokens).unwrap_or_default() {
                out.push(format!("{prefix}{g}"));
            }
        }
        out
    }
}

impl fmt::Display for NgramSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.parts.iter().map(|p| p.to_string()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for NgramSpec {
    type Err = FeatureError;
    fn from_str(s: &str) -> Result<Self> {
        NgramSpec::named(s)
    }
}

pub fn word_ngrams(tokens: &[String], n: usize) -> Result<Vec<String>> {
    if n == 0 {
        return Err(FeatureError::InvalidOrder(n));
    }
    Ok(tokens.windows(n).map(|w| w.join(" ")).collect())
}

/// Sliding windows of `n` unicode scalars, spaces included.
pub fn char_ngrams(text: &str, n: usize) -> Result<Vec<String>> {
    if n == 0 {
        return Err(FeatureError::InvalidOrder(n));
    }
    let chars: Vec<char> = text.chars().collect();
    Ok(chars.windows(n).map(|w| w.iter().collect()).collect())
}

/// Bag-of-words counts keyed by vocabulary column.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseVector {
    pub entries: BTreeMap<usize, u32>,
}

impl SparseVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut v = SparseVector::new();
        for (i, c) in pairs {
            if c > 0 {
                *v.entries.entry(i).or_insert(0) += c;
            }
        }
        v
    }

    pub fn get(&self, id: usize) -> u32 {
        self.entries.get(&id).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.entries.values().map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.entries.iter().map(|(&i, &c)| (i, c))
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.keys().next_back().copied()
    }

    pub fn scaled(&self, k: u32) -> SparseVector {
        SparseVector::from_pairs(self.iter().map(|(i, c)| (i, c * k)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    spec: NgramSpec,
    min_df: usize,
    features: Vec<String>,
    index: HashMap<String, usize>,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyFile {
    spec: Vec<String>,
    min_df: usize,
    features: Vec<String>,
}

impl Vocabulary {
    /// An empty, unfrozen vocabulary.
    pub fn new(spec: NgramSpec, min_df: usize) -> Result<Self> {
        if min_df == 0 {
            return Err(FeatureError::InvalidMinDf);
        }
        Ok(Vocabulary { spec, min_df, features: Vec::new(), index: HashMap::new(), frozen: false })
    }

    pub fn insert(&mut self, feature: &str) -> Result<usize> {
        if self.frozen {
            return Err(FeatureError::Frozen);
        }
        if let Some(&id) = self.index.get(feature) {
            return Ok(id);
        }
        let id = self.features.len();
        self.features.push(feature.to_string());
        self.index.insert(feature.to_string(), id);
        Ok(id)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn get(&self, feature: &str) -> Option<usize> {
        self.index.get(feature).copied()
    }

    pub fn feature(&self, id: usize) -> Option<&str> {
        self.features.get(id).map(String::as_str)
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn spec(&self) -> &NgramSpec {
        &self.spec
    }

    pub fn min_df(&self) -> usize {
        self.min_df
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn to_json(&self) -> String {
        let file = VocabularyFile {
            spec: self.spec.parts().iter().map(|p| p.to_string()).collect(),
            min_df: self.min_df,
            features: self.features.clone(),
        };
        serde_json::to_string(&file).expect("vocabulary serializes")
    }

    /// Loads a serialized vocabulary; the result is frozen.
    pub fn from_json(s: &str) -> Result<Self> {
        let file: VocabularyFile =
            serde_json::from_str(s).map_err(|e| FeatureError::Json(e.to_string()))?;
        let parts = file.spec.iter().map(|p| p.parse()).collect::<Result<Vec<NgramPart>>>()?;
        let mut v = Vocabulary::new(NgramSpec::new(parts)?, file.min_df)?;
        for f in &file.features {
            if v.get(f).is_some() {
                return Err(FeatureError::Json(format!("duplicate feature {f:?}")));
            }
            v.insert(f)?;
        }
        v.freeze();
        Ok(v)
    }

    /// Hex SHA-256 of the serialized form; models record it to name their vocabulary.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Collects every namespaced feature with document frequency `>= min_df`,
/// ordered lexicographically, and freezes the result.
pub fn build_vocab<'a, I>(docs: I, spec: &NgramSpec, min_df: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut vocab = Vocabulary::new(spec.clone(), min_df)?;
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        if !doc.preprocessed {
            return Err(FeatureError::NotPreprocessed(doc.id.clone()));
        }
        let distinct: HashSet<String> = spec.features(&doc.tokens).into_iter().collect();
        for f in distinct {
            *df.entry(f).or_insert(0) += 1;
        }
    }
    for (f, count) in &df {
        if *count >= min_df {
            vocab.insert(f)?;
        }
    }
    vocab.freeze();
    Ok(vocab)
}

/// Counts in-vocabulary features of a token sequence; unknown features are dropped.
pub fn vectorize_tokens(tokens: &[String], vocab: &Vocabulary) -> Result<SparseVector> {
    if !vocab.is_frozen() {
        return Err(FeatureError::NotFrozen);
    }
    let mut v = SparseVector::new();
    for f in vocab.spec().features(tokens) {
        if let Some(id) = vocab.get(&f) {
            *v.entries.entry(id).or_insert(0) += 1;
        }
    }
    Ok(v)
}

pub fn vectorize(doc: &Document, vocab: &Vocabulary) -> Result<SparseVector> {
    vectorize_tokens(&doc.tokens, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{preprocess, PreprocessConfig};

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    fn doc(id: &str, tokens: &[&str]) -> Document {
        let mut d = Document::new(id, tokens.join(" "));
        d.tokens = toks(tokens);
        d.preprocessed = true;
        d
    }

    #[test]
    fn word_grams() {
        assert_eq!(word_ngrams(&toks(&["a", "b", "c"]), 2).unwrap(), vec!["a b", "b c"]);
        assert!(word_ngrams(&toks(&["a"]), 2).unwrap().is_empty());
        assert_eq!(word_ngrams(&toks(&["a"]), 0), Err(FeatureError::InvalidOrder(0)));
    }

    #[test]
    fn char_grams() {
        assert_eq!(char_ngrams("cat", 2).unwrap(), vec!["ca", "at"]);
        assert_eq!(char_ngrams("ab cd", 3).unwrap(), vec!["ab ", "b c", " cd"]);
        assert_eq!(char_ngrams("ñé", 1).unwrap(), vec!["ñ", "é"]);
        assert!(char_ngrams("", 2).unwrap().is_empty());
        assert!(char_ngrams("x", 0).is_err());
    }

    #[test]
    fn named_specs() {
        assert_eq!(NgramSpec::named("char3").unwrap().to_string(), "c3");
        assert_eq!(NgramSpec::named("all").unwrap().to_string(), "w2+w3+w4+c2+c3+c4");
        assert_eq!(NgramSpec::named("c3+w1").unwrap().to_string(), "w1+c3");
        assert!(NgramSpec::named("w2+w2").is_err());
        assert!(NgramSpec::named("nonsense").is_err());
        assert_eq!(NgramSpec::new([]), Err(FeatureError::EmptySpec));
    }

    #[test]
    fn namespaces_keep_word_and_char_grams_apart() {
        // word bigram "a b" and char trigram "a b" have the same surface text
        let spec = NgramSpec::named("w2+c3").unwrap();
        let f = spec.features(&toks(&["a", "b"]));
        assert_eq!(f, vec!["w2:a b", "c3:a b"]);
        let v = build_vocab([&doc("1", &["a", "b"])], &spec, 1).unwrap();
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn min_df_threshold() {
        let spec = NgramSpec::named("bigrams").unwrap();
        let docs = [doc("1", &["x", "y", "z"]), doc("2", &["x", "y", "q"])];
        let v = build_vocab(&docs, &spec, 2).unwrap();
        assert_eq!(v.features(), ["w2:x y"]);
        let v = build_vocab(&docs, &spec, 1).unwrap();
        assert_eq!(v.features(), ["w2:x y", "w2:y q", "w2:y z"]);
        assert!(v.is_frozen());
        let empty: [Document; 0] = [];
        assert!(build_vocab(&empty, &spec, 2).unwrap().is_empty());
        assert_eq!(build_vocab(&docs, &spec, 0).unwrap_err(), FeatureError::InvalidMinDf);
    }

    #[test]
    fn build_vocab_requires_preprocessing() {
        let spec = NgramSpec::named("bigrams").unwrap();
        let raw = Document::new("r", "some text here");
        assert_eq!(build_vocab([&raw], &spec, 1).unwrap_err(), FeatureError::NotPreprocessed("r".into()));
        let done = preprocess(&raw, &PreprocessConfig::default());
        assert!(build_vocab([&done], &spec, 1).is_ok());
    }

    #[test]
    fn frozen_rejects_insert() {
        let mut v = Vocabulary::new(NgramSpec::named("unigrams").unwrap(), 1).unwrap();
        assert_eq!(v.insert("w1:a").unwrap(), 0);
        assert_eq!(v.insert("w1:a").unwrap(), 0);
        assert!(vectorize_tokens(&toks(&["a"]), &v).is_err());
        v.freeze();
        assert_eq!(v.insert("w1:b"), Err(FeatureError::Frozen));
    }

    #[test]
    fn vectorize_counts() {
        let mut v = Vocabulary::new(NgramSpec::named("unigrams").unwrap(), 1).unwrap();
        v.insert("w1:aa").unwrap();
        v.freeze();
        let x = vectorize(&doc("d", &["aa", "aa"]), &v).unwrap();
        assert_eq!(x, SparseVector::from_pairs([(0, 2)]));
        assert!(vectorize(&doc("d", &["zz"]), &v).unwrap().is_empty());
    }

    #[test]
    fn vocabulary_json_roundtrip() {
        let spec = NgramSpec::named("all").unwrap();
        let v = build_vocab([&doc("1", &["hello", "there", "world"])], &spec, 1).unwrap();
        let json = v.to_json();
        assert!(json.starts_with("{\"spec\":[\"w2\",\"w3\",\"w4\",\"c2\",\"c3\",\"c4\"],\"min_df\":1,\"features\":["));
        let back = Vocabulary::from_json(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.content_hash(), v.content_hash());
        assert_eq!(v.content_hash().len(), 64);
        assert!(Vocabulary::from_json("{\"spec\":[],\"min_df\":1,\"features\":[]}").is_err());
    }
}
