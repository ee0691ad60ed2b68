//! Fleiss' kappa over a fixed panel of raters, and category merging for
//! comparing agreement before and after collapsing a taxonomy.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AgreementError {
    #[error("need at least 2 categories, got {0}")]
    TooFewCategories(usize),
    #[error("need at least 2 raters per item, got {0}")]
    TooFewRaters(u32),
    #[error("rating matrix has no items")]
    NoItems,
    #[error("items do not all have {expected} raters: {offenders:?}")]
    UnequalRaters { expected: u32, offenders: Vec<String> },
    #[error("rater {rater:?} rated item {item:?} more than once")]
    DuplicateRating { item: String, rater: String },
    #[error("category {category} outside 1..={k}")]
    CategoryOutOfRange { category: u32, k: usize },
    #[error("row {row} has {got} columns, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("mapping has no target for category {0}")]
    PartialMapping(u32),
    #[error("kappa undefined: expected agreement is 1 (p_bar = {}, p_e = {})", .0.p_bar, .0.p_e)]
    Undefined(Box<KappaResult>),
    #[error("label csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, AgreementError>;

/// One rating: rater `rater` put item `item` in (1-based) `category`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub item_id: String,
    pub rater_id: String,
    pub category: u32,
}

impl LabelRecord {
    pub fn new(item: impl Into<String>, rater: impl Into<String>, category: u32) -> Self {
        LabelRecord { item_id: item.into(), rater_id: rater.into(), category }
    }
}

/// Items × categories table of rater counts; every row sums to `raters`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingMatrix {
    items: Vec<String>,
    counts: Vec<Vec<u32>>,
    raters: u32,
}

impl RatingMatrix {
    pub fn new(counts: Vec<Vec<u32>>) -> Result<Self> {
        let items = (0..counts.len()).map(|i| i.to_string()).collect();
        RatingMatrix::with_items(items, counts)
    }

    pub fn with_items(items: Vec<String>, counts: Vec<Vec<u32>>) -> Result<Self> {
        let first = counts.first().ok_or(AgreementError::NoItems)?;
        let k = first.len();
        if k < 2 {
            return Err(AgreementError::TooFewCategories(k));
        }
        if let Some((row, r)) = counts.iter().enumerate().find(|(_, r)| r.len() != k) {
            return Err(AgreementError::RaggedRow { row, got: r.len(), expected: k });
        }
        let m: u32 = first.iter().sum();
        let offenders: Vec<String> = counts
            .iter()
            .zip(&items)
            .filter(|(r, _)| r.iter().sum::<u32>() != m)
            .map(|(_, id)| id.clone())
            .collect();
        if !offenders.is_empty() {
            return Err(AgreementError::UnequalRaters { expected: m, offenders });
        }
        if m < 2 {
            return Err(AgreementError::TooFewRaters(m));
        }
        Ok(RatingMatrix { items, counts, raters: m })
    }

    /// Builds the table from individual ratings. Items are ordered by id and
    /// `raters` is the count shared by every item.
    pub fn from_labels(records: &[LabelRecord], num_categories: usize) -> Result<Self> {
        if num_categories < 2 {
            return Err(AgreementError::TooFewCategories(num_categories));
        }
        let mut seen = HashSet::new();
        let mut rows: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
        for r in records {
            if r.category == 0 || r.category as usize > num_categories {
                return Err(AgreementError::CategoryOutOfRange { category: r.category, k: num_categories });
            }
            if !seen.insert((r.item_id.as_str(), r.rater_id.as_str())) {
                return Err(AgreementError::DuplicateRating {
                    item: r.item_id.clone(),
                    rater: r.rater_id.clone(),
                });
            }
            rows.entry(&r.item_id).or_insert_with(|| vec![0; num_categories])[r.category as usize - 1] += 1;
        }
        if rows.is_empty() {
            return Err(AgreementError::NoItems);
        }
        // the most common per-item count is taken as the panel size
        let mut freq: BTreeMap<u32, usize> = BTreeMap::new();
        for row in rows.values() {
            *freq.entry(row.iter().sum()).or_insert(0) += 1;
        }
        let m = freq.iter().max_by_key(|(&m, &f)| (f, m)).map(|(&m, _)| m).unwrap_or(0);
        let offenders: Vec<String> = rows
            .iter()
            .filter(|(_, r)| r.iter().sum::<u32>() != m)
            .map(|(id, _)| id.to_string())
            .collect();
        if !offenders.is_empty() {
            return Err(AgreementError::UnequalRaters { expected: m, offenders });
        }
        let (items, counts) = rows.into_iter().map(|(id, r)| (id.to_string(), r)).unzip();
        RatingMatrix::with_items(items, counts)
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }

    pub fn raters(&self) -> u32 {
        self.raters
    }

    pub fn num_items(&self) -> usize {
        self.counts.len()
    }

    pub fn num_categories(&self) -> usize {
        self.counts[0].len()
    }

    /// Sums columns into new categories. `mapping` sends each old 1-based
    /// category to a new one in `1..=new_k` and must cover every column.
    pub fn merge_categories(&self, mapping: &BTreeMap<u32, u32>, new_k: usize) -> Result<RatingMatrix> {
        if new_k < 2 {
            return Err(AgreementError::TooFewCategories(new_k));
        }
        let mut targets = Vec::with_capacity(self.num_categories());
        for old in 1..=self.num_categories() as u32 {
            let new = *mapping.get(&old).ok_or(AgreementError::PartialMapping(old))?;
            if new == 0 || new as usize > new_k {
                return Err(AgreementError::CategoryOutOfRange { category: new, k: new_k });
            }
            targets.push(new as usize - 1);
        }
        let counts = self
            .counts
            .iter()
            .map(|row| {
                let mut merged = vec![0; new_k];
                for (&c, &t) in row.iter().zip(&targets) {
                    merged[t] += c;
                }
                merged
            })
            .collect();
        Ok(RatingMatrix { items: self.items.clone(), counts, raters: self.raters })
    }

    pub fn permute_columns(&self, order: &[usize]) -> RatingMatrix {
        let counts = self.counts.iter().map(|row| order.iter().map(|&j| row[j]).collect()).collect();
        RatingMatrix { items: self.items.clone(), counts, raters: self.raters }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub p_bar: f64,
    pub p_e: f64,
    pub per_item: Vec<f64>,
}

/// Fleiss' kappa.
///
/// Numerators and denominators are accumulated as integers so the only
/// rounding happens in the final divisions: with `S = Σ_i (Σ_j n_ij² − m)`,
/// `B = n·m·(m−1)`, `C = Σ_j (Σ_i n_ij)²` and `D = (n·m)²`, `P̄ = S/B`,
/// `P̄_e = C/D` and `κ = (S·D − C·B) / (B·(D − C))`.
pub fn fleiss_kappa(matrix: &RatingMatrix) -> Result<KappaResult> {
    let n = matrix.num_items() as i128;
    let m = matrix.raters as i128;
    let k = matrix.num_categories();

    let mut col = vec![0i128; k];
    let mut s = 0i128;
    let mut per_item = Vec::with_capacity(matrix.num_items());
    for row in &matrix.counts {
        let sq: i128 = row.iter().map(|&c| (c as i128) * (c as i128)).sum();
        per_item.push((sq - m) as f64 / (m * (m - 1)) as f64);
        s += sq - m;
        for (acc, &c) in col.iter_mut().zip(row) {
            *acc += c as i128;
        }
    }
    let b = n * m * (m - 1);
    let c: i128 = col.iter().map(|x| x * x).sum();
    let d = (n * m) * (n * m);

    let p_bar = s as f64 / b as f64;
    let p_e = c as f64 / d as f64;
    if c == d {
        return Err(AgreementError::Undefined(Box::new(KappaResult {
            kappa: f64::NAN,
            p_bar,
            p_e,
            per_item,
        })));
    }
    let kappa = (s * d - c * b) as f64 / (b * (d - c)) as f64;
    Ok(KappaResult { kappa, p_bar, p_e, per_item })
}

/// Parses `item_id,rater_id,category` CSV. A header row is optional.
pub fn read_label_csv<R: Read>(reader: R) -> Result<Vec<LabelRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| AgreementError::Csv { line, message: e.to_string() })?;
        if rec.len() != 3 {
            return Err(AgreementError::Csv { line, message: format!("expected 3 fields, found {}", rec.len()) });
        }
        if line == 1 && &rec[0] == "item_id" {
            continue;
        }
        let category = rec[2].parse().map_err(|_| AgreementError::Csv {
            line,
            message: format!("category {:?} is not an integer", &rec[2]),
        })?;
        out.push(LabelRecord::new(&rec[0], &rec[1], category));
    }
    Ok(out)
}

/// Writes label records as CSV with an `item_id,rater_id,category` header.
pub fn write_label_csv<W: std::io::Write>(records: &[LabelRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["item_id", "rater_id", "category"])?;
    for r in records {
        w.write_record([r.item_id.as_str(), r.rater_id.as_str(), &r.category.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Largest-support constant panel: keeps only the items whose rating count
/// is the most common count `>= 2` (ties prefer the larger panel).
pub fn constant_panel_subset(records: &[LabelRecord]) -> Vec<LabelRecord> {
    let mut per_item: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        per_item.entry(&r.item_id).or_default().insert(&r.rater_id);
    }
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for raters in per_item.values() {
        if raters.len() >= 2 {
            *freq.entry(raters.len()).or_insert(0) += 1;
        }
    }
    let Some((&m, _)) = freq.iter().max_by_key(|(&m, &f)| (f, m)) else {
        return Vec::new();
    };
    records.iter().filter(|r| per_item[r.item_id.as_str()].len() == m).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::legacy_code_mapping;

    #[test]
    fn toy_kappa_is_exact() {
        let m = RatingMatrix::new(vec![vec![2, 1], vec![0, 3]]).unwrap();
        let r = fleiss_kappa(&m).unwrap();
        assert_eq!(r.kappa, 0.25);
        assert!((r.p_bar - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.p_e - 5.0 / 9.0).abs() < 1e-15);
        assert!((r.per_item[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_item[1], 1.0);
    }

    #[test]
    fn perfect_agreement() {
        let m = RatingMatrix::new(vec![vec![4, 0, 0], vec![0, 4, 0], vec![0, 0, 4]]).unwrap();
        assert_eq!(fleiss_kappa(&m).unwrap().kappa, 1.0);
    }

    #[test]
    fn single_category_is_undefined() {
        let m = RatingMatrix::new(vec![vec![3, 0], vec![3, 0]]).unwrap();
        match fleiss_kappa(&m) {
            Err(AgreementError::Undefined(r)) => {
                assert_eq!(r.p_bar, 1.0);
                assert_eq!(r.p_e, 1.0);
                assert_eq!(r.per_item, vec![1.0, 1.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn from_labels_validates_panel() {
        let mut recs = Vec::new();
        for item in 0..3 {
            for rater in 0..3 {
                recs.push(LabelRecord::new(format!("i{item}"), format!("r{rater}"), 1 + (item + rater) % 2));
            }
        }
        let m = RatingMatrix::from_labels(&recs, 2).unwrap();
        assert_eq!(m.raters(), 3);
        assert_eq!(m.items(), ["i0", "i1", "i2"]);

        let mut short = recs.clone();
        short.retain(|r| !(r.item_id == "i1" && r.rater_id == "r2"));
        match RatingMatrix::from_labels(&short, 2) {
            Err(AgreementError::UnequalRaters { expected: 3, offenders }) => assert_eq!(offenders, ["i1"]),
            other => panic!("unexpected {other:?}"),
        }

        let mut dup = recs.clone();
        dup.push(LabelRecord::new("i0", "r0", 2));
        assert!(matches!(RatingMatrix::from_labels(&dup, 2), Err(AgreementError::DuplicateRating { .. })));

        let bad = vec![LabelRecord::new("i", "r", 3)];
        assert!(matches!(RatingMatrix::from_labels(&bad, 2), Err(AgreementError::CategoryOutOfRange { .. })));
    }

    #[test]
    fn pilot_shaped_matrix_merges_to_five() {
        let mut recs = Vec::new();
        for item in 0..50u32 {
            for rater in 0..13u32 {
                recs.push(LabelRecord::new(format!("t{item:02}"), format!("r{rater}"), 1 + (item * 7 + rater * 3) % 9));
            }
        }
        let m = RatingMatrix::from_labels(&recs, 9).unwrap();
        assert_eq!((m.num_items(), m.num_categories(), m.raters()), (50, 9, 13));
        let mapping: BTreeMap<u32, u32> = legacy_code_mapping().into_iter().collect();
        let merged = m.merge_categories(&mapping, 5).unwrap();
        assert_eq!(merged.num_categories(), 5);
        assert!(merged.counts().iter().all(|r| r.iter().sum::<u32>() == 13));
        assert!(merged.counts().iter().all(|r| r[4] == 0));
    }

    #[test]
    fn merge_raises_item_agreement() {
        let m = RatingMatrix::new(vec![vec![2, 1]]).unwrap();
        assert!((fleiss_kappa(&m).unwrap().per_item[0] - 1.0 / 3.0).abs() < 1e-15);
        let merged = m
            .merge_categories(&BTreeMap::from([(1, 1), (2, 1)]), 2)
            .unwrap();
        assert_eq!(merged.counts(), [vec![3, 0]]);
        match fleiss_kappa(&merged) {
            Err(AgreementError::Undefined(r)) => assert_eq!(r.per_item, vec![1.0]),
            other => panic!("unexpected {other:?}"),
        }
        let identity: BTreeMap<u32, u32> = [(1, 1), (2, 2)].into();
        assert_eq!(m.merge_categories(&identity, 2).unwrap(), m);
        assert_eq!(
            m.merge_categories(&BTreeMap::from([(1, 1)]), 2),
            Err(AgreementError::PartialMapping(2))
        );
    }

    #[test]
    fn label_csv_roundtrip() {
        let recs = vec![LabelRecord::new("a", "r1", 1), LabelRecord::new("a", "r2", 2)];
        let mut buf = Vec::new();
        write_label_csv(&recs, &mut buf).unwrap();
        assert_eq!(read_label_csv(buf.as_slice()).unwrap(), recs);
        assert_eq!(read_label_csv("x,y,1\n".as_bytes()).unwrap(), vec![LabelRecord::new("x", "y", 1)]);
        assert!(read_label_csv("x,y,z\n".as_bytes()).is_err());
    }

    #[test]
    fn constant_panel_keeps_modal_count() {
        let recs = vec![
            LabelRecord::new("a", "r1", 1),
            LabelRecord::new("a", "r2", 1),
            LabelRecord::new("b", "r1", 2),
            LabelRecord::new("b", "r2", 2),
            LabelRecord::new("c", "r1", 2),
            LabelRecord::new("d", "r1", 2),
            LabelRecord::new("d", "r2", 2),
            LabelRecord::new("d", "r3", 2),
        ];
        let sub = constant_panel_subset(&recs);
        let items: BTreeSet<&str> = sub.iter().map(|r| r.item_id.as_str()).collect();
        assert_eq!(items, BTreeSet::from(["a", "b"]));
        assert!(constant_panel_subset(&recs[4..5]).is_empty());
    }
}
