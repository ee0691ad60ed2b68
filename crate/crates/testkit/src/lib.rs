//! Independent reference implementations and fixtures for the test suites.
//!
//! Nothing here calls into the code it checks: the kappa, naive Bayes and
//! LSTM references are written from the textbook definitions, and the
//! gradient checker only evaluates losses.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use harasskit_core::corpus::{preprocess, Category, Corpus, Document, PreprocessConfig};
use harasskit_core::crowd::GoldSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Runs one acceptance criterion, prints a single PASS/FAIL line and panics
/// on failure. The check returns a short detail string or a failure reason.
pub fn criterion<F>(name: &str, budget: Duration, check: F)
where
    F: FnOnce() -> Result<String, String>,
{
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check));
    let elapsed = start.elapsed();
    let outcome = match outcome {
        Ok(Ok(detail)) if elapsed <= budget => Ok(detail),
        Ok(Ok(detail)) => Err(format!("{detail}; took {elapsed:.2?}, budget {budget:.0?}")),
        Ok(Err(reason)) => Err(reason),
        Err(panic) => Err(panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    // written past the test harness's capture so the verdicts always show
    let mut out = std::io::stdout().lock();
    match outcome {
        Ok(detail) => {
            let _ = writeln!(out, "PASS  {name}  [{elapsed:.2?}] {detail}");
        }
        Err(reason) => {
            let _ = writeln!(out, "FAIL  {name}  [{elapsed:.2?}] {reason}");
            drop(out);
            panic!("criterion failed: {name}: {reason}");
        }
    }
}

/// Turns a boolean into a criterion result.
pub fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- kappa

/// Fleiss' kappa by explicit pair counting: for each item, the fraction of
/// ordered rater pairs that agree; chance agreement from the pooled ratings.
/// Returns `(p_bar, p_e, kappa)`.
pub fn brute_force_kappa(counts: &[Vec<u32>]) -> (f64, f64, f64) {
    let mut p_items = Vec::new();
    let mut pooled: Vec<usize> = Vec::new();
    for row in counts {
        let ratings: Vec<usize> = row.iter().enumerate().flat_map(|(j, &c)| std::iter::repeat_n(j, c as usize)).collect();
        let m = ratings.len();
        let mut agree = 0usize;
        for a in 0..m {
            for b in 0..m {
                if a != b && ratings[a] == ratings[b] {
                    agree += 1;
                }
            }
        }
        p_items.push(agree as f64 / (m * (m - 1)) as f64);
        pooled.extend(ratings);
    }
    let p_bar = p_items.iter().sum::<f64>() / p_items.len() as f64;
    let k = counts[0].len();
    let total = pooled.len() as f64;
    let p_e: f64 = (0..k)
        .map(|j| {
            let p = pooled.iter().filter(|&&r| r == j).count() as f64 / total;
            p * p
        })
        .sum();
    (p_bar, p_e, (p_bar - p_e) / (1.0 - p_e))
}

/// A random complete rating matrix with `n <= max_n`, `2 <= m <= max_m` and
/// `2 <= k <= max_k`.
pub fn random_counts(rng: &mut impl Rng, max_n: usize, max_m: u32, max_k: usize) -> Vec<Vec<u32>> {
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(2..=max_m);
    let k = rng.gen_range(2..=max_k);
    (0..n)
        .map(|_| {
            let mut row = vec![0u32; k];
            for _ in 0..m {
                row[rng.gen_range(0..k)] += 1;
            }
            row
        })
        .collect()
}

/// Mean observed agreement straight from the per-item formula.
pub fn observed_agreement(counts: &[Vec<u32>]) -> f64 {
    let per: Vec<f64> = counts
        .iter()
        .map(|row| {
            let m: u32 = row.iter().sum();
            let sq: u32 = row.iter().map(|c| c * c).sum();
            (sq - m) as f64 / (m * (m - 1)) as f64
        })
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

/// A random surjective merge of categories `1..=k` onto `1..=new_k`, `2 <= new_k <= k`.
pub fn random_merge(rng: &mut impl Rng, k: usize) -> (BTreeMap<u32, u32>, usize) {
    let new_k = rng.gen_range(2..=k);
    let mut targets: Vec<u32> = (1..=new_k as u32).collect();
    while targets.len() < k {
        targets.push(rng.gen_range(1..=new_k as u32));
    }
    targets.shuffle(rng);
    ((1..=k as u32).zip(targets).collect(), new_k)
}

// ---------------------------------------------------------- naive Bayes

#[derive(Debug, Clone)]
pub struct NbCase {
    /// Dense count rows, one per document.
    pub x: Vec<Vec<u32>>,
    pub y: Vec<Category>,
}

impl NbCase {
    pub fn features(&self) -> usize {
        self.x[0].len()
    }
}

/// All label patterns of `d` documents up to renaming of classes, written
/// with the first classes in code order.
fn label_patterns(d: usize) -> Vec<Vec<Category>> {
    fn grow(prefix: Vec<usize>, d: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == d {
            out.push(prefix);
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for c in 0..=next {
            let mut p = prefix.clone();
            p.push(c);
            grow(p, d, out);
        }
    }
    let mut out = Vec::new();
    grow(Vec::new(), d, &mut out);
    out.into_iter().map(|p| p.into_iter().map(|i| Category::ALL[i]).collect()).collect()
}

fn all_count_vectors(len: usize, max: u32) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..=max).map(move |c| {
                    let mut v = v.clone();
                    v.push(c);
                    v
                })
            })
            .collect();
    }
    out
}

/// Every corpus of 1..=3 documents over 1..=3 features with counts in 0..=2,
/// under every label pattern.
pub fn all_small_nb_corpora() -> Vec<NbCase> {
    let mut cases = Vec::new();
    for d in 1..=3 {
        for f in 1..=3 {
            let patterns = label_patterns(d);
            for flat in all_count_vectors(d * f, 2) {
                let x: Vec<Vec<u32>> = flat.chunks(f).map(|c| c.to_vec()).collect();
                for y in &patterns {
                    cases.push(NbCase { x: x.clone(), y: y.clone() });
                }
            }
        }
    }
    cases
}

/// Every query vector over `f` features with counts in 0..=2.
pub fn all_queries(f: usize) -> Vec<Vec<u32>> {
    all_count_vectors(f, 2)
}

/// Posterior over the classes present in training, by direct products of
/// smoothed relative frequencies (no logarithms).
pub fn nb_posterior(case: &NbCase, query: &[u32], alpha: f64) -> Vec<(Category, f64)> {
    let f = case.features();
    let classes: Vec<Category> = Category::ALL.iter().copied().filter(|c| case.y.contains(c)).collect();
    let n = case.y.len() as f64;
    let joint: Vec<f64> = classes
        .iter()
        .map(|&c| {
            let rows: Vec<&Vec<u32>> = case.x.iter().zip(&case.y).filter(|(_, y)| **y == c).map(|(r, _)| r).collect();
            let prior = rows.len() as f64 / n;
            let per_feature: Vec<f64> = (0..f).map(|j| rows.iter().map(|r| r[j] as f64).sum::<f64>()).collect();
            let total: f64 = per_feature.iter().sum();
            let mut p = prior;
            for j in 0..f {
                let theta = (per_feature[j] + alpha) / (total + alpha * f as f64);
                for _ in 0..query[j] {
                    p *= theta;
                }
            }
            p
        })
        .collect();
    let z: f64 = joint.iter().sum();
    classes.into_iter().zip(joint.into_iter().map(|p| p / z)).collect()
}

// ------------------------------------------------------------ gradients

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so entries where both gradients
/// are essentially zero compare on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub max_abs_gradient: f64,
}

/// Compares `analytic[t][i]` with a central difference of `loss` over
/// parameter `i` of tensor `t`, where `slot(p, t)` exposes tensor `t`.
pub fn check_gradient<P: Clone>(
    params: &P,
    analytic: &[Vec<f64>],
    slot: impl Fn(&mut P, usize) -> &mut [f64],
    loss: impl Fn(&P) -> f64,
) -> GradCheck {
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut max_abs = 0.0f64;
    let mut p = params.clone();
    for (t, grad) in analytic.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let orig = slot(&mut p, t)[i];
            slot(&mut p, t)[i] = orig + FD_STEP;
            let up = loss(&p);
            slot(&mut p, t)[i] = orig - FD_STEP;
            let down = loss(&p);
            slot(&mut p, t)[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(a, numeric));
            max_abs = max_abs.max(a.abs());
            checked += 1;
        }
    }
    GradCheck { max_rel_error: worst, checked, max_abs_gradient: max_abs }
}

// ----------------------------------------------------------------- LSTM

/// Plain-array LSTM weights for the reference recurrence. Gate blocks are
/// input, forget, candidate, output; `w[gate][unit][e]`, `u[gate][unit][h]`.
pub struct RefLstm {
    pub embed: Vec<Vec<f64>>,
    pub w: [Vec<Vec<f64>>; 4],
    pub u: [Vec<Vec<f64>>; 4],
    pub b: [Vec<f64>; 4],
    pub w_out: Vec<Vec<f64>>,
    pub b_out: Vec<f64>,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl RefLstm {
    /// Builds the reference from row-major blocks laid out as 4H×E, 4H×H, 4H,
    /// 5×H and 5, plus an embedding table with one row per id.
    pub fn from_flat(embed: &[f64], w: &[f64], u: &[f64], b: &[f64], w_out: &[f64], b_out: &[f64], e: usize, h: usize) -> Self {
        let rows = |data: &[f64], cols: usize| -> Vec<Vec<f64>> { data.chunks(cols).map(|r| r.to_vec()).collect() };
        let gate_rows = |data: &[f64], cols: usize, g: usize| rows(&data[g * h * cols..(g + 1) * h * cols], cols);
        RefLstm {
            embed: rows(embed, e),
            w: [0, 1, 2, 3].map(|g| gate_rows(w, e, g)),
            u: [0, 1, 2, 3].map(|g| gate_rows(u, h, g)),
            b: [0, 1, 2, 3].map(|g| b[g * h..(g + 1) * h].to_vec()),
            w_out: rows(w_out, h),
            b_out: b_out.to_vec(),
        }
    }

    /// Class probabilities for one sequence; id 0 steps are skipped.
    pub fn probs(&self, seq: &[usize]) -> Vec<f64> {
        let hd = self.b[0].len();
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for &id in seq.iter().filter(|&&id| id != 0) {
            let x = &self.embed[id];
            let pre = |g: usize, j: usize| -> f64 {
                let mut s = self.b[g][j];
                for (k, xv) in x.iter().enumerate() {
                    s += self.w[g][j][k] * xv;
                }
                for (k, hv) in h.iter().enumerate() {
                    s += self.u[g][j][k] * hv;
                }
                s
            };
            let mut new_h = vec![0.0; hd];
            let mut new_c = vec![0.0; hd];
            for j in 0..hd {
                let i_gate = logistic(pre(0, j));
                let f_gate = logistic(pre(1, j));
                let cand = pre(2, j).tanh();
                let o_gate = logistic(pre(3, j));
                new_c[j] = f_gate * c[j] + i_gate * cand;
                new_h[j] = o_gate * new_c[j].tanh();
            }
            h = new_h;
            c = new_c;
        }
        let logits: Vec<f64> =
            self.w_out.iter().zip(&self.b_out).map(|(row, b)| b + row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>()).collect();
        let exps: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }
}

/// Thirty documents, six per class. Each has 8-14 tokens from a two-word
/// class vocabulary plus one token from a shared three-word noise pool.
pub fn lstm_toy_corpus() -> (Vec<Vec<String>>, Vec<Category>) {
    let mut r = rng(3);
    let mut docs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..30 {
        let c = i % 5;
        let n = r.gen_range(8..=14);
        let mut d: Vec<String> = (0..n).map(|_| format!("c{c}w{}", r.gen_range(0..2))).collect();
        let at = r.gen_range(0..=d.len());
        d.insert(at, format!("n{}", r.gen_range(0..3)));
        docs.push(d);
        labels.push(Category::ALL[c]);
    }
    (docs, labels)
}

// -------------------------------------------------------------- corpora

const NOISE_WORDS: [&str; 40] = [
    "today", "people", "think", "always", "really", "going", "never", "would", "could", "should", "about", "their",
    "there", "these", "those", "where", "which", "while", "after", "again", "still", "every", "other", "right",
    "maybe", "world", "thing", "house", "night", "phone", "money", "water", "music", "movie", "party", "round",
    "table", "chair", "paper", "green",
];

/// One signature keyword per class, chosen to share no character trigram.
pub const SIGNATURES: [&str; 5] = ["zorblax", "quimbly", "fenwick", "drosnar", "taplev"];

/// `n` labeled, preprocessed documents cycling through the five classes.
/// Each is its class keyword among 5-10 shared noise words.
pub fn separable_corpus(n: usize, seed: u64) -> Corpus {
    let mut r = rng(seed);
    let docs = (0..n)
        .map(|i| {
            let c = i % 5;
            let len = r.gen_range(5..=10);
            let mut words: Vec<&str> = (0..len).map(|_| *NOISE_WORDS.choose(&mut r).expect("non-empty")).collect();
            let at = r.gen_range(0..=words.len());
            words.insert(at, SIGNATURES[c]);
            let doc = Document::new(format!("s{i:04}"), words.join(" ")).with_label(Category::ALL[c]);
            preprocess(&doc, &PreprocessConfig::default())
        })
        .collect();
    Corpus::new(docs).expect("unique ids")
}

/// A labeled corpus for annotation studies: `n_regular` items followed by
/// `n_gold` gold questions ("s0000".. ids, gold at the end).
pub fn study_fixture(n_regular: usize, n_gold: usize) -> (Corpus, GoldSet) {
    let corpus = separable_corpus(n_regular + n_gold, 11);
    let gold = GoldSet::new(
        corpus.documents[n_regular..].iter().map(|d| (d.id.clone(), d.label.expect("fixture docs are labeled"))),
    );
    (corpus, gold)
}

/// Deterministic answer of scripted rater `rater`: rater 0 is always right,
/// rater `r > 0` misses roughly one item in `r + 2`.
pub fn scripted_label(truth: Category, rater: usize, item_id: &str) -> Category {
    let h: usize = item_id.bytes().map(usize::from).sum::<usize>() * 31 + rater * 7;
    if rater > 0 && h.is_multiple_of(rater + 2) {
        Category::from_index((truth.index() + 1) % Category::COUNT).expect("in range")
    } else {
        truth
    }
}

/// Two blocks of 100 documents over disjoint 20-word vocabularies
/// (`a00..a19`, `b00..b19`), 20 tokens each, shuffled together.
pub fn two_block_corpus(seed: u64) -> Vec<Vec<String>> {
    let mut r = rng(seed);
    let mut docs: Vec<Vec<String>> = ["a", "b"]
        .iter()
        .flat_map(|block| (0..100).map(move |_| *block).collect::<Vec<_>>())
        .map(|block| (0..20).map(|_| format!("{block}{:02}", r.gen_range(0..20))).collect())
        .collect();
    docs.shuffle(&mut r);
    docs
}

/// Fraction of terms that belong to the more common block.
pub fn block_purity(terms: &[String]) -> f64 {
    let a = terms.iter().filter(|t| t.starts_with('a')).count();
    a.max(terms.len() - a) as f64 / terms.len() as f64
}

// ------------------------------------------------------- preprocessing

#[derive(Debug, Clone, Deserialize)]
pub struct GoldenCase {
    pub text: String,
    pub tokens: Vec<String>,
    pub hashtags: Vec<String>,
}

const GOLDEN: &str = include_str!("../data/preprocess_golden.jsonl");

pub fn preprocess_golden() -> Vec<GoldenCase> {
    GOLDEN.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).expect("golden line parses")).collect()
}

/// Random strings mixing words, hashtags, links, short tokens, punctuation,
/// odd whitespace and non-ASCII letters.
pub fn random_text(r: &mut impl Rng) -> String {
    const PIECES: [&str; 24] = [
        "ok", "is", "a", "Hi", "#ok", "#MKR", "#", "http://t.co/x", "https://ex.org", "www.site.com", "WOMEN",
        "can't", "drive", "İstanbul", "ÉCOLE", "straße", "!!!", "...", "@user", "are", "…", "ß", "ǅ", "x1",
    ];
    const SPACES: [&str; 5] = [" ", "  ", "\t", "\n", "\u{3000}"];
    let n = r.gen_range(0..12);
    let mut s = String::new();
    for _ in 0..n {
        if r.gen_bool(0.3) {
            let len = r.gen_range(1..6);
            s.extend((0..len).map(|_| r.gen_range(' '..='~')));
        } else {
            s.push_str(PIECES.choose(r).expect("non-empty"));
        }
        s.push_str(SPACES.choose(r).expect("non-empty"));
    }
    s
}
