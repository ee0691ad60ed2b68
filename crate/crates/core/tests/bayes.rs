use harasskit_core::bayes::{train_gaussian, train_multinomial, ModelFile, DEFAULT_ALPHA};
use harasskit_core::corpus::Category;
use harasskit_core::features::SparseVector;
use harasskit_testkit::{all_queries, all_small_nb_corpora, nb_posterior, rng};
use proptest::prelude::*;
use rand::Rng;

fn sparse(row: &[u32]) -> SparseVector {
    SparseVector::from_pairs(row.iter().copied().enumerate())
}

#[test]
fn posteriors_match_exhaustive_enumeration() {
    let cases = all_small_nb_corpora();
    let mut compared = 0usize;
    let mut worst = 0.0f64;
    for case in &cases {
        let x: Vec<SparseVector> = case.x.iter().map(|r| sparse(r)).collect();
        let nb = train_multinomial(&x, &case.y, case.features(), DEFAULT_ALPHA).unwrap();
        for q in all_queries(case.features()) {
            let got = nb.predict_log_proba(&sparse(&q)).unwrap();
            let want = nb_posterior(case, &q, DEFAULT_ALPHA);
            assert_eq!(got.len(), want.len());
            for ((gc, gl), (wc, wp)) in got.iter().zip(&want) {
                assert_eq!(gc, wc);
                worst = worst.max((gl.exp() - wp).abs());
            }
            compared += 1;
        }
    }
    println!("{} corpora, {compared} posteriors, max abs diff {worst:.2e}", cases.len());
    assert!(worst < 1e-12);
}

#[test]
fn equal_scores_pick_lowest_code() {
    let x = vec![sparse(&[1, 0]), sparse(&[1, 0])];
    let y = vec![Category::NotSexist, Category::InformationThreat];
    let nb = train_multinomial(&x, &y, 2, 1.0).unwrap();
    assert_eq!(nb.predict(&sparse(&[3, 0])).unwrap(), Category::InformationThreat);
}

#[test]
fn model_json_carries_vocab_hash() {
    let x = vec![sparse(&[2, 0, 1]), sparse(&[0, 1, 1])];
    let nb = train_multinomial(&x, &[Category::IndirectHarassment, Category::SexualHarassment], 3, 1.0).unwrap();
    let file = ModelFile::from_json(&nb.to_json("abc123")).unwrap();
    assert_eq!(file.vocab_hash.as_deref(), Some("abc123"));
    assert!(ModelFile::from_json(&nb.to_json("h").replace("\"version\":1", "\"version\":9")).is_err());
}

proptest! {
    #[test]
    fn posteriors_are_normalized(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (n, f) = (r.gen_range(1..12), r.gen_range(1..8));
        let x: Vec<SparseVector> = (0..n).map(|_| sparse(&(0..f).map(|_| r.gen_range(0..4)).collect::<Vec<_>>())).collect();
        let y: Vec<Category> = (0..n).map(|_| Category::ALL[r.gen_range(0..5)]).collect();
        let nb = train_multinomial(&x, &y, f, 1.0).unwrap();
        let q = sparse(&(0..f).map(|_| r.gen_range(0..6)).collect::<Vec<_>>());
        let total: f64 = nb.predict_log_proba(&q).unwrap().iter().map(|(_, l)| l.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_posteriors_are_finite(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(2..10);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<Category> = (0..n).map(|i| Category::ALL[i % 2]).collect();
        let nb = train_gaussian(&x, &y, 1e-9).unwrap();
        let probs = nb.predict_log_proba(&[0.1, -0.3, 5.0]).unwrap();
        prop_assert!(probs.iter().all(|(_, l)| l.is_finite()));
    }
}
