use harasskit_core::topics::{default_alpha, fit_lda_with, top_terms, LdaConfig, DEFAULT_BETA};
use harasskit_testkit::{block_purity, two_block_corpus};

#[test]
fn two_blocks_are_recovered() {
    let docs = two_block_corpus(11);
    let cfg = LdaConfig { topics: 2, alpha: default_alpha(2), beta: DEFAULT_BETA, sweeps: 200, seed: 5 };
    let mut sweeps = 0;
    let model = fit_lda_with(&docs, &cfg, |_, m| {
        assert!(m.counts_consistent());
        assert_eq!(m.topic_total.iter().map(|&t| t as usize).sum::<usize>(), 4000);
        sweeps += 1;
    })
    .unwrap();
    assert_eq!(sweeps, 200);
    let mut leading = Vec::new();
    for k in 0..2 {
        let terms: Vec<String> = top_terms(&model, k, 10).unwrap().into_iter().map(|(t, _)| t).collect();
        assert!(block_purity(&terms) >= 0.9, "topic {k}: {terms:?}");
        leading.push(terms[0].chars().next().unwrap());
    }
    assert_ne!(leading[0], leading[1]);
}
