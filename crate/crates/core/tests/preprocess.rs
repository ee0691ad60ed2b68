use harasskit_core::corpus::{dedupe, preprocess, tokenize, Corpus, Document, PreprocessConfig};
use harasskit_testkit::{preprocess_golden, random_text, rng};

#[test]
fn golden_cases() {
    let cases = preprocess_golden();
    assert_eq!(cases.len(), 20);
    for c in cases {
        let d = preprocess(&Document::new("g", c.text.clone()), &PreprocessConfig::default());
        assert_eq!(d.tokens, c.tokens, "{:?}", c.text);
        assert_eq!(d.hashtags, c.hashtags, "{:?}", c.text);
    }
}

#[test]
fn idempotent_on_random_strings() {
    let cfg = PreprocessConfig::default();
    let mut r = rng(1000);
    for _ in 0..1000 {
        let text = random_text(&mut r);
        let once = preprocess(&Document::new("x", text.clone()), &cfg);
        let twice = preprocess(&once, &cfg);
        assert_eq!(once, twice, "{text:?}");
        assert_eq!(tokenize(&once.joined_tokens(), cfg.min_token_chars), once.tokens, "{text:?}");
    }
}

#[test]
fn dedupe_keeps_first_of_each_token_sequence() {
    let cfg = PreprocessConfig::default();
    let docs = ["Same words here", "same WORDS here http://x.co", "other words", "same words here"]
        .iter()
        .enumerate()
        .map(|(i, t)| preprocess(&Document::new(format!("d{i}"), *t), &cfg))
        .collect();
    let out = dedupe(&Corpus::new(docs).unwrap()).unwrap();
    let ids: Vec<&str> = out.documents.iter().map(|d| d.id.as_str()).collect();
    assert_eq!(ids, ["d0", "d2"]);
    assert!(dedupe(&Corpus::new(vec![Document::new("raw", "text")]).unwrap()).is_err());
}
