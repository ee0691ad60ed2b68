use harasskit_core::corpus::Category;
use harasskit_core::neural::{
    lstm_forward, lstm_gradients, lstm_loss, neg_sampling_gradient, neg_sampling_loss, pvdbow_examples,
    skipgram_examples, LstmParams, Matrix, NegSamplingExample, NoiseSampler, SgdConfig,
};
use harasskit_testkit::{check_gradient, rng, RefLstm};

type Pair = (Matrix, Matrix);

fn pair_slot(p: &mut Pair, t: usize) -> &mut [f64] {
    if t == 0 {
        &mut p.0.data
    } else {
        &mut p.1.data
    }
}

fn check_neg_sampling(params: &Pair, examples: &[NegSamplingExample]) -> f64 {
    let (gi, go) = neg_sampling_gradient(&params.0, &params.1, examples);
    let r = check_gradient(params, &[gi.data, go.data], pair_slot, |p| neg_sampling_loss(&p.0, &p.1, examples));
    println!("checked {} entries, max rel error {:.3e}", r.checked, r.max_rel_error);
    r.max_rel_error
}

#[test]
fn skipgram_gradient_matches_finite_differences() {
    let mut r = rng(21);
    let cfg = SgdConfig { dim: 4, negatives: 3, window: 2, ..Default::default() };
    let noise = NoiseSampler::new(&[3, 2, 1]).unwrap();
    let docs = vec![vec![0, 1, 2, 1], vec![2, 0, 0]];
    let examples = skipgram_examples(&docs, &cfg, &noise, &mut r);
    assert!(!examples.is_empty());
    let params = (Matrix::uniform(3, 4, 0.8, &mut r), Matrix::uniform(3, 4, 0.8, &mut r));
    assert!(check_neg_sampling(&params, &examples) < 1e-4);
}

#[test]
fn pvdbow_gradient_matches_finite_differences() {
    let mut r = rng(22);
    let cfg = SgdConfig { dim: 4, negatives: 3, ..Default::default() };
    let noise = NoiseSampler::new(&[2, 2, 1, 4]).unwrap();
    let docs = vec![vec![0, 1, 3], vec![2, 3], vec![1]];
    let examples = pvdbow_examples(&docs, &cfg, &noise, &mut r);
    let params = (Matrix::uniform(3, 4, 0.8, &mut r), Matrix::uniform(4, 4, 0.8, &mut r));
    assert!(check_neg_sampling(&params, &examples) < 1e-4);
}

fn small_lstm(seed: u64) -> LstmParams {
    LstmParams::init(6, 4, 3, 0.5, seed)
}

fn lstm_slot(p: &mut LstmParams, t: usize) -> &mut [f64] {
    p.tensors_mut().swap_remove(t)
}

#[test]
fn lstm_gradient_matches_finite_differences() {
    let params = small_lstm(5);
    let batch = vec![vec![3, 1, 6, 2, 0, 0], vec![5, 5, 4]];
    let labels = [Category::SexualHarassment, Category::IndirectHarassment];
    let (_, g) = lstm_gradients(&params, &batch, &labels).unwrap();
    let analytic: Vec<Vec<f64>> = g.tensors().iter().map(|t| t.to_vec()).collect();
    let r = check_gradient(&params, &analytic, lstm_slot, |p| lstm_loss(p, &batch, &labels).unwrap());
    println!("lstm: checked {} entries, max rel error {:.3e}", r.checked, r.max_rel_error);
    assert!(r.max_rel_error < 1e-4);
}

fn reference(p: &LstmParams) -> RefLstm {
    RefLstm::from_flat(&p.embed.data, &p.w.data, &p.u.data, &p.b, &p.w_out.data, &p.b_out, 4, 3)
}

#[test]
fn lstm_forward_matches_reference_recurrence() {
    let mut r = rng(8);
    for seed in 0..10 {
        let p = small_lstm(seed);
        let reference = reference(&p);
        let seqs: Vec<Vec<usize>> =
            (0..5).map(|_| (0..rand::Rng::gen_range(&mut r, 0..15)).map(|_| rand::Rng::gen_range(&mut r, 0..=6)).collect()).collect();
        let out = lstm_forward(&p, &seqs).unwrap();
        for (seq, probs) in seqs.iter().zip(&out.probs) {
            let want = reference.probs(seq);
            for k in 0..5 {
                assert!((probs[k] - want[k]).abs() < 1e-10, "seed {seed} seq {seq:?}");
            }
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
