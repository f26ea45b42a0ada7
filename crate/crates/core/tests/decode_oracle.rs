mod common;

use flames_core::decode::{
    beam_search, greedy_decode, rescore, sequential_beam_search, DecodeConfig,
};
use flames_core::model::{TableModel, TokenModel, Vocab};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{brute_force_top_k, enumerate_leaves, random_table_model};

fn abe() -> Vocab {
    Vocab::from_surfaces(&["<s>", "end", "a", "b"], &["end"], "<s>").unwrap()
}

#[test]
fn small_tree_top_two() {
    // 0 <s>, 1 end, 2 a, 3 b
    let model = TableModel::new(abe())
        .with_rule(vec![0], &[(2, 0.5), (3, 0.3), (1, 0.2)])
        .unwrap()
        .with_rule(vec![0, 2], &[(1, 0.6), (2, 0.3), (3, 0.1)])
        .unwrap()
        .with_rule(vec![0, 3], &[(1, 0.9), (2, 0.05), (3, 0.05)])
        .unwrap();
    let config = DecodeConfig::default()
        .with_beam_size(2)
        .with_max_new_tokens(2);
    let beam = beam_search(&model, &[0], &config).unwrap();
    let all = enumerate_leaves(&model, &[0], 2);
    assert!(all.len() <= 9);
    let oracle = brute_force_top_k(&model, &[0], 2, 2);
    let got: Vec<_> = beam.iter().map(|s| s.tokens.clone()).collect();
    let want: Vec<_> = oracle.iter().map(|l| l.tokens.clone()).collect();
    assert_eq!(got, want);
    assert_eq!(got, vec![vec![0, 2, 1], vec![0, 3, 1]]);
}

#[test]
fn beam_is_not_exhaustive_in_general() {
    // step 1 keeps only `a` (0.6), but the best full sequence goes through `b`
    let model = TableModel::new(abe())
        .with_rule(vec![0], &[(2, 0.6), (3, 0.4)])
        .unwrap()
        .with_rule(vec![0, 2], &[(1, 0.5), (2, 0.5)])
        .unwrap()
        .with_rule(vec![0, 3], &[(1, 1.0)])
        .unwrap();
    let config = DecodeConfig::default()
        .with_beam_size(1)
        .with_max_new_tokens(2);
    let beam = beam_search(&model, &[0], &config).unwrap();
    let oracle = brute_force_top_k(&model, &[0], 2, 1);
    assert_eq!(beam[0].tokens, vec![0, 2, 1]);
    assert_eq!(oracle[0].tokens, vec![0, 3, 1]);

    // a wider beam finds the better sequence, so top-1 can improve with k
    let wide = beam_search(&model, &[0], &config.with_beam_size(2)).unwrap();
    assert_eq!(wide[0].tokens, vec![0, 3, 1]);
    assert!(wide[0].logprob > beam[0].logprob);
}

#[test]
fn wider_beam_top1_can_get_worse() {
    // k=2 prefers the two `b` children (0.225 each) over `a a` (0.17), then both `b` paths decay
    let model = TableModel::new(abe())
        .with_rule(vec![0], &[(2, 0.5), (3, 0.45), (1, 0.05)])
        .unwrap()
        .with_rule(vec![0, 2], &[(2, 0.34), (3, 0.33), (1, 0.33)])
        .unwrap()
        .with_rule(vec![0, 2, 2], &[(1, 1.0)])
        .unwrap()
        .with_rule(vec![0, 3], &[(2, 0.5), (3, 0.5)])
        .unwrap()
        .with_rule(vec![0, 3, 2], &[(1, 0.1), (2, 0.45), (3, 0.45)])
        .unwrap()
        .with_rule(vec![0, 3, 3], &[(1, 0.1), (2, 0.45), (3, 0.45)])
        .unwrap();
    let config = DecodeConfig::default().with_max_new_tokens(3);
    let narrow = beam_search(&model, &[0], &config.with_beam_size(1)).unwrap();
    let wide = beam_search(&model, &[0], &config.with_beam_size(2)).unwrap();
    assert_eq!(narrow[0].tokens, vec![0, 2, 2, 1]);
    assert!((narrow[0].logprob - 0.17f64.ln()).abs() < 1e-12);
    assert_eq!(wide[0].tokens, vec![0, 3, 2, 2]);
    assert!(wide[0].logprob < narrow[0].logprob);
}

#[test]
fn greedy_example() {
    let model = TableModel::new(abe())
        .with_rule(vec![0], &[(2, 0.7), (1, 0.3)])
        .unwrap()
        .with_rule(vec![0, 2], &[(1, 1.0)])
        .unwrap();
    let g = greedy_decode(&model, &[0], &DecodeConfig::default()).unwrap();
    assert_eq!(g.tokens, vec![0, 2, 1]);
    assert!((g.logprob - 0.7f64.ln()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beam_equals_enumeration_when_nothing_is_pruned(seed in any::<u64>(), v in 3usize..=5, depth in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_table_model(&mut rng, v, depth);
        let leaves = enumerate_leaves(&model, &[0], depth);
        let k = leaves.len();
        let config = DecodeConfig::default().with_beam_size(k).with_max_new_tokens(depth);
        let beam = beam_search(&model, &[0], &config).unwrap();
        let oracle = brute_force_top_k(&model, &[0], depth, k);
        prop_assert_eq!(beam.len(), oracle.len());
        for (b, o) in beam.iter().zip(&oracle) {
            prop_assert_eq!(&b.tokens, &o.tokens);
            prop_assert!((b.logprob - o.logprob).abs() <= 1e-9);
            prop_assert_eq!(b.complete, o.complete);
        }
    }

    #[test]
    fn beam_top1_never_beats_exhaustive(seed in any::<u64>(), v in 3usize..=6, depth in 1usize..=5, k in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_table_model(&mut rng, v, depth);
        let config = DecodeConfig::default().with_beam_size(k).with_max_new_tokens(depth);
        let beam = beam_search(&model, &[0], &config).unwrap();
        let best = brute_force_top_k(&model, &[0], depth, 1);
        prop_assert!(beam[0].logprob <= best[0].logprob + 1e-9);
        prop_assert!(beam.len() <= k);
        prop_assert!(beam.windows(2).all(|w| w[0].logprob >= w[1].logprob));
    }

    #[test]
    fn sequential_matches_batched(seed in any::<u64>(), v in 3usize..=6, depth in 1usize..=5, k in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_table_model(&mut rng, v, depth);
        let config = DecodeConfig::default().with_beam_size(k).with_max_new_tokens(depth);
        prop_assert_eq!(beam_search(&model, &[0], &config).unwrap(), sequential_beam_search(&model, &[0], &config).unwrap());
    }

    #[test]
    fn greedy_is_beam_of_one(seed in any::<u64>(), v in 3usize..=6, depth in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_table_model(&mut rng, v, depth);
        let config = DecodeConfig::default().with_max_new_tokens(depth);
        let g = greedy_decode(&model, &[0], &config).unwrap();
        let b = beam_search(&model, &[0], &config).unwrap();
        prop_assert_eq!(&g.tokens, &b[0].tokens);
        prop_assert!((g.logprob - b[0].logprob).abs() <= 1e-12);
    }

    #[test]
    fn logprobs_recompute(seed in any::<u64>(), v in 3usize..=6, depth in 1usize..=5, k in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_table_model(&mut rng, v, depth);
        let config = DecodeConfig::default().with_beam_size(k).with_max_new_tokens(depth);
        for s in beam_search(&model, &[0], &config).unwrap() {
            prop_assert!((rescore(&model, &s.tokens, 1).unwrap() - s.logprob).abs() <= 1e-9);
            prop_assert!(s.logprob <= 0.0);
            prop_assert_eq!(s.complete, model.vocab().is_complete(&s.tokens));
        }
    }
}
