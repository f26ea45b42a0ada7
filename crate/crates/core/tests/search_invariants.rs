mod common;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};

use flames_core::costmodel::{flames_memory, MemoryMeter};
use flames_core::decode::{greedy_decode_metered, DecodeConfig};
use flames_core::model::{TableModel, TokenId, TokenModel};
use flames_core::reward::{RewardFn, RewardReport};
use flames_core::search::{ExpansionCache, FlamesSearch, Policy, SearchConfig, StopReason};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::enumerate_leaves;

/// Deterministic pseudo-random pass counts out of four cases.
struct HashedReward {
    salt: u64,
    runs: AtomicU64,
}

impl HashedReward {
    fn new(salt: u64) -> Self {
        Self {
            salt,
            runs: AtomicU64::new(0),
        }
    }

    fn passes(&self, tokens: &[TokenId]) -> usize {
        let mut h = DefaultHasher::new();
        (self.salt, tokens).hash(&mut h);
        (h.finish() % 5) as usize
    }
}

impl RewardFn for HashedReward {
    fn evaluate(&self, tokens: &[TokenId]) -> RewardReport {
        self.runs.fetch_add(1, Ordering::Relaxed);
        let f_pass = self.passes(tokens);
        RewardReport {
            f_pass,
            f_fail: 4 - f_pass,
            reward: f_pass as f64 / 4.0,
            failures: (f_pass..4).collect(),
            parse_error: None,
        }
    }

    fn invocations(&self) -> u64 {
        self.runs.load(Ordering::Relaxed)
    }
}

fn instance(seed: u64, v: usize, depth: usize) -> TableModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    common::random_table_model(&mut rng, v, depth)
}

fn policy() -> impl Strategy<Value = Policy> {
    prop_oneof![
        Just(Policy::Ucb),
        Just(Policy::PucbFixed),
        Just(Policy::PucbVar)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tree_statistics_stay_consistent(
        seed in any::<u64>(),
        v in 3usize..=6,
        depth in 1usize..=5,
        k in 1usize..=5,
        policy in policy(),
        steps in 1usize..60,
    ) {
        let model = instance(seed, v, depth);
        let reward = HashedReward::new(seed);
        let cache = ExpansionCache::new(k);
        let config = SearchConfig { expansion_k: k, policy, max_sim_tokens: depth, stop_on_plausible: false, ..SearchConfig::default() };
        let mut search = FlamesSearch::new(&model, &reward, &cache, &[0], config).unwrap();
        let mut selected = Vec::new();
        let mut prev_q: Vec<f64> = Vec::new();
        for _ in 0..steps {
            if search.exhausted() {
                break;
            }
            let it = search.step().unwrap();
            prop_assert!((0.0..=1.0).contains(&it.rollout.reward));
            let tree = search.tree();
            selected.resize(tree.len(), 0u64);
            selected[it.selected] += 1;
            for (id, node) in tree.nodes().iter().enumerate() {
                if let Some(&q) = prev_q.get(id) {
                    prop_assert!(node.q >= q, "Q fell at node {}", id);
                }
                let below: u64 = node.children.iter().map(|&(_, c)| tree.node(c).visits).sum();
                prop_assert_eq!(node.visits, selected[id] + below);
                prop_assert!((0.0..=1.0).contains(&node.q));
                if let Some(p) = node.parent {
                    prop_assert!(tree.node(p).q >= node.q);
                }
                prop_assert!(node.children.windows(2).all(|w| w[0].0 < w[1].0));
                prop_assert!(node.children.len() <= k);
            }
            prev_q = tree.nodes().iter().map(|n| n.q).collect();
        }
        prop_assert_eq!(search.tree().root().visits, search.iterations() as u64);
    }

    #[test]
    fn cache_changes_only_forward_counts(
        seed in any::<u64>(),
        v in 3usize..=6,
        depth in 1usize..=5,
        k in 1usize..=5,
        policy in policy(),
    ) {
        let with = instance(seed, v, depth);
        let without = instance(seed, v, depth);
        let reward = HashedReward::new(seed);
        let config = SearchConfig { expansion_k: k, policy, max_sim_tokens: depth, max_patches: 30, stop_on_plausible: false, ..SearchConfig::default() };
        let on = ExpansionCache::new(k);
        let off = ExpansionCache::disabled(k);
        let mut a = FlamesSearch::new(&with, &reward, &on, &[0], config.clone()).unwrap();
        let mut b = FlamesSearch::new(&without, &reward, &off, &[0], config).unwrap();
        for _ in 0..40 {
            if a.exhausted() {
                prop_assert!(b.exhausted());
                break;
            }
            prop_assert_eq!(a.step().unwrap(), b.step().unwrap());
        }
        prop_assert_eq!(a.candidates(), b.candidates());
        if on.hits() > 0 {
            prop_assert!(with.forward_calls() < without.forward_calls());
        } else {
            prop_assert_eq!(with.forward_calls(), without.forward_calls());
        }
    }

    #[test]
    fn patch_budget_and_constant_memory(
        seed in any::<u64>(),
        v in 3usize..=6,
        depth in 1usize..=5,
        budget in 1usize..=30,
    ) {
        let model = instance(seed, v, depth);
        let reward = HashedReward::new(seed);
        let cache = ExpansionCache::new(3);
        let config = SearchConfig { expansion_k: 3, max_sim_tokens: depth, max_patches: budget, stop_on_plausible: false, ..SearchConfig::default() };
        let params = config.memory_params(1, v);
        let out = FlamesSearch::new(&model, &reward, &cache, &[0], config).unwrap().run().unwrap();
        prop_assert!(out.report.distinct_patches <= budget);
        prop_assert_eq!(out.candidates.len(), out.report.distinct_patches);
        prop_assert!(out.candidates.windows(2).all(|w| w[0].reward >= w[1].reward));

        let greedy = DecodeConfig { alpha: params.alpha, ..DecodeConfig::default().with_max_new_tokens(depth) };
        let mut meter = MemoryMeter::new(None);
        greedy_decode_metered(&model, &[0], &greedy, &mut meter).unwrap();
        prop_assert_eq!(out.report.peak_bytes, meter.peak());
        prop_assert_eq!(out.report.peak_bytes, flames_memory(&params));
    }

    #[test]
    fn unbounded_search_finds_best_reward(seed in any::<u64>(), v in 3usize..=5, depth in 1usize..=4, policy in policy()) {
        let model = instance(seed, v, depth);
        let reward = HashedReward::new(seed);
        let complete: Vec<_> = enumerate_leaves(&model, &[0], depth).into_iter().filter(|l| l.complete).collect();
        let best = complete.iter().map(|l| reward.passes(&l.tokens)).max().map_or(0.0, |p| p as f64 / 4.0);
        let cache = ExpansionCache::new(v);
        let config = SearchConfig {
            expansion_k: v,
            policy,
            max_sim_tokens: depth,
            max_patches: usize::MAX,
            max_iterations: usize::MAX,
            stop_on_plausible: false,
            ..SearchConfig::default()
        };
        let out = FlamesSearch::new(&model, &reward, &cache, &[0], config).unwrap().run().unwrap();
        prop_assert_eq!(out.report.stop_reason, StopReason::Exhausted);
        prop_assert_eq!(out.report.best_reward, best);
        prop_assert_eq!(out.report.distinct_patches, complete.len());
    }
}

#[test]
fn reward_runs_once_per_distinct_patch() {
    let model = instance(3, 5, 4);
    let reward = HashedReward::new(3);
    let cache = ExpansionCache::new(4);
    let config = SearchConfig {
        expansion_k: 4,
        max_sim_tokens: 4,
        stop_on_plausible: false,
        ..SearchConfig::default()
    };
    let out = FlamesSearch::new(&model, &reward, &cache, &[0], config)
        .unwrap()
        .run()
        .unwrap();
    assert!(out.report.iterations >= out.report.distinct_patches);
    assert_eq!(reward.invocations(), out.report.distinct_patches as u64);
    assert_eq!(out.report.test_runs, reward.invocations());
}

#[test]
fn timeout_zero_stops_before_first_iteration() {
    let model = instance(5, 4, 3);
    let reward = HashedReward::new(5);
    let cache = ExpansionCache::new(2);
    let config = SearchConfig {
        expansion_k: 2,
        max_sim_tokens: 3,
        timeout: std::time::Duration::ZERO,
        ..SearchConfig::default()
    };
    let out = FlamesSearch::new(&model, &reward, &cache, &[0], config)
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(out.report.stop_reason, StopReason::Timeout);
    assert_eq!(out.report.iterations, 0);
}

#[test]
fn iteration_cap_is_respected() {
    let model = instance(8, 6, 5);
    let reward = HashedReward::new(1000);
    let cache = ExpansionCache::new(5);
    let config = SearchConfig {
        expansion_k: 5,
        max_sim_tokens: 5,
        max_iterations: 7,
        stop_on_plausible: false,
        ..SearchConfig::default()
    };
    let out = FlamesSearch::new(&model, &reward, &cache, &[0], config)
        .unwrap()
        .run()
        .unwrap();
    assert!(out.report.iterations <= 7);
}

#[test]
fn memory_cap_below_one_forward_is_oom() {
    let model = instance(2, 4, 3);
    let reward = HashedReward::new(2);
    let cache = ExpansionCache::new(2);
    let config = SearchConfig {
        expansion_k: 2,
        max_sim_tokens: 3,
        memory_cap: Some(10),
        ..SearchConfig::default()
    };
    let err = FlamesSearch::new(&model, &reward, &cache, &[0], config)
        .unwrap()
        .run()
        .unwrap_err();
    assert!(matches!(err, flames_core::search::SearchError::Oom(_)));
}
