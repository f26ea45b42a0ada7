//! Browser bindings for the interactive page in `www/`.
//!
//! Every export takes plain numbers or strings and returns a JSON string, so
//! the same functions run natively under `cargo test`.

use flames_core::campaign::{bug_model, BUG_MODEL_DELTA, BUG_MODEL_ORDER};
use flames_core::costmodel::{flames_memory, sweep, MemoryMeter, MemoryModelParams};
use flames_core::decode::{beam_search_metered, DecodeConfig, DecodeError};
use flames_core::reward::{evaluate_reward, generate_bug_corpus, repair_vocab, SpecRunner};
use flames_core::search::{
    policy_score, ExpansionCache, FlamesSearch, Policy, SearchConfig, SearchError,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct SweepPoint {
    k: u64,
    bs: u64,
    seqbs: u64,
    flames: u64,
    oom: bool,
}

/// Memory of batched beam, sequential beam and the tree search across the
/// standard beam sizes. `cap` of 0 means no cap.
#[wasm_bindgen]
pub fn memory_sweep(alpha: u64, n_in: u64, n_out: u64, vocab: u64, cap: u64) -> String {
    let params = MemoryModelParams::new(alpha, 1, n_in.max(1), n_out.max(1), vocab.max(1));
    let flames = flames_memory(&params);
    let cap = (cap > 0).then_some(cap);
    let points: Vec<SweepPoint> = sweep(&params, cap)
        .into_iter()
        .map(|r| SweepPoint {
            k: r.k,
            bs: r.bs_bytes,
            seqbs: r.seqbs_bytes,
            flames,
            oom: r.oom,
        })
        .collect();
    serde_json::to_string(&points).expect("serializes")
}

#[derive(Serialize)]
struct Candidate {
    patch: String,
    reward: f64,
    iteration: usize,
}

#[derive(Serialize)]
struct SearchTrace {
    found: bool,
    iterations: usize,
    patches: usize,
    tree_size: usize,
    peak_bytes: u64,
    forward_calls: u64,
    cache_hits: u64,
    stop: String,
    candidates: Vec<Candidate>,
}

#[derive(Serialize)]
struct BeamTrace {
    found: bool,
    oom: bool,
    peak_bytes: u64,
    candidates: Vec<Candidate>,
}

#[derive(Serialize)]
struct RepairTrace {
    bug_id: String,
    buggy: String,
    ground_truth: String,
    cases: Vec<(Vec<i64>, i64)>,
    buggy_reward: f64,
    flames: SearchTrace,
    beam: BeamTrace,
}

#[derive(Serialize)]
struct Failure {
    error: String,
}

fn failure(msg: impl ToString) -> String {
    serde_json::to_string(&Failure {
        error: msg.to_string(),
    })
    .expect("serializes")
}

/// Repairs bug `bug_index` of the corpus generated from `seed`, once with
/// the tree search and once with beam search of the given width. `cap` of 0
/// means no memory cap.
#[wasm_bindgen]
pub fn repair_bug(
    seed: u64,
    bug_index: usize,
    policy: &str,
    expansion_k: usize,
    budget: usize,
    beam_size: usize,
    cap: u64,
) -> String {
    let policy: Policy = match policy.parse() {
        Ok(p) => p,
        Err(e) => return failure(e),
    };
    if expansion_k == 0 || budget == 0 || beam_size == 0 {
        return failure("k, budget and beam size must be positive");
    }
    let vocab = repair_vocab();
    let corpus = match generate_bug_corpus(seed, bug_index + 1, &vocab) {
        Ok(c) => c,
        Err(e) => return failure(e),
    };
    let inst = &corpus[bug_index];
    let model = match bug_model(
        &vocab,
        &inst.bug.buggy_tokens,
        BUG_MODEL_ORDER,
        BUG_MODEL_DELTA,
        seed.wrapping_add(bug_index as u64),
    ) {
        Ok(m) => m,
        Err(e) => return failure(e),
    };
    let cap = (cap > 0).then_some(cap);
    let runner = SpecRunner::new(vocab.clone(), inst.spec.clone());

    let config = SearchConfig {
        expansion_k,
        policy,
        max_patches: budget,
        memory_cap: cap,
        ..SearchConfig::default()
    };
    let cache = ExpansionCache::new(expansion_k);
    let search = match FlamesSearch::new(&model, &runner, &cache, &inst.bug.prompt_tokens, config) {
        Ok(s) => s,
        Err(e) => return failure(e),
    };
    let flames = match search.run() {
        Ok(out) => SearchTrace {
            found: out.report.best_reward == 1.0,
            iterations: out.report.iterations,
            patches: out.report.distinct_patches,
            tree_size: out.report.tree_size,
            peak_bytes: out.report.peak_bytes,
            forward_calls: out.report.stats.forward_calls,
            cache_hits: out.report.stats.cache_hits,
            stop: format!("{:?}", out.report.stop_reason),
            candidates: out
                .candidates
                .iter()
                .take(10)
                .map(|c| Candidate {
                    patch: vocab.render(&c.tokens),
                    reward: c.reward,
                    iteration: c.iteration,
                })
                .collect(),
        },
        Err(SearchError::Oom(o)) => SearchTrace {
            found: false,
            iterations: 0,
            patches: 0,
            tree_size: 0,
            peak_bytes: o.peak,
            forward_calls: 0,
            cache_hits: 0,
            stop: "OOM".into(),
            candidates: Vec::new(),
        },
        Err(e) => return failure(e),
    };

    let decode = DecodeConfig {
        memory_cap: cap,
        ..DecodeConfig::default()
            .with_beam_size(beam_size)
            .with_max_new_tokens(10)
    };
    let mut meter = MemoryMeter::new(cap);
    let beam = match beam_search_metered(&model, &inst.bug.prompt_tokens, &decode, &mut meter) {
        Ok(seqs) => {
            let candidates: Vec<Candidate> = seqs
                .iter()
                .filter(|s| s.complete)
                .take(budget)
                .enumerate()
                .map(|(i, s)| Candidate {
                    patch: vocab.render(&s.tokens),
                    reward: evaluate_reward(&vocab, &s.tokens, &inst.spec).reward,
                    iteration: i + 1,
                })
                .collect();
            BeamTrace {
                found: candidates.iter().any(|c| c.reward == 1.0),
                oom: false,
                peak_bytes: meter.peak(),
                candidates: candidates.into_iter().take(10).collect(),
            }
        }
        Err(DecodeError::Oom(o)) => BeamTrace {
            found: false,
            oom: true,
            peak_bytes: o.peak,
            candidates: Vec::new(),
        },
        Err(e) => return failure(e),
    };

    let trace = RepairTrace {
        bug_id: inst.bug.id.clone(),
        buggy: vocab.render(&inst.bug.buggy_tokens),
        ground_truth: vocab.render(&inst.ground_truth),
        cases: inst
            .spec
            .cases()
            .iter()
            .map(|c| (c.inputs.clone(), c.expected))
            .collect(),
        buggy_reward: evaluate_reward(&vocab, &inst.bug.buggy_tokens, &inst.spec).reward,
        flames,
        beam,
    };
    serde_json::to_string(&trace).expect("serializes")
}

#[derive(Serialize)]
struct Curve {
    policy: &'static str,
    scores: Vec<f64>,
}

/// Selection score of a child with value `q`, prior `prior` and `child_visits`
/// visits, as the parent's visit count runs from 1 to `max_parent`. One curve
/// per policy; UCB is infinite for unvisited children.
#[wasm_bindgen]
pub fn policy_curves(q: f64, prior: f64, child_visits: u64, max_parent: u64) -> String {
    let config = SearchConfig::default();
    let curves: Vec<Curve> = Policy::ALL
        .into_iter()
        .map(|policy| Curve {
            policy: policy.name(),
            scores: (1..=max_parent.clamp(1, 10_000))
                .map(|n| policy_score(policy, q, child_visits, prior, n.max(child_visits), &config))
                .map(|s| if s.is_finite() { s } else { f64::MAX })
                .collect(),
        })
        .collect();
    serde_json::to_string(&curves).expect("serializes")
}
