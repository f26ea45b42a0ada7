#![allow(dead_code)]

use std::cmp::Ordering;

use flames_core::model::{TableModel, TokenId, TokenModel, Vocab};
use flames_core::reward::{evaluate_reward, open_slots, Spec};
use rand::Rng;

/// Vocabulary `<s>`, `end`, optionally `stop`, then `t0..`, `v` tokens in total.
pub fn toy_vocab(v: usize, two_terminals: bool) -> Vocab {
    assert!(v >= 3);
    let mut surfaces: Vec<String> = vec!["<s>".into(), "end".into()];
    let mut terminals = vec!["end"];
    if two_terminals {
        surfaces.push("stop".into());
        terminals.push("stop");
    }
    let mut i = 0;
    while surfaces.len() < v {
        surfaces.push(format!("t{i}"));
        i += 1;
    }
    let refs: Vec<&str> = surfaces.iter().map(String::as_str).collect();
    Vocab::from_surfaces(&refs, &terminals, "<s>").unwrap()
}

/// A random distribution over the emittable tokens; about one entry in five is
/// zero, at least one entry is positive.
pub fn random_probs(rng: &mut impl Rng, vocab: &Vocab) -> Vec<(TokenId, f64)> {
    let ids: Vec<TokenId> = vocab.emittable().collect();
    loop {
        let w: Vec<f64> = ids
            .iter()
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.01..1.0)
                }
            })
            .collect();
        let z: f64 = w.iter().sum();
        if z > 0.0 {
            return ids.iter().zip(w).map(|(&id, x)| (id, x / z)).collect();
        }
    }
}

/// A table model with an explicit random rule for every non-terminal prefix
/// of up to `depth - 1` generated tokens.
pub fn random_table_model(rng: &mut impl Rng, v: usize, depth: usize) -> TableModel {
    let vocab = toy_vocab(v, v >= 5 && rng.random_bool(0.5));
    let inner: Vec<TokenId> = vocab
        .emittable()
        .filter(|&t| !vocab.is_terminal(t))
        .collect();
    let mut model = TableModel::new(vocab.clone());
    let mut frontier = vec![vec![vocab.sos()]];
    for _ in 0..depth {
        let mut next = Vec::new();
        for prefix in frontier {
            let probs = random_probs(rng, &vocab);
            model.insert_rule(prefix.clone(), &probs).unwrap();
            for &t in &inner {
                let mut p = prefix.clone();
                p.push(t);
                next.push(p);
            }
        }
        frontier = next;
    }
    model
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub complete: bool,
}

/// Every sequence reachable from `prefix` through positive-probability tokens
/// that either ends in a terminal or has `max_new` generated tokens.
pub fn enumerate_leaves(model: &dyn TokenModel, prefix: &[TokenId], max_new: usize) -> Vec<Leaf> {
    let vocab = model.vocab();
    let mut out = Vec::new();
    let mut stack = vec![(prefix.to_vec(), 0.0f64)];
    while let Some((tokens, lp)) = stack.pop() {
        let complete = vocab.is_complete(&tokens);
        if complete || tokens.len() - prefix.len() == max_new {
            out.push(Leaf {
                tokens,
                logprob: lp,
                complete,
            });
            continue;
        }
        let dist = model.next_dist(&tokens).unwrap();
        for id in 0..vocab.len() as TokenId {
            let p = dist.prob(id);
            if p > 0.0 {
                let mut t = tokens.clone();
                t.push(id);
                stack.push((t, lp + p.ln()));
            }
        }
    }
    out
}

pub fn by_score(a: &Leaf, b: &Leaf) -> Ordering {
    b.logprob
        .total_cmp(&a.logprob)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// The `k` best leaves by cumulative log-probability.
pub fn brute_force_top_k(
    model: &dyn TokenModel,
    prefix: &[TokenId],
    max_new: usize,
    k: usize,
) -> Vec<Leaf> {
    let mut leaves = enumerate_leaves(model, prefix, max_new);
    leaves.sort_by(by_score);
    leaves.truncate(k);
    leaves
}

/// Shortest-first enumeration of well-formed programs (at most `max_len`
/// tokens including `<s>` and the terminal); returns the first one with
/// reward 1.0.
pub fn oracle_patch(vocab: &Vocab, spec: &Spec, max_len: usize) -> Option<Vec<TokenId>> {
    let end = *vocab.terminals().iter().next().unwrap();
    let symbols: Vec<TokenId> = vocab
        .emittable()
        .filter(|&t| !vocab.is_terminal(t))
        .collect();
    for body_len in (1..=max_len.saturating_sub(2)).step_by(2) {
        let mut body = Vec::with_capacity(body_len);
        if let Some(found) = search_bodies(vocab, spec, &symbols, end, body_len, &mut body) {
            return Some(found);
        }
    }
    None
}

fn search_bodies(
    vocab: &Vocab,
    spec: &Spec,
    symbols: &[TokenId],
    end: TokenId,
    len: usize,
    body: &mut Vec<TokenId>,
) -> Option<Vec<TokenId>> {
    let need = open_slots(vocab, body)?;
    let left = len - body.len();
    if left == 0 {
        if need != 0 {
            return None;
        }
        let mut tokens = vec![vocab.sos()];
        tokens.extend_from_slice(body);
        tokens.push(end);
        return (evaluate_reward(vocab, &tokens, spec).reward == 1.0).then_some(tokens);
    }
    if need == 0 || need > left {
        return None;
    }
    for &s in symbols {
        body.push(s);
        let found = search_bodies(vocab, spec, symbols, end, len, body);
        body.pop();
        if found.is_some() {
            return found;
        }
    }
    None
}
