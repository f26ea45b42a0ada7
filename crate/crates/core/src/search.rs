//! Test-guided best-first search over a token tree.
//!
//! Each iteration runs four phases:
//!
//! 1. **select**: descend from the root by the policy score until reaching a
//!    node that is unexpanded or terminal;
//! 2. **expand**: attach the model's top-k next tokens as children, keeping
//!    their raw (not renormalized) probabilities as priors;
//! 3. **simulate**: complete the node's partial patch greedily and score the
//!    result with the test suite (incomplete rollouts score 0);
//! 4. **backprop**: along the root path, `Q = max(Q, reward)` and `N += 1`.
//!
//! Only single-sequence forwards are ever issued, so the memory profile is
//! that of greedy decoding no matter how many patches are generated.
//! Top-k queries are memoized in an [`ExpansionCache`] keyed by the exact
//! token prefix.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::costmodel::{bs_step2_memory, MemoryMeter, MemoryModelParams, SimulatedOom};
use crate::decode::{greedy_with, metered_step, DEFAULT_ALPHA};
use crate::model::{ModelError, ModelStats, TokenDist, TokenId, TokenModel};
use crate::reward::{Bug, RewardFn, Spec, SpecRunner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Ucb,
    PucbFixed,
    PucbVar,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Ucb, Policy::PucbFixed, Policy::PucbVar];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Ucb => "ucb",
            Policy::PucbFixed => "pucb-fixed",
            Policy::PucbVar => "pucb-var",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy {s:?} (expected ucb, pucb-fixed or pucb-var)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub expansion_k: usize,
    pub policy: Policy,
    pub c_ucb: f64,
    pub c_puct: f64,
    pub c_base: f64,
    pub c_init: f64,
    /// Distinct complete patches to validate before stopping.
    pub max_patches: usize,
    pub timeout: Duration,
    /// Longest rollout, counted in tokens after the prompt.
    pub max_sim_tokens: usize,
    pub stop_on_plausible: bool,
    /// Hard cap on iterations, including those that only rediscover a known patch.
    pub max_iterations: usize,
    /// Skip fully explored subtrees during selection.
    pub prune_exhausted: bool,
    pub use_cache: bool,
    pub alpha: u64,
    pub memory_cap: Option<u64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            expansion_k: 10,
            policy: Policy::PucbVar,
            c_ucb: 1.414,
            c_puct: 4.0,
            c_base: 10.0,
            c_init: 4.0,
            max_patches: 200,
            timeout: Duration::from_secs(60),
            max_sim_tokens: 10,
            stop_on_plausible: true,
            max_iterations: 10_000,
            prune_exhausted: true,
            use_cache: true,
            alpha: DEFAULT_ALPHA,
            memory_cap: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.expansion_k == 0 {
            return Err(SearchError::BadConfig(
                "expansion_k must be at least 1".into(),
            ));
        }
        if self.max_patches == 0 {
            return Err(SearchError::BadConfig(
                "max_patches must be at least 1".into(),
            ));
        }
        if self.max_sim_tokens == 0 {
            return Err(SearchError::BadConfig(
                "max_sim_tokens must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Memory parameters of one search forward (always a beam of one).
    pub fn memory_params(&self, prompt_len: usize, vocab_len: usize) -> MemoryModelParams {
        MemoryModelParams::new(
            self.alpha,
            1,
            prompt_len as u64,
            self.max_sim_tokens as u64,
            vocab_len as u64,
        )
    }
}

/// Selection score of a child.
///
/// * UCB: `Q + c_ucb * sqrt(ln(N_parent) / N)`, infinite for unvisited children.
/// * fixed P-UCB: `Q + c_puct * P * sqrt(N_parent) / (1 + N)`.
/// * variable P-UCB: as fixed, with `c = ln((N_parent + c_base + 1) / c_base) + c_init`.
pub fn policy_score(
    policy: Policy,
    q: f64,
    n: u64,
    prior: f64,
    parent_n: u64,
    config: &SearchConfig,
) -> f64 {
    match policy {
        Policy::Ucb => {
            if n == 0 {
                f64::INFINITY
            } else {
                q + config.c_ucb * ((parent_n as f64).ln() / n as f64).sqrt()
            }
        }
        Policy::PucbFixed => {
            q + config.c_puct * prior * (parent_n as f64).sqrt() / (1.0 + n as f64)
        }
        Policy::PucbVar => {
            let c = ((parent_n as f64 + config.c_base + 1.0) / config.c_base).ln() + config.c_init;
            q + c * prior * (parent_n as f64).sqrt() / (1.0 + n as f64)
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oom(#[from] SimulatedOom),
    #[error("bad search config: {0}")]
    BadConfig(String),
}

/// Memoized top-k next-token queries, shared by any number of searches.
#[derive(Debug)]
pub struct ExpansionCache {
    k: usize,
    enabled: bool,
    entries: Mutex<HashMap<Vec<TokenId>, TokenDist>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ExpansionCache {
    pub fn new(k: usize) -> Self {
        Self::with_enabled(k, true)
    }

    /// A cache that never stores anything; every query reaches the model.
    pub fn disabled(k: usize) -> Self {
        Self::with_enabled(k, false)
    }

    fn with_enabled(k: usize, enabled: bool) -> Self {
        Self {
            k,
            enabled,
            entries: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// Returns the cached entry for `prefix`, if any, counting a hit.
    fn lookup(&self, prefix: &[TokenId]) -> Option<TokenDist> {
        if !self.enabled {
            return None;
        }
        let found = self
            .entries
            .lock()
            .expect("cache lock")
            .get(prefix)
            .cloned();
        if found.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        found
    }

    fn fill(&self, model: &dyn TokenModel, prefix: &[TokenId]) -> Result<TokenDist, ModelError> {
        let top = model.next_dist(prefix)?.top_k(self.k)?;
        self.misses.fetch_add(1, Ordering::Relaxed);
        if self.enabled {
            self.entries
                .lock()
                .expect("cache lock")
                .insert(prefix.to_vec(), top.clone());
        }
        Ok(top)
    }

    /// Top-k next tokens for `prefix`; queries the model only on a miss.
    /// Errors are not cached.
    pub fn cached_top_k(
        &self,
        model: &dyn TokenModel,
        prefix: &[TokenId],
    ) -> Result<TokenDist, ModelError> {
        match self.lookup(prefix) {
            Some(d) => Ok(d),
            None => self.fill(model, prefix),
        }
    }

    /// As [`cached_top_k`](Self::cached_top_k), charging `meter` for a model
    /// forward on a miss.
    pub fn cached_top_k_metered(
        &self,
        model: &dyn TokenModel,
        prefix: &[TokenId],
        meter: &mut MemoryMeter,
        forward_bytes: u64,
    ) -> Result<TokenDist, SearchError> {
        if let Some(d) = self.lookup(prefix) {
            return Ok(d);
        }
        metered_step(meter, forward_bytes, || {
            self.fill(model, prefix).map_err(SearchError::from)
        })
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchNode {
    pub state: Vec<TokenId>,
    pub q: f64,
    pub visits: u64,
    pub prior: f64,
    /// Children ordered by action token id.
    pub children: Vec<(TokenId, NodeId)>,
    pub expanded: bool,
    pub is_terminal: bool,
    pub parent: Option<NodeId>,
    /// Set once the node has been the starting point of a rollout.
    pub simulated: bool,
    /// Nothing new can be learned below this node.
    pub exhausted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub const ROOT: NodeId = 0;

    fn new(root_state: Vec<TokenId>, is_terminal: bool) -> Self {
        let root = SearchNode {
            state: root_state,
            q: 0.0,
            visits: 0,
            prior: 1.0,
            children: Vec::new(),
            expanded: false,
            is_terminal,
            parent: None,
            simulated: false,
            exhausted: false,
        };
        Self { nodes: vec![root] }
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[Self::ROOT]
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn child(&self, id: NodeId, action: TokenId) -> Option<NodeId> {
        let children = &self.nodes[id].children;
        children
            .binary_search_by_key(&action, |c| c.0)
            .ok()
            .map(|i| children[i].1)
    }

    /// Node ids from the root down to `id`, inclusive.
    pub fn path(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Flames,
    Beam,
    Seqbeam,
    Sample,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchCandidate {
    pub tokens: Vec<TokenId>,
    pub reward: f64,
    /// 1-based iteration (or validation index for baselines) that produced it.
    pub iteration: usize,
    pub source: Source,
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plausible,
    MaxPatches,
    Timeout,
    Exhausted,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub iterations: usize,
    pub distinct_patches: usize,
    pub stats: ModelStats,
    pub wall_ms: u64,
    pub peak_bytes: u64,
    pub stop_reason: StopReason,
    pub tree_size: usize,
    pub best_reward: f64,
    /// Number of validated patches up to and including the first plausible one.
    pub patches_to_plausible: Option<usize>,
    pub test_runs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// Distinct complete patches, best reward first, then discovery order.
    pub candidates: Vec<PatchCandidate>,
    pub report: SearchReport,
}

/// What one iteration did.
#[derive(Debug, Clone, PartialEq)]
pub struct Iteration {
    pub selected: NodeId,
    pub rollout: PatchCandidate,
    /// Whether the rollout was a complete patch not seen before.
    pub new_patch: bool,
}

/// A search in progress. Owns its tree; borrows the model, the reward
/// function and the cache, so several searches can share one cache.
pub struct FlamesSearch<'a> {
    model: &'a dyn TokenModel,
    reward_fn: &'a dyn RewardFn,
    cache: &'a ExpansionCache,
    config: SearchConfig,
    tree: SearchTree,
    prompt_len: usize,
    forward_bytes: u64,
    meter: MemoryMeter,
    rewards: HashMap<Vec<TokenId>, f64>,
    candidates: Vec<PatchCandidate>,
    iterations: usize,
    patches_to_plausible: Option<usize>,
    start_calls: u64,
    start_hits: u64,
    start_runs: u64,
}

impl<'a> FlamesSearch<'a> {
    pub fn new(
        model: &'a dyn TokenModel,
        reward_fn: &'a dyn RewardFn,
        cache: &'a ExpansionCache,
        prompt: &[TokenId],
        config: SearchConfig,
    ) -> Result<Self, SearchError> {
        config.validate()?;
        if cache.k() != config.expansion_k {
            return Err(SearchError::BadConfig(format!(
                "cache k {} differs from expansion_k {}",
                cache.k(),
                config.expansion_k
            )));
        }
        let vocab = model.vocab();
        vocab.check_prefix(prompt)?;
        let forward_bytes = bs_step2_memory(&config.memory_params(prompt.len(), vocab.len()));
        Ok(Self {
            model,
            reward_fn,
            cache,
            tree: SearchTree::new(prompt.to_vec(), false),
            prompt_len: prompt.len(),
            forward_bytes,
            meter: MemoryMeter::new(config.memory_cap),
            rewards: HashMap::new(),
            candidates: Vec::new(),
            iterations: 0,
            patches_to_plausible: None,
            start_calls: model.forward_calls(),
            start_hits: cache.hits(),
            start_runs: reward_fn.invocations(),
            config,
        })
    }

    pub fn tree(&self) -> &SearchTree {
        &self.tree
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn meter(&self) -> &MemoryMeter {
        &self.meter
    }

    /// Distinct complete patches in discovery order.
    pub fn candidates(&self) -> &[PatchCandidate] {
        &self.candidates
    }

    fn generated(&self, id: NodeId) -> usize {
        self.tree.nodes[id].state.len() - self.prompt_len
    }

    /// A node whose partial patch already used the whole token budget.
    fn at_depth_cap(&self, id: NodeId) -> bool {
        self.generated(id) >= self.config.max_sim_tokens
    }

    /// Descends from the root to the first node that is unexpanded or
    /// terminal. Ties go to the smaller action token id.
    pub fn select(&self) -> NodeId {
        let mut cur = SearchTree::ROOT;
        loop {
            let node = &self.tree.nodes[cur];
            if !node.expanded || node.is_terminal || node.children.is_empty() {
                return cur;
            }
            let mut best: Option<(NodeId, f64)> = None;
            for &(_, child) in &node.children {
                let c = &self.tree.nodes[child];
                if self.config.prune_exhausted && c.exhausted {
                    continue;
                }
                let score = policy_score(
                    self.config.policy,
                    c.q,
                    c.visits,
                    c.prior,
                    node.visits,
                    &self.config,
                );
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((child, score));
                }
            }
            match best {
                Some((child, _)) => cur = child,
                None => return cur,
            }
        }
    }

    /// Attaches the top-k next tokens of a non-terminal, unexpanded node.
    /// Zero-probability tokens are skipped. Nodes at the depth cap are
    /// marked expanded with no children.
    pub fn expand(&mut self, id: NodeId) -> Result<(), SearchError> {
        let node = &self.tree.nodes[id];
        if node.is_terminal {
            return Err(ModelError::PrefixTerminal.into());
        }
        if node.expanded {
            return Ok(());
        }
        if self.at_depth_cap(id) {
            self.tree.nodes[id].expanded = true;
            return Ok(());
        }
        let state = node.state.clone();
        let top = self.cache.cached_top_k_metered(
            self.model,
            &state,
            &mut self.meter,
            self.forward_bytes,
        )?;
        let vocab = self.model.vocab();
        let mut children: Vec<(TokenId, NodeId)> = Vec::with_capacity(top.len());
        for &(tok, p) in top.entries().iter().filter(|e| e.1 > 0.0) {
            let mut child_state = state.clone();
            child_state.push(tok);
            let child_id = self.tree.nodes.len();
            self.tree.nodes.push(SearchNode {
                state: child_state,
                q: 0.0,
                visits: 0,
                prior: p,
                children: Vec::new(),
                expanded: false,
                is_terminal: vocab.is_terminal(tok),
                parent: Some(id),
                simulated: false,
                exhausted: false,
            });
            children.push((tok, child_id));
        }
        children.sort_unstable_by_key(|c| c.0);
        let node = &mut self.tree.nodes[id];
        node.children = children;
        node.expanded = true;
        Ok(())
    }

    /// Completes the node's partial patch greedily (through the cache) and
    /// scores it. Rewards are memoized per complete token sequence.
    pub fn simulate(&mut self, id: NodeId) -> Result<PatchCandidate, SearchError> {
        let state = self.tree.nodes[id].state.clone();
        let budget = self
            .config
            .max_sim_tokens
            .saturating_sub(self.generated(id));
        let (model, cache, forward_bytes) = (self.model, self.cache, self.forward_bytes);
        let meter = &mut self.meter;
        let rollout = greedy_with(
            model.vocab(),
            &state,
            budget,
            0,
            &mut MemoryMeter::default(),
            |seq| {
                let top = cache.cached_top_k_metered(model, seq, meter, forward_bytes)?;
                Ok::<_, SearchError>(top.argmax().expect("top-k is non-empty"))
            },
        )?;
        self.tree.nodes[id].simulated = true;
        let reward = if rollout.complete {
            match self.rewards.get(&rollout.tokens) {
                Some(&r) => r,
                None => {
                    let r = self.reward_fn.evaluate(&rollout.tokens).reward;
                    self.rewards.insert(rollout.tokens.clone(), r);
                    r
                }
            }
        } else {
            0.0
        };
        Ok(PatchCandidate {
            tokens: rollout.tokens,
            reward,
            iteration: self.iterations + 1,
            source: Source::Flames,
            complete: rollout.complete,
        })
    }

    /// `Q = max(Q, reward)` and `N += 1` from `leaf` up to the root.
    pub fn backprop(&mut self, leaf: NodeId, reward: f64) {
        debug_assert!((0.0..=1.0).contains(&reward));
        let mut cur = Some(leaf);
        while let Some(id) = cur {
            let node = &mut self.tree.nodes[id];
            node.q = node.q.max(reward);
            node.visits += 1;
            cur = node.parent;
        }
    }

    fn refresh_exhausted(&mut self, leaf: NodeId) {
        let mut cur = Some(leaf);
        while let Some(id) = cur {
            let node = &self.tree.nodes[id];
            let done = if node.is_terminal || (node.expanded && node.children.is_empty()) {
                node.simulated
            } else {
                node.expanded
                    && node
                        .children
                        .iter()
                        .all(|&(_, c)| self.tree.nodes[c].exhausted)
            };
            if !done {
                break;
            }
            self.tree.nodes[id].exhausted = true;
            cur = self.tree.nodes[id].parent;
        }
    }

    /// Whether every reachable node is terminal (or at the depth cap) and
    /// has been simulated.
    pub fn exhausted(&self) -> bool {
        self.tree.root().exhausted
    }

    /// Runs one select / expand / simulate / backprop cycle.
    pub fn step(&mut self) -> Result<Iteration, SearchError> {
        let selected = self.select();
        if !self.tree.nodes[selected].is_terminal {
            self.expand(selected)?;
        }
        let rollout = self.simulate(selected)?;
        self.iterations += 1;
        let new_patch =
            rollout.complete && !self.candidates.iter().any(|c| c.tokens == rollout.tokens);
        if new_patch {
            self.candidates.push(rollout.clone());
            if rollout.reward == 1.0 && self.patches_to_plausible.is_none() {
                self.patches_to_plausible = Some(self.candidates.len());
            }
        }
        self.backprop(selected, rollout.reward);
        self.refresh_exhausted(selected);
        Ok(Iteration {
            selected,
            rollout,
            new_patch,
        })
    }

    fn stop_reason(&self, started: Instant) -> Option<StopReason> {
        if self.config.stop_on_plausible && self.patches_to_plausible.is_some() {
            Some(StopReason::Plausible)
        } else if self.candidates.len() >= self.config.max_patches {
            Some(StopReason::MaxPatches)
        } else if self.exhausted() {
            Some(StopReason::Exhausted)
        } else if self.iterations >= self.config.max_iterations {
            Some(StopReason::MaxIterations)
        } else if started.elapsed() >= self.config.timeout {
            Some(StopReason::Timeout)
        } else {
            None
        }
    }

    /// Iterates until a stop condition holds. The timeout is only checked
    /// between iterations.
    pub fn run(mut self) -> Result<SearchOutcome, SearchError> {
        let started = Instant::now();
        let stop_reason = loop {
            if let Some(reason) = self.stop_reason(started) {
                break reason;
            }
            self.step()?;
        };
        Ok(self.finish(stop_reason, started.elapsed()))
    }

    fn finish(self, stop_reason: StopReason, elapsed: Duration) -> SearchOutcome {
        let mut candidates = self.candidates;
        candidates.sort_by(|a, b| {
            b.reward
                .total_cmp(&a.reward)
                .then(a.iteration.cmp(&b.iteration))
        });
        let report = SearchReport {
            iterations: self.iterations,
            distinct_patches: candidates.len(),
            stats: ModelStats {
                forward_calls: self.model.forward_calls() - self.start_calls,
                cache_hits: self.cache.hits() - self.start_hits,
            },
            wall_ms: elapsed.as_millis() as u64,
            peak_bytes: self.meter.peak(),
            stop_reason,
            tree_size: self.tree.len(),
            best_reward: candidates.first().map_or(0.0, |c| c.reward),
            patches_to_plausible: self.patches_to_plausible,
            test_runs: self.reward_fn.invocations() - self.start_runs,
        };
        SearchOutcome { candidates, report }
    }
}

/// Searches for a patch of `bug` that passes `spec`, with a private cache.
pub fn flames_search(
    model: &dyn TokenModel,
    bug: &Bug,
    spec: &Spec,
    config: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    let runner = SpecRunner::new(model.vocab().clone(), spec.clone());
    let cache = if config.use_cache {
        ExpansionCache::new(config.expansion_k)
    } else {
        ExpansionCache::disabled(config.expansion_k)
    };
    FlamesSearch::new(model, &runner, &cache, &bug.prompt_tokens, config.clone())?.run()
}
