//! Runs one repair algorithm over a bug corpus and aggregates the results.
//!
//! Per bug, the chosen algorithm gets the same patch budget. Beam, sequential
//! beam, sampling and greedy decode first and then validate their distinct
//! complete outputs in model-score order; the tree search validates as it
//! goes. A simulated OOM yields a row with `oom = true` and no patches. Any
//! other per-bug failure is recorded in the row and the campaign moves on.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::costmodel::MemoryMeter;
use crate::decode::{
    beam_search_metered, greedy_decode_metered, multiple_sampling_metered, rank,
    sequential_beam_search_metered, DecodeConfig, DecodeError, ScoredSequence, DEFAULT_ALPHA,
};
use crate::model::{ModelError, NgramModel, TableModel, TokenId, TokenModel, Vocab};
use crate::reward::{
    read_corpus, repair_vocab, sample_program, single_token_variants, BugInstance, CorpusError,
    RewardFn, SpecRunner,
};
use crate::search::{ExpansionCache, FlamesSearch, Policy, SearchConfig, SearchError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Flames,
    Beam,
    Seqbeam,
    Sample,
    Greedy,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Flames,
        Algorithm::Beam,
        Algorithm::Seqbeam,
        Algorithm::Sample,
        Algorithm::Greedy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Flames => "flames",
            Algorithm::Beam => "beam",
            Algorithm::Seqbeam => "seqbeam",
            Algorithm::Sample => "sample",
            Algorithm::Greedy => "greedy",
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm {s:?}"))
    }
}

/// Which next-token model to use.
///
/// String forms: `table:<path>`, `ngram`, `ngram:<order>`,
/// `ngram:<order>:<delta>`, `remote:<base url>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    /// One table model shared by every bug.
    Table { path: PathBuf },
    /// A fresh n-gram model per bug, trained on the buggy program plus
    /// seeded background programs.
    Ngram { order: usize, delta: f64 },
    /// An external next-token endpoint.
    Remote { url: String },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Ngram {
            order: BUG_MODEL_ORDER,
            delta: BUG_MODEL_DELTA,
        }
    }
}

impl FromStr for ModelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "table" if !rest.is_empty() => Ok(ModelSpec::Table { path: PathBuf::from(rest) }),
            "remote" if !rest.is_empty() => Ok(ModelSpec::Remote { url: rest.to_string() }),
            "ngram" => {
                let mut parts = rest.split(':').filter(|p| !p.is_empty());
                let order = match parts.next() {
                    Some(o) => o.parse().map_err(|_| format!("bad n-gram order {o:?}"))?,
                    None => BUG_MODEL_ORDER,
                };
                let delta = match parts.next() {
                    Some(d) => d.parse().map_err(|_| format!("bad n-gram delta {d:?}"))?,
                    None => BUG_MODEL_DELTA,
                };
                if parts.next().is_some() {
                    return Err(format!("trailing fields in model spec {s:?}"));
                }
                if order == 0 {
                    return Err("n-gram order must be at least 1".into());
                }
                Ok(ModelSpec::Ngram { order, delta })
            }
            _ => Err(format!("bad model spec {s:?} (expected table:<path>, ngram[:order[:delta]] or remote:<url>)")),
        }
    }
}

pub const BUG_MODEL_ORDER: usize = 3;
pub const BUG_MODEL_DELTA: f64 = 0.1;
/// Copies of the buggy program in a per-bug training corpus.
pub const BUG_MODEL_REPEATS: usize = 4;
/// Seeded random programs mixed into a per-bug training corpus.
pub const BUG_MODEL_BACKGROUND: usize = 40;

/// Trains the per-bug n-gram model. The buggy program dominates; its
/// single-token variants stand in for a repair-tuned model's sense of nearby
/// edits; the background programs teach it the rest of the grammar.
pub fn bug_model(
    vocab: &Vocab,
    buggy: &[TokenId],
    order: usize,
    delta: f64,
    seed: u64,
) -> Result<NgramModel, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus: Vec<Vec<TokenId>> = vec![buggy.to_vec(); BUG_MODEL_REPEATS];
    corpus.extend(single_token_variants(vocab, buggy));
    for i in 0..BUG_MODEL_BACKGROUND {
        corpus.push(sample_program(&mut rng, i % 3).to_tokens(vocab));
    }
    NgramModel::train(
        vocab.clone(),
        order,
        delta,
        corpus.iter().map(Vec::as_slice),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub algorithm: Algorithm,
    pub model: ModelSpec,
    pub corpus: PathBuf,
    pub beam_size: usize,
    pub expansion_k: usize,
    pub policy: Policy,
    pub max_patches: usize,
    pub timeout: Duration,
    /// Token budget for every decode and rollout.
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub memory_cap: Option<u64>,
    pub alpha: u64,
    pub seed: u64,
    pub stop_on_plausible: bool,
    /// When false, every `wall_ms` is reported as 0 so reports are byte-stable.
    pub record_timing: bool,
    pub parallel: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Flames,
            model: ModelSpec::default(),
            corpus: PathBuf::new(),
            beam_size: 10,
            expansion_k: 10,
            policy: Policy::PucbVar,
            max_patches: 200,
            timeout: Duration::from_secs(60),
            max_new_tokens: 10,
            temperature: 1.0,
            memory_cap: None,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            stop_on_plausible: true,
            record_timing: true,
            parallel: true,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), CampaignError> {
        self.decode_config(0)
            .validate()
            .map_err(|e| CampaignError::Config(e.to_string()))?;
        self.search_config()
            .validate()
            .map_err(|e| CampaignError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            expansion_k: self.expansion_k,
            policy: self.policy,
            max_patches: self.max_patches,
            timeout: self.timeout,
            max_sim_tokens: self.max_new_tokens,
            stop_on_plausible: self.stop_on_plausible,
            alpha: self.alpha,
            memory_cap: self.memory_cap,
            ..SearchConfig::default()
        }
    }

    /// Decoder settings for the bug at `index` (sampling seeds differ per bug).
    pub fn decode_config(&self, index: usize) -> DecodeConfig {
        DecodeConfig {
            beam_size: self.beam_size,
            max_new_tokens: self.max_new_tokens,
            temperature: self.temperature,
            seed: self.seed.wrapping_add(index as u64),
            memory_cap: self.memory_cap,
            alpha: self.alpha,
        }
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("reports cannot be paired: {0}")]
    Pairing(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugRow {
    pub bug_id: String,
    pub plausible_found: bool,
    pub best_reward: f64,
    pub patches_validated: usize,
    /// Validated patches up to and including the first plausible one.
    pub patches_to_plausible: Option<usize>,
    pub best_patch: Option<String>,
    pub iterations: usize,
    pub forward_calls: u64,
    pub wall_ms: u64,
    pub peak_bytes: u64,
    pub oom: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub bugs: usize,
    pub plausible_count: usize,
    pub oom_rate: f64,
    pub error_count: usize,
    /// Mean wall time of rows that found a plausible patch.
    pub mean_time_to_plausible_ms: Option<f64>,
    pub mean_patches_to_plausible: Option<f64>,
    pub mean_peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub rows: Vec<BugRow>,
    pub aggregates: Aggregates,
}

impl CampaignReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn aggregate(rows: &[BugRow]) -> Aggregates {
    let plausible: Vec<&BugRow> = rows.iter().filter(|r| r.plausible_found).collect();
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let times: Vec<f64> = plausible.iter().map(|r| r.wall_ms as f64).collect();
    let ranks: Vec<f64> = plausible
        .iter()
        .filter_map(|r| r.patches_to_plausible)
        .map(|n| n as f64)
        .collect();
    let peaks: Vec<f64> = rows.iter().map(|r| r.peak_bytes as f64).collect();
    Aggregates {
        bugs: rows.len(),
        plausible_count: plausible.len(),
        oom_rate: if rows.is_empty() {
            0.0
        } else {
            rows.iter().filter(|r| r.oom).count() as f64 / rows.len() as f64
        },
        error_count: rows.iter().filter(|r| r.error.is_some()).count(),
        mean_time_to_plausible_ms: mean(&times),
        mean_patches_to_plausible: mean(&ranks),
        mean_peak: mean(&peaks).unwrap_or(0.0),
    }
}

pub fn load_corpus(path: &Path) -> Result<Vec<BugInstance>, CampaignError> {
    let file = File::open(path).map_err(|e| {
        CampaignError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let corpus = read_corpus(BufReader::new(file), &repair_vocab())?;
    if corpus.is_empty() {
        return Err(CorpusError::Empty.into());
    }
    Ok(corpus)
}

/// Model construction, done once per campaign.
enum ModelSource {
    Shared(Arc<dyn TokenModel>),
    PerBug { order: usize, delta: f64 },
}

impl ModelSource {
    fn open(spec: &ModelSpec, vocab: &Vocab) -> Result<Self, CampaignError> {
        match spec {
            ModelSpec::Table { path } => {
                let table = TableModel::from_file(path)?;
                if table.vocab().surfaces() != vocab.surfaces() {
                    return Err(CampaignError::Config(
                        "table model vocabulary differs from the repair vocabulary".into(),
                    ));
                }
                Ok(ModelSource::Shared(Arc::new(table)))
            }
            ModelSpec::Ngram { order, delta } => {
                NgramModel::train(vocab.clone(), *order, *delta, std::iter::empty())?;
                Ok(ModelSource::PerBug {
                    order: *order,
                    delta: *delta,
                })
            }
            #[cfg(feature = "remote")]
            ModelSpec::Remote { url } => Ok(ModelSource::Shared(Arc::new(
                crate::remote::RemoteModel::new(vocab.clone(), url),
            ))),
            #[cfg(not(feature = "remote"))]
            ModelSpec::Remote { .. } => Err(CampaignError::Config(
                "built without remote model support".into(),
            )),
        }
    }

    fn for_bug(
        &self,
        vocab: &Vocab,
        inst: &BugInstance,
        seed: u64,
        index: usize,
    ) -> Result<Arc<dyn TokenModel>, ModelError> {
        match self {
            ModelSource::Shared(m) => Ok(Arc::clone(m)),
            ModelSource::PerBug { order, delta } => Ok(Arc::new(bug_model(
                vocab,
                &inst.bug.buggy_tokens,
                *order,
                *delta,
                seed.wrapping_add(index as u64),
            )?)),
        }
    }
}

/// Reads the corpus named in `config` and runs the campaign on it.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    let corpus = load_corpus(&config.corpus)?;
    run_campaign_on(config, &corpus)
}

/// Runs the campaign on an in-memory corpus. Rows follow corpus order.
pub fn run_campaign_on(
    config: &CampaignConfig,
    corpus: &[BugInstance],
) -> Result<CampaignReport, CampaignError> {
    config.validate()?;
    let vocab = repair_vocab();
    let source = ModelSource::open(&config.model, &vocab)?;
    let run = |(index, inst): (usize, &BugInstance)| run_bug(config, &vocab, &source, index, inst);
    #[cfg(feature = "parallel")]
    let rows: Vec<BugRow> = if config.parallel {
        use rayon::prelude::*;
        corpus.par_iter().enumerate().map(run).collect()
    } else {
        corpus.iter().enumerate().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<BugRow> = corpus.iter().enumerate().map(run).collect();
    let aggregates = aggregate(&rows);
    Ok(CampaignReport {
        config: config.clone(),
        rows,
        aggregates,
    })
}

struct Attempt {
    best: Option<(Vec<TokenId>, f64)>,
    validated: usize,
    patches_to_plausible: Option<usize>,
    iterations: usize,
}

fn run_bug(
    config: &CampaignConfig,
    vocab: &Vocab,
    source: &ModelSource,
    index: usize,
    inst: &BugInstance,
) -> BugRow {
    let started = Instant::now();
    let mut row = BugRow {
        bug_id: inst.bug.id.clone(),
        plausible_found: false,
        best_reward: 0.0,
        patches_validated: 0,
        patches_to_plausible: None,
        best_patch: None,
        iterations: 0,
        forward_calls: 0,
        wall_ms: 0,
        peak_bytes: 0,
        oom: false,
        error: None,
    };
    let model = match source.for_bug(vocab, inst, config.seed, index) {
        Ok(m) => m,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let calls_before = model.forward_calls();
    let runner = SpecRunner::new(vocab.clone(), inst.spec.clone());
    let mut meter = MemoryMeter::new(config.memory_cap);
    match attempt(
        config,
        model.as_ref(),
        &runner,
        &mut meter,
        index,
        &inst.bug.prompt_tokens,
    ) {
        Ok(a) => {
            if let Some((tokens, reward)) = a.best {
                row.best_reward = reward;
                row.best_patch = Some(vocab.render(&tokens));
            }
            row.plausible_found = row.best_reward == 1.0;
            row.patches_validated = a.validated;
            row.patches_to_plausible = a.patches_to_plausible;
            row.iterations = a.iterations;
        }
        Err(AttemptError::Oom) => row.oom = true,
        Err(AttemptError::Other(msg)) => row.error = Some(msg),
    }
    row.peak_bytes = meter.peak();
    row.forward_calls = model.forward_calls() - calls_before;
    if config.record_timing {
        row.wall_ms = started.elapsed().as_millis() as u64;
    }
    row
}

enum AttemptError {
    Oom,
    Other(String),
}

impl From<DecodeError> for AttemptError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Oom(_) => AttemptError::Oom,
            other => AttemptError::Other(other.to_string()),
        }
    }
}

impl From<SearchError> for AttemptError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Oom(_) => AttemptError::Oom,
            other => AttemptError::Other(other.to_string()),
        }
    }
}

fn attempt(
    config: &CampaignConfig,
    model: &dyn TokenModel,
    runner: &SpecRunner,
    meter: &mut MemoryMeter,
    index: usize,
    prompt: &[TokenId],
) -> Result<Attempt, AttemptError> {
    let decode = config.decode_config(index);
    let seqs = match config.algorithm {
        Algorithm::Flames => return run_flames(config, model, runner, meter, prompt),
        Algorithm::Beam => beam_search_metered(model, prompt, &decode, meter)?,
        Algorithm::Seqbeam => sequential_beam_search_metered(model, prompt, &decode, meter)?,
        Algorithm::Sample => {
            multiple_sampling_metered(model, prompt, &decode, config.max_patches, meter)?
        }
        Algorithm::Greedy => vec![greedy_decode_metered(
            model,
            prompt,
            &decode.with_beam_size(1),
            meter,
        )?],
    };
    Ok(validate_ranked(
        seqs,
        runner,
        config.max_patches,
        config.stop_on_plausible,
    ))
}

fn run_flames(
    config: &CampaignConfig,
    model: &dyn TokenModel,
    runner: &SpecRunner,
    meter: &mut MemoryMeter,
    prompt: &[TokenId],
) -> Result<Attempt, AttemptError> {
    let cache = ExpansionCache::new(config.expansion_k);
    let search = FlamesSearch::new(model, runner, &cache, prompt, config.search_config())?;
    // the search keeps its own meter; its peak is mirrored into the row's meter
    let outcome = match search.run() {
        Ok(o) => o,
        Err(SearchError::Oom(o)) => {
            let _ = meter.charge(o.peak);
            return Err(AttemptError::Oom);
        }
        Err(e) => return Err(e.into()),
    };
    meter
        .charge(outcome.report.peak_bytes)
        .map_err(|_| AttemptError::Oom)?;
    meter.release(outcome.report.peak_bytes);
    meter.end_step();
    Ok(Attempt {
        best: outcome
            .candidates
            .first()
            .map(|c| (c.tokens.clone(), c.reward)),
        validated: outcome.report.distinct_patches,
        patches_to_plausible: outcome.report.patches_to_plausible,
        iterations: outcome.report.iterations,
    })
}

/// Validates distinct complete sequences in model-score order.
fn validate_ranked(
    mut seqs: Vec<ScoredSequence>,
    runner: &dyn RewardFn,
    max_patches: usize,
    stop_on_plausible: bool,
) -> Attempt {
    let iterations = seqs.len();
    seqs.sort_by(rank);
    let mut seen = BTreeSet::new();
    let mut out = Attempt {
        best: None,
        validated: 0,
        patches_to_plausible: None,
        iterations,
    };
    for seq in seqs.into_iter().filter(|s| s.complete) {
        if out.validated >= max_patches {
            break;
        }
        if !seen.insert(seq.tokens.clone()) {
            continue;
        }
        let reward = runner.evaluate(&seq.tokens).reward;
        out.validated += 1;
        if out.best.as_ref().is_none_or(|b| reward > b.1) {
            out.best = Some((seq.tokens, reward));
        }
        if reward == 1.0 {
            out.patches_to_plausible.get_or_insert(out.validated);
            if stop_on_plausible {
                break;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDiff {
    pub bug_id: String,
    /// `a - b`, each side counted as 1 if plausible.
    pub plausible_diff: i64,
    pub wall_ms_diff: i64,
    pub peak_bytes_diff: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub algorithm_a: Algorithm,
    pub algorithm_b: Algorithm,
    pub rows: Vec<PairedDiff>,
    pub plausible_diff: i64,
    pub wall_ms_diff: i64,
    pub peak_bytes_diff: i64,
}

/// Per-bug differences `a - b`. Both reports must cover the same bug ids.
pub fn compare(a: &CampaignReport, b: &CampaignReport) -> Result<ComparisonSummary, CampaignError> {
    let by_id: BTreeMap<&str, &BugRow> = b.rows.iter().map(|r| (r.bug_id.as_str(), r)).collect();
    let ids_a: BTreeSet<&str> = a.rows.iter().map(|r| r.bug_id.as_str()).collect();
    let ids_b: BTreeSet<&str> = by_id.keys().copied().collect();
    if ids_a != ids_b || ids_a.len() != a.rows.len() || ids_b.len() != b.rows.len() {
        let only_a = ids_a.difference(&ids_b).count();
        let only_b = ids_b.difference(&ids_a).count();
        return Err(CampaignError::Pairing(format!(
            "{only_a} bug(s) only in the first report, {only_b} only in the second, or duplicate ids"
        )));
    }
    let rows: Vec<PairedDiff> = a
        .rows
        .iter()
        .map(|ra| {
            let rb = by_id[ra.bug_id.as_str()];
            PairedDiff {
                bug_id: ra.bug_id.clone(),
                plausible_diff: ra.plausible_found as i64 - rb.plausible_found as i64,
                wall_ms_diff: ra.wall_ms as i64 - rb.wall_ms as i64,
                peak_bytes_diff: ra.peak_bytes as i64 - rb.peak_bytes as i64,
            }
        })
        .collect();
    Ok(ComparisonSummary {
        algorithm_a: a.config.algorithm,
        algorithm_b: b.config.algorithm,
        plausible_diff: rows.iter().map(|r| r.plausible_diff).sum(),
        wall_ms_diff: rows.iter().map(|r| r.wall_ms_diff).sum(),
        peak_bytes_diff: rows.iter().map(|r| r.peak_bytes_diff).sum(),
        rows,
    })
}

pub const ABLATION_KS: [usize; 4] = [3, 5, 7, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub policy: Policy,
    pub expansion_k: usize,
    pub plausible_count: usize,
    pub bugs: usize,
    pub mean_patches_to_plausible: Option<f64>,
    pub mean_iterations: f64,
    pub forward_calls: u64,
}

/// Runs the tree search once per (policy, expansion k) pair.
pub fn ablate(
    base: &CampaignConfig,
    corpus: &[BugInstance],
    policies: &[Policy],
    ks: &[usize],
) -> Result<Vec<AblationRow>, CampaignError> {
    let mut out = Vec::with_capacity(policies.len() * ks.len());
    for &policy in policies {
        for &k in ks {
            let config = CampaignConfig {
                algorithm: Algorithm::Flames,
                policy,
                expansion_k: k,
                ..base.clone()
            };
            let report = run_campaign_on(&config, corpus)?;
            let rows = &report.rows;
            out.push(AblationRow {
                policy,
                expansion_k: k,
                plausible_count: report.aggregates.plausible_count,
                bugs: rows.len(),
                mean_patches_to_plausible: report.aggregates.mean_patches_to_plausible,
                mean_iterations: rows.iter().map(|r| r.iterations as f64).sum::<f64>()
                    / rows.len().max(1) as f64,
                forward_calls: rows.iter().map(|r| r.forward_calls).sum(),
            });
        }
    }
    Ok(out)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "policy",
        "k",
        "plausible",
        "bugs",
        "mean_patches_to_plausible",
        "mean_iterations",
        "forward_calls",
    ])
    .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.policy.name().to_string(),
            r.expansion_k.to_string(),
            r.plausible_count.to_string(),
            r.bugs.to_string(),
            r.mean_patches_to_plausible
                .map_or(String::new(), |m| format!("{m:.3}")),
            format!("{:.3}", r.mean_iterations),
            r.forward_calls.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}
