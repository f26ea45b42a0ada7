//! Next-token distribution providers.
//!
//! Every model answers one question: given a token prefix that starts with
//! the start-of-sequence token, what is the probability of each vocabulary
//! entry coming next. Distributions are always returned over the full
//! vocabulary; truncation to the top entries happens in [`TokenDist::top_k`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

/// Tolerance used when checking that a distribution sums to one.
pub const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("prefix already ends in a terminal token")]
    PrefixTerminal,
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(TokenId),
    #[error("prefix must start with the start-of-sequence token")]
    MissingSos,
    #[error("terminal token {0} appears before the end of the prefix")]
    TerminalInsidePrefix(TokenId),
    #[error("k must be at least 1")]
    BadK,
    #[error("invalid vocabulary: {0}")]
    BadVocab(String),
    #[error("invalid table rule for prefix {prefix:?}: {reason}")]
    BadRule {
        prefix: Vec<TokenId>,
        reason: String,
    },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("io error: {0}")]
    Io(String),
}

/// An ordered vocabulary with dense ids, a start token and terminal tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    surfaces: Vec<String>,
    index: HashMap<String, TokenId>,
    terminals: BTreeSet<TokenId>,
    sos: TokenId,
}

impl Vocab {
    pub fn new(
        surfaces: Vec<String>,
        terminals: impl IntoIterator<Item = TokenId>,
        sos: TokenId,
    ) -> Result<Self, ModelError> {
        let mut index = HashMap::with_capacity(surfaces.len());
        for (id, s) in surfaces.iter().enumerate() {
            if index.insert(s.clone(), id as TokenId).is_some() {
                return Err(ModelError::BadVocab(format!("duplicate surface {s:?}")));
            }
        }
        let v = surfaces.len() as TokenId;
        let terminals: BTreeSet<TokenId> = terminals.into_iter().collect();
        if terminals.is_empty() {
            return Err(ModelError::BadVocab("no terminal tokens".into()));
        }
        if let Some(&t) = terminals.iter().find(|&&t| t >= v) {
            return Err(ModelError::BadVocab(format!("terminal {t} out of range")));
        }
        if sos >= v {
            return Err(ModelError::BadVocab(format!("sos {sos} out of range")));
        }
        if terminals.contains(&sos) {
            return Err(ModelError::BadVocab("sos cannot be terminal".into()));
        }
        Ok(Self {
            surfaces,
            index,
            terminals,
            sos,
        })
    }

    /// Convenience constructor from string slices and terminal surfaces.
    pub fn from_surfaces(
        surfaces: &[&str],
        terminals: &[&str],
        sos: &str,
    ) -> Result<Self, ModelError> {
        let owned: Vec<String> = surfaces.iter().map(|s| s.to_string()).collect();
        let lookup = |s: &str| {
            surfaces
                .iter()
                .position(|x| *x == s)
                .map(|i| i as TokenId)
                .ok_or_else(|| ModelError::BadVocab(format!("unknown surface {s:?}")))
        };
        let terms = terminals
            .iter()
            .map(|t| lookup(t))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(owned, terms, lookup(sos)?)
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn sos(&self) -> TokenId {
        self.sos
    }

    pub fn terminals(&self) -> &BTreeSet<TokenId> {
        &self.terminals
    }

    pub fn is_terminal(&self, id: TokenId) -> bool {
        self.terminals.contains(&id)
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    /// Tokens a model may emit: everything except the start token.
    pub fn emittable(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.len() as TokenId).filter(move |&t| t != self.sos)
    }

    /// Checks the shared `next_dist` precondition.
    pub fn check_prefix(&self, prefix: &[TokenId]) -> Result<(), ModelError> {
        let v = self.len() as TokenId;
        if let Some(&bad) = prefix.iter().find(|&&t| t >= v) {
            return Err(ModelError::UnknownToken(bad));
        }
        match prefix.first() {
            Some(&first) if first == self.sos => {}
            _ => return Err(ModelError::MissingSos),
        }
        let (last, body) = prefix.split_last().expect("non-empty");
        if let Some(&t) = body.iter().find(|&&t| self.is_terminal(t)) {
            return Err(ModelError::TerminalInsidePrefix(t));
        }
        if self.is_terminal(*last) {
            return Err(ModelError::PrefixTerminal);
        }
        Ok(())
    }

    /// Whether the sequence ends in a terminal token.
    pub fn is_complete(&self, tokens: &[TokenId]) -> bool {
        tokens.last().is_some_and(|&t| self.is_terminal(t))
    }

    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| self.surface(t).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A next-token distribution, sorted by descending probability with ties
/// broken by ascending token id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDist {
    entries: Vec<(TokenId, f64)>,
}

fn rank_order(a: &(TokenId, f64), b: &(TokenId, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

impl TokenDist {
    /// Builds a distribution from one probability per token id.
    pub fn from_probs(probs: &[f64]) -> Self {
        let entries = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (i as TokenId, p))
            .collect();
        Self::from_entries(entries)
    }

    /// Builds a distribution from arbitrary `(id, prob)` pairs, sorting them
    /// into rank order.
    pub fn from_entries(mut entries: Vec<(TokenId, f64)>) -> Self {
        entries.sort_by(rank_order);
        Self { entries }
    }

    pub fn entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.entries.iter().find(|e| e.0 == id).map_or(0.0, |e| e.1)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Highest-ranked entry.
    pub fn argmax(&self) -> Option<(TokenId, f64)> {
        self.entries.first().copied()
    }

    /// First `min(k, len)` entries. Probabilities are not renormalized.
    pub fn top_k(&self, k: usize) -> Result<TokenDist, ModelError> {
        if k == 0 {
            return Err(ModelError::BadK);
        }
        Ok(Self {
            entries: self.entries[..k.min(self.entries.len())].to_vec(),
        })
    }
}

/// Call counters shared by models and the expansion cache.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStats {
    pub forward_calls: u64,
    pub cache_hits: u64,
}

/// A provider of next-token distributions.
///
/// Implementations are immutable after construction apart from their call
/// counter, so a single model may be shared by concurrent decodes.
pub trait TokenModel: Send + Sync {
    fn vocab(&self) -> &Vocab;

    fn next_dist(&self, prefix: &[TokenId]) -> Result<TokenDist, ModelError>;

    /// Number of successful `next_dist` calls served so far.
    fn forward_calls(&self) -> u64;
}

#[derive(Debug, Default)]
pub(crate) struct CallCounter(AtomicU64);

impl CallCounter {
    pub(crate) fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Every token, including the start token, equally likely.
#[derive(Debug)]
pub struct UniformModel {
    vocab: Vocab,
    calls: CallCounter,
}

impl UniformModel {
    pub fn new(vocab: Vocab) -> Self {
        Self {
            vocab,
            calls: CallCounter::default(),
        }
    }
}

impl TokenModel for UniformModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_dist(&self, prefix: &[TokenId]) -> Result<TokenDist, ModelError> {
        self.vocab.check_prefix(prefix)?;
        self.calls.bump();
        let v = self.vocab.len();
        Ok(TokenDist::from_probs(&vec![1.0 / v as f64; v]))
    }

    fn forward_calls(&self) -> u64 {
        self.calls.get()
    }
}

/// Explicit prefix-to-distribution rules. Prefixes without a rule get a
/// uniform distribution over the terminal tokens.
#[derive(Debug)]
pub struct TableModel {
    vocab: Vocab,
    rules: HashMap<Vec<TokenId>, Vec<f64>>,
    calls: CallCounter,
}

impl TableModel {
    pub fn new(vocab: Vocab) -> Self {
        Self {
            vocab,
            rules: HashMap::new(),
            calls: CallCounter::default(),
        }
    }

    /// Adds a rule; the listed probabilities must be non-negative and sum to one.
    pub fn with_rule(
        mut self,
        prefix: Vec<TokenId>,
        probs: &[(TokenId, f64)],
    ) -> Result<Self, ModelError> {
        self.insert_rule(prefix, probs)?;
        Ok(self)
    }

    pub fn insert_rule(
        &mut self,
        prefix: Vec<TokenId>,
        probs: &[(TokenId, f64)],
    ) -> Result<(), ModelError> {
        let bad = |reason: String| ModelError::BadRule {
            prefix: prefix.clone(),
            reason,
        };
        self.vocab
            .check_prefix(&prefix)
            .map_err(|e| bad(e.to_string()))?;
        let mut dense = vec![0.0; self.vocab.len()];
        for &(id, p) in probs {
            if id as usize >= dense.len() {
                return Err(bad(format!("token {id} out of range")));
            }
            if !(p.is_finite() && p >= 0.0) {
                return Err(bad(format!("probability {p} for token {id}")));
            }
            dense[id as usize] += p;
        }
        let total: f64 = dense.iter().sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(bad(format!("probabilities sum to {total}")));
        }
        self.rules.insert(prefix, dense);
        Ok(())
    }

    pub fn rules(&self) -> impl Iterator<Item = (&Vec<TokenId>, &Vec<f64>)> {
        self.rules.iter()
    }

    pub fn from_file(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Parses the table-model file format:
    /// `{"vocab": {"tokens": [...], "terminals": [...], "sos": id}, "rules": {"<ids>": {"<id>": p}}}`.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: TableFile =
            serde_json::from_str(text).map_err(|e| ModelError::Protocol(e.to_string()))?;
        let vocab = Vocab::new(file.vocab.tokens, file.vocab.terminals, file.vocab.sos)?;
        let mut model = TableModel::new(vocab);
        for (key, dist) in file.rules {
            let prefix = parse_id_list(&key)?;
            let probs = dist
                .into_iter()
                .map(|(id, p)| Ok((parse_id(&id)?, p)))
                .collect::<Result<Vec<_>, ModelError>>()?;
            model.insert_rule(prefix, &probs)?;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let mut rules = BTreeMap::new();
        for (prefix, probs) in &self.rules {
            let key = prefix
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            let dist = probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(i, &p)| (i.to_string(), p))
                .collect();
            rules.insert(key, dist);
        }
        let file = TableFile {
            vocab: VocabFile {
                tokens: self.vocab.surfaces().to_vec(),
                terminals: self.vocab.terminals().iter().copied().collect(),
                sos: self.vocab.sos(),
            },
            rules,
        };
        serde_json::to_string_pretty(&file).expect("table model serializes")
    }
}

fn parse_id(s: &str) -> Result<TokenId, ModelError> {
    s.trim()
        .parse()
        .map_err(|_| ModelError::Protocol(format!("bad token id {s:?}")))
}

fn parse_id_list(s: &str) -> Result<Vec<TokenId>, ModelError> {
    s.split_whitespace().map(parse_id).collect()
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    terminals: Vec<TokenId>,
    sos: TokenId,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    vocab: VocabFile,
    rules: BTreeMap<String, BTreeMap<String, f64>>,
}

impl TokenModel for TableModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_dist(&self, prefix: &[TokenId]) -> Result<TokenDist, ModelError> {
        self.vocab.check_prefix(prefix)?;
        self.calls.bump();
        let probs = match self.rules.get(prefix) {
            Some(p) => p.clone(),
            None => {
                let share = 1.0 / self.vocab.terminals().len() as f64;
                (0..self.vocab.len() as TokenId)
                    .map(|t| {
                        if self.vocab.is_terminal(t) {
                            share
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
        };
        Ok(TokenDist::from_probs(&probs))
    }

    fn forward_calls(&self) -> u64 {
        self.calls.get()
    }
}

/// Additively smoothed n-gram model with backoff to shorter contexts.
///
/// The context is the last `order - 1` tokens of the prefix (or the whole
/// prefix when it is shorter). A context never seen during training backs off
/// to the next shorter one. At the chosen level,
/// `P(w | ctx) = (c(ctx, w) + delta) / (c(ctx) + delta * |V \ {sos}|)`.
/// The start token is never predicted.
#[derive(Debug)]
pub struct NgramModel {
    vocab: Vocab,
    order: usize,
    delta: f64,
    counts: HashMap<Vec<TokenId>, Vec<u64>>,
    calls: CallCounter,
}

impl NgramModel {
    pub const DEFAULT_ORDER: usize = 2;
    pub const DEFAULT_DELTA: f64 = 1.0;

    /// Trains on sequences that each start with the start token. Sequences
    /// are used as-is; a training sequence without a trailing terminal simply
    /// contributes no end-of-sequence count.
    pub fn train<'a>(
        vocab: Vocab,
        order: usize,
        delta: f64,
        corpus: impl IntoIterator<Item = &'a [TokenId]>,
    ) -> Result<Self, ModelError> {
        if order == 0 {
            return Err(ModelError::BadVocab(
                "n-gram order must be at least 1".into(),
            ));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(ModelError::BadVocab(format!("smoothing delta {delta}")));
        }
        let mut model = Self {
            vocab,
            order,
            delta,
            counts: HashMap::new(),
            calls: CallCounter::default(),
        };
        for seq in corpus {
            model.add_sequence(seq)?;
        }
        Ok(model)
    }

    fn add_sequence(&mut self, seq: &[TokenId]) -> Result<(), ModelError> {
        let v = self.vocab.len();
        if seq.first() != Some(&self.vocab.sos()) {
            return Err(ModelError::MissingSos);
        }
        if let Some(&bad) = seq.iter().find(|&&t| t as usize >= v) {
            return Err(ModelError::UnknownToken(bad));
        }
        for pos in 1..seq.len() {
            let max_ctx = (self.order - 1).min(pos);
            for ctx_len in 0..=max_ctx {
                let ctx = seq[pos - ctx_len..pos].to_vec();
                let row = self.counts.entry(ctx).or_insert_with(|| vec![0; v]);
                row[seq[pos] as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Raw continuation counts recorded for an exact context.
    pub fn counts(&self, context: &[TokenId]) -> Option<&[u64]> {
        self.counts.get(context).map(Vec::as_slice)
    }

    fn smoothed(&self, row: Option<&[u64]>) -> Vec<f64> {
        let v = self.vocab.len();
        let sos = self.vocab.sos() as usize;
        let support = (v - 1) as f64;
        let total: u64 = row.map_or(0, |r| {
            r.iter()
                .enumerate()
                .filter(|(i, _)| *i != sos)
                .map(|(_, c)| c)
                .sum()
        });
        let denom = total as f64 + self.delta * support;
        if denom == 0.0 {
            return (0..v)
                .map(|i| if i == sos { 0.0 } else { 1.0 / support })
                .collect();
        }
        (0..v)
            .map(|i| {
                if i == sos {
                    0.0
                } else {
                    (row.map_or(0, |r| r[i]) as f64 + self.delta) / denom
                }
            })
            .collect()
    }
}

impl TokenModel for NgramModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_dist(&self, prefix: &[TokenId]) -> Result<TokenDist, ModelError> {
        self.vocab.check_prefix(prefix)?;
        self.calls.bump();
        let max_ctx = (self.order - 1).min(prefix.len());
        let row = (0..=max_ctx)
            .rev()
            .find_map(|len| self.counts.get(&prefix[prefix.len() - len..]))
            .map(Vec::as_slice);
        Ok(TokenDist::from_probs(&self.smoothed(row)))
    }

    fn forward_calls(&self) -> u64 {
        self.calls.get()
    }
}

impl<M: TokenModel + ?Sized> TokenModel for std::sync::Arc<M> {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn next_dist(&self, prefix: &[TokenId]) -> Result<TokenDist, ModelError> {
        (**self).next_dist(prefix)
    }

    fn forward_calls(&self) -> u64 {
        (**self).forward_calls()
    }
}

impl<M: TokenModel + ?Sized> TokenModel for Box<M> {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn next_dist(&self, prefix: &[TokenId]) -> Result<TokenDist, ModelError> {
        (**self).next_dist(prefix)
    }

    fn forward_calls(&self) -> u64 {
        (**self).forward_calls()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> Vocab {
        Vocab::from_surfaces(&["<s>", "</s>", "a", "b", "c"], &["</s>"], "<s>").unwrap()
    }

    #[test]
    fn vocab_rejects_bad_definitions() {
        assert!(Vocab::from_surfaces(&["<s>", "a", "a"], &["a"], "<s>").is_err());
        assert!(Vocab::new(vec!["<s>".into(), "x".into()], [], 0).is_err());
        assert!(Vocab::new(vec!["<s>".into(), "x".into()], [0], 0).is_err());
        assert!(Vocab::new(vec!["<s>".into(), "x".into()], [5], 0).is_err());
    }

    #[test]
    fn prefix_checks() {
        let v = abc();
        assert_eq!(v.check_prefix(&[]), Err(ModelError::MissingSos));
        assert_eq!(v.check_prefix(&[2]), Err(ModelError::MissingSos));
        assert_eq!(v.check_prefix(&[0, 1]), Err(ModelError::PrefixTerminal));
        assert_eq!(
            v.check_prefix(&[0, 1, 2]),
            Err(ModelError::TerminalInsidePrefix(1))
        );
        assert_eq!(v.check_prefix(&[0, 9]), Err(ModelError::UnknownToken(9)));
        assert!(v.check_prefix(&[0, 2, 3]).is_ok());
    }

    #[test]
    fn table_rule_and_default() {
        let m = TableModel::new(abc())
            .with_rule(vec![0], &[(2, 0.7), (1, 0.3)])
            .unwrap();
        let d = m.next_dist(&[0]).unwrap();
        assert_eq!(&d.entries()[..2], &[(2, 0.7), (1, 0.3)]);
        assert_eq!(d.len(), 5);
        // unlisted prefix: uniform over terminals
        let d = m.next_dist(&[0, 3]).unwrap();
        assert_eq!(d.argmax(), Some((1, 1.0)));
        assert_eq!(m.forward_calls(), 2);
        assert_eq!(m.next_dist(&[0, 1]), Err(ModelError::PrefixTerminal));
        assert_eq!(m.next_dist(&[0, 7]), Err(ModelError::UnknownToken(7)));
        assert_eq!(m.forward_calls(), 2);
    }

    #[test]
    fn table_rule_validation() {
        let m = TableModel::new(abc());
        assert!(m.with_rule(vec![0], &[(2, 0.5)]).is_err());
        assert!(TableModel::new(abc())
            .with_rule(vec![0], &[(2, 1.5), (3, -0.5)])
            .is_err());
        assert!(TableModel::new(abc())
            .with_rule(vec![0, 1], &[(2, 1.0)])
            .is_err());
    }

    #[test]
    fn uniform_over_four() {
        let v = Vocab::from_surfaces(&["<s>", "e", "a", "b"], &["e"], "<s>").unwrap();
        let d = UniformModel::new(v).next_dist(&[0]).unwrap();
        assert_eq!(d.entries(), &[(0, 0.25), (1, 0.25), (2, 0.25), (3, 0.25)]);
    }

    #[test]
    fn bigram_counts_without_smoothing() {
        // corpus "ab ab ac": after `a`, b twice and c once
        let seqs: Vec<Vec<TokenId>> = vec![vec![0, 2, 3, 1], vec![0, 2, 3, 1], vec![0, 2, 4, 1]];
        let m = NgramModel::train(abc(), 2, 0.0, seqs.iter().map(Vec::as_slice)).unwrap();
        let d = m.next_dist(&[0, 2]).unwrap();
        assert!((d.prob(3) - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.prob(4) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(d.prob(0), 0.0);
    }

    #[test]
    fn ngram_add_one_and_backoff() {
        let seqs: Vec<Vec<TokenId>> = vec![vec![0, 2, 3, 1]];
        let m = NgramModel::train(abc(), 3, 1.0, seqs.iter().map(Vec::as_slice)).unwrap();
        // context [2, 3] seen once, followed by </s>
        let d = m.next_dist(&[0, 2, 3]).unwrap();
        assert!((d.prob(1) - 2.0 / 5.0).abs() < 1e-12);
        assert!((d.total() - 1.0).abs() < 1e-12);
        // unseen trigram context [3, 3] backs off to bigram context [3]
        let d = m.next_dist(&[0, 2, 3, 3]).unwrap();
        assert!((d.prob(1) - 2.0 / 5.0).abs() < 1e-12);
        // unseen everywhere backs off to unigram counts: a, b, </s> once each
        let d = m.next_dist(&[0, 4]).unwrap();
        assert!((d.prob(4) - 1.0 / 7.0).abs() < 1e-12);
        assert!((d.prob(2) - 2.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn untrained_ngram_is_uniform_without_sos() {
        let m = NgramModel::train(abc(), 2, 0.0, std::iter::empty()).unwrap();
        let d = m.next_dist(&[0]).unwrap();
        assert_eq!(d.prob(0), 0.0);
        assert!((d.prob(2) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn top_k_tie_break_and_bounds() {
        let d = TokenDist::from_entries(vec![(2, 0.5), (1, 0.5)]);
        assert_eq!(d.top_k(1).unwrap().entries(), &[(1, 0.5)]);
        assert_eq!(d.top_k(0), Err(ModelError::BadK));
        assert_eq!(d.top_k(10).unwrap().len(), 2);
    }

    #[test]
    fn table_json_round_trip() {
        let m = TableModel::new(abc())
            .with_rule(vec![0], &[(2, 0.7), (1, 0.3)])
            .unwrap()
            .with_rule(vec![0, 2], &[(1, 1.0)])
            .unwrap();
        let back = TableModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back.vocab(), m.vocab());
        assert_eq!(back.next_dist(&[0]).unwrap(), m.next_dist(&[0]).unwrap());
        assert_eq!(
            back.next_dist(&[0, 2]).unwrap(),
            m.next_dist(&[0, 2]).unwrap()
        );
    }

    #[test]
    fn table_json_parses_documented_shape() {
        let text = r#"{"vocab": {"tokens": ["<s>", "end", "a"], "terminals": [1], "sos": 0},
                       "rules": {"0": {"2": 0.6, "1": 0.4}, "0 2": {"1": 1.0}}}"#;
        let m = TableModel::from_json(text).unwrap();
        assert_eq!(m.next_dist(&[0]).unwrap().argmax(), Some((2, 0.6)));
        assert!(TableModel::from_json(r#"{"vocab": 3}"#).is_err());
    }
}
