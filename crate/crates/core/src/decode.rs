//! Baseline decoders: greedy, batched beam search, sequential beam search
//! and ancestral sampling.
//!
//! Every decoder charges a [`MemoryMeter`] once per decode step, using the
//! step cost from [`crate::costmodel`]: with `n_in` the prompt length,
//! `n_out` the new-token budget and `v` the vocabulary size,
//!
//! * batched beam search holds `k * alpha` for the forward plus a
//!   `k * beta` output buffer;
//! * sequential beam search holds two `k * beta` buffers (the per-sub-batch
//!   stack and the stacked output) and runs `k` forwards of `alpha` one
//!   after another;
//! * greedy decoding and each sampling rollout are a beam of one.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{MemoryMeter, MemoryModelParams, SimulatedOom};
use crate::model::{ModelError, TokenDist, TokenId, TokenModel, Vocab};

/// Default opaque forward cost, in abstract bytes.
pub const DEFAULT_ALPHA: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub seed: u64,
    pub memory_cap: Option<u64>,
    /// Memory of one single-sequence model forward.
    pub alpha: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 1,
            max_new_tokens: 16,
            temperature: 1.0,
            seed: 0,
            memory_cap: None,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl DecodeConfig {
    pub fn with_beam_size(self, beam_size: usize) -> Self {
        Self { beam_size, ..self }
    }

    pub fn with_max_new_tokens(self, max_new_tokens: usize) -> Self {
        Self {
            max_new_tokens,
            ..self
        }
    }

    pub fn with_memory_cap(self, memory_cap: Option<u64>) -> Self {
        Self { memory_cap, ..self }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam_size == 0 {
            return Err(DecodeError::BadConfig(
                "beam size must be at least 1".into(),
            ));
        }
        if self.max_new_tokens == 0 {
            return Err(DecodeError::BadConfig(
                "max new tokens must be at least 1".into(),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(DecodeError::BadConfig(format!(
                "temperature {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Cost-model parameters for decoding `prompt_len` tokens with `vocab_len` entries.
    pub fn memory_params(&self, prompt_len: usize, vocab_len: usize) -> MemoryModelParams {
        MemoryModelParams::new(
            self.alpha,
            self.beam_size as u64,
            prompt_len as u64,
            self.max_new_tokens as u64,
            vocab_len as u64,
        )
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oom(#[from] SimulatedOom),
    #[error("bad decode config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSequence {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub complete: bool,
}

/// Final ranking: higher log-probability first, then lexicographic tokens.
pub fn rank(a: &ScoredSequence, b: &ScoredSequence) -> Ordering {
    b.logprob
        .total_cmp(&a.logprob)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Re-scores `tokens[prompt_len..]` against the model.
pub fn rescore(
    model: &dyn TokenModel,
    tokens: &[TokenId],
    prompt_len: usize,
) -> Result<f64, ModelError> {
    let mut lp = 0.0;
    for t in prompt_len..tokens.len() {
        lp += model.next_dist(&tokens[..t])?.prob(tokens[t]).ln();
    }
    Ok(lp)
}

/// Charges one greedy-sized step (a beam of one) around `f`.
pub(crate) fn metered_step<T, E: From<SimulatedOom>>(
    meter: &mut MemoryMeter,
    step_bytes: u64,
    f: impl FnOnce() -> Result<T, E>,
) -> Result<T, E> {
    meter.charge(step_bytes)?;
    let out = f();
    meter.release(step_bytes);
    meter.end_step();
    out
}

/// Greedy completion driven by an arbitrary argmax source. A prefix that is
/// already complete is returned unchanged.
pub(crate) fn greedy_with<E: From<SimulatedOom>>(
    vocab: &Vocab,
    prefix: &[TokenId],
    max_new_tokens: usize,
    step_bytes: u64,
    meter: &mut MemoryMeter,
    mut argmax: impl FnMut(&[TokenId]) -> Result<(TokenId, f64), E>,
) -> Result<ScoredSequence, E> {
    let mut tokens = prefix.to_vec();
    let mut logprob = 0.0;
    let mut budget = max_new_tokens;
    while !vocab.is_complete(&tokens) && budget > 0 {
        let (tok, p) = metered_step(meter, step_bytes, || argmax(&tokens))?;
        tokens.push(tok);
        logprob += p.ln();
        budget -= 1;
    }
    let complete = vocab.is_complete(&tokens);
    Ok(ScoredSequence {
        tokens,
        logprob,
        complete,
    })
}

pub fn greedy_decode(
    model: &dyn TokenModel,
    prefix: &[TokenId],
    config: &DecodeConfig,
) -> Result<ScoredSequence, DecodeError> {
    greedy_decode_metered(
        model,
        prefix,
        config,
        &mut MemoryMeter::new(config.memory_cap),
    )
}

pub fn greedy_decode_metered(
    model: &dyn TokenModel,
    prefix: &[TokenId],
    config: &DecodeConfig,
    meter: &mut MemoryMeter,
) -> Result<ScoredSequence, DecodeError> {
    config.validate()?;
    let vocab = model.vocab();
    vocab.check_prefix(prefix)?;
    let step = crate::costmodel::bs_step2_memory(
        &config
            .with_beam_size(1)
            .memory_params(prefix.len(), vocab.len()),
    );
    greedy_with(vocab, prefix, config.max_new_tokens, step, meter, |seq| {
        let d = model.next_dist(seq)?;
        Ok(d.argmax().expect("non-empty distribution"))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Batching {
    Batched,
    Sequential,
}

pub fn beam_search(
    model: &dyn TokenModel,
    prefix: &[TokenId],
    config: &DecodeConfig,
) -> Result<Vec<ScoredSequence>, DecodeError> {
    beam_search_metered(
        model,
        prefix,
        config,
        &mut MemoryMeter::new(config.memory_cap),
    )
}

pub fn beam_search_metered(
    model: &dyn TokenModel,
    prefix: &[TokenId],
    config: &DecodeConfig,
    meter: &mut MemoryMeter,
) -> Result<Vec<ScoredSequence>, DecodeError> {
    run_beam(model, prefix, config, meter, Batching::Batched)
}

/// Same output as [`beam_search`]; only the memory profile differs.
pub fn sequential_beam_search(
    model: &dyn TokenModel,
    prefix: &[TokenId],
    config: &DecodeConfig,
) -> Result<Vec<ScoredSequence>, DecodeError> {
    sequential_beam_search_metered(
        model,
        prefix,
        config,
        &mut MemoryMeter::new(config.memory_cap),
    )
}

pub fn sequential_beam_search_metered(
    model: &dyn TokenModel,
    prefix: &[TokenId],
    config: &DecodeConfig,
    meter: &mut MemoryMeter,
) -> Result<Vec<ScoredSequence>, DecodeError> {
    run_beam(model, prefix, config, meter, Batching::Sequential)
}

fn run_beam(
    model: &dyn TokenModel,
    prefix: &[TokenId],
    config: &DecodeConfig,
    meter: &mut MemoryMeter,
    batching: Batching,
) -> Result<Vec<ScoredSequence>, DecodeError> {
    config.validate()?;
    let vocab = model.vocab();
    vocab.check_prefix(prefix)?;
    let k = config.beam_size;
    let params = config.memory_params(prefix.len(), vocab.len());
    let buffer = params.k * params.beta();

    let mut beams = vec![ScoredSequence {
        tokens: prefix.to_vec(),
        logprob: 0.0,
        complete: false,
    }];
    for _ in 0..config.max_new_tokens {
        if beams.iter().all(|b| b.complete) {
            break;
        }
        let dists = match batching {
            Batching::Batched => {
                let held = buffer + params.k * params.alpha;
                meter.charge(held)?;
                let d = forward_all(model, &beams);
                meter.release(held);
                d
            }
            Batching::Sequential => {
                meter.charge(2 * buffer)?;
                for _ in 0..k {
                    meter.charge(params.alpha)?;
                    meter.release(params.alpha);
                }
                let d = forward_all(model, &beams);
                meter.release(2 * buffer);
                d
            }
        }?;
        meter.end_step();

        let mut pool = Vec::with_capacity(beams.len() * vocab.len());
        for (beam, dist) in beams.iter().zip(dists) {
            match dist {
                None => pool.push(beam.clone()),
                Some(dist) => pool.extend(extend(vocab, beam, &dist)),
            }
        }
        pool.sort_by(rank);
        pool.truncate(k);
        beams = pool;
    }
    beams.sort_by(rank);
    Ok(beams)
}

fn forward_all(
    model: &dyn TokenModel,
    beams: &[ScoredSequence],
) -> Result<Vec<Option<TokenDist>>, DecodeError> {
    beams
        .iter()
        .map(|b| {
            if b.complete {
                Ok(None)
            } else {
                model.next_dist(&b.tokens).map(Some)
            }
        })
        .collect::<Result<_, _>>()
        .map_err(DecodeError::from)
}

fn extend<'a>(
    vocab: &'a Vocab,
    beam: &'a ScoredSequence,
    dist: &'a TokenDist,
) -> impl Iterator<Item = ScoredSequence> + 'a {
    dist.entries()
        .iter()
        .filter(|e| e.1 > 0.0)
        .map(move |&(tok, p)| {
            let mut tokens = Vec::with_capacity(beam.tokens.len() + 1);
            tokens.extend_from_slice(&beam.tokens);
            tokens.push(tok);
            ScoredSequence {
                tokens,
                logprob: beam.logprob + p.ln(),
                complete: vocab.is_terminal(tok),
            }
        })
}

/// Draws `n_samples` independent rollouts from the temperature-scaled
/// distribution `p^(1/T)` (renormalized). Returned log-probabilities are
/// scored under the unscaled model.
pub fn multiple_sampling(
    model: &dyn TokenModel,
    prefix: &[TokenId],
    config: &DecodeConfig,
    n_samples: usize,
) -> Result<Vec<ScoredSequence>, DecodeError> {
    multiple_sampling_metered(
        model,
        prefix,
        config,
        n_samples,
        &mut MemoryMeter::new(config.memory_cap),
    )
}

pub fn multiple_sampling_metered(
    model: &dyn TokenModel,
    prefix: &[TokenId],
    config: &DecodeConfig,
    n_samples: usize,
    meter: &mut MemoryMeter,
) -> Result<Vec<ScoredSequence>, DecodeError> {
    config.validate()?;
    let vocab = model.vocab();
    vocab.check_prefix(prefix)?;
    let step = crate::costmodel::bs_step2_memory(
        &config
            .with_beam_size(1)
            .memory_params(prefix.len(), vocab.len()),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut tokens = prefix.to_vec();
        let mut logprob = 0.0;
        for _ in 0..config.max_new_tokens {
            let dist = metered_step(meter, step, || {
                model.next_dist(&tokens).map_err(DecodeError::from)
            })?;
            let (tok, p) = sample_scaled(&dist, config.temperature, &mut rng);
            tokens.push(tok);
            logprob += p.ln();
            if vocab.is_terminal(tok) {
                break;
            }
        }
        let complete = vocab.is_complete(&tokens);
        out.push(ScoredSequence {
            tokens,
            logprob,
            complete,
        });
    }
    Ok(out)
}

/// Samples one entry of `dist` after temperature scaling. Returns the token
/// and its unscaled probability.
fn sample_scaled(dist: &TokenDist, temperature: f64, rng: &mut impl Rng) -> (TokenId, f64) {
    let live: Vec<(TokenId, f64)> = dist
        .entries()
        .iter()
        .copied()
        .filter(|e| e.1 > 0.0)
        .collect();
    let scaled: Vec<f64> = if temperature == 1.0 {
        live.iter().map(|e| e.1).collect()
    } else {
        let logs: Vec<f64> = live.iter().map(|e| e.1.ln() / temperature).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        logs.iter().map(|l| (l - max).exp()).collect()
    };
    let total: f64 = scaled.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (entry, w) in live.iter().zip(&scaled) {
        if u < *w {
            return *entry;
        }
        u -= w;
    }
    *live.last().expect("distribution has positive mass")
}
