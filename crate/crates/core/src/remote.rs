//! HTTP client for an external next-token endpoint.
//!
//! Wire protocol: `POST {base}/v1/next_token` with body
//! `{"prefix": [ids], "k": k}`; the reply is `{"logprobs": {"<id>": lp}}`.
//! Returned log-probabilities are exponentiated and renormalized over the
//! returned entries only. Tokens the endpoint did not return get probability 0.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{CallCounter, ModelError, TokenDist, TokenId, TokenModel, Vocab};

pub const MAX_ATTEMPTS: u32 = 3;

#[derive(Serialize)]
struct NextTokenRequest<'a> {
    prefix: &'a [TokenId],
    k: usize,
}

#[derive(Deserialize)]
struct NextTokenResponse {
    logprobs: BTreeMap<String, f64>,
}

enum Failure {
    Retry(String),
    Fatal(ModelError),
}

pub struct RemoteModel {
    vocab: Vocab,
    url: String,
    k: usize,
    agent: ureq::Agent,
    base_backoff: Duration,
    max_backoff: Duration,
    calls: CallCounter,
}

impl RemoteModel {
    /// `base` is the endpoint root, e.g. `http://127.0.0.1:8080`.
    pub fn new(vocab: Vocab, base: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        let k = vocab.len();
        Self {
            vocab,
            url: format!("{}/v1/next_token", base.trim_end_matches('/')),
            k,
            agent,
            base_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_secs(2),
            calls: CallCounter::default(),
        }
    }

    /// How many entries to request from the endpoint.
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k.max(1);
        self
    }

    pub fn with_backoff(mut self, base: Duration, max: Duration) -> Self {
        self.base_backoff = base;
        self.max_backoff = max;
        self
    }

    fn attempt(&self, prefix: &[TokenId]) -> Result<TokenDist, Failure> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(NextTokenRequest { prefix, k: self.k })
            .map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(Failure::Retry(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(Failure::Fatal(ModelError::Transport(format!(
                "HTTP {status}"
            ))));
        }
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retry(e.to_string()))?;
        self.parse(&body).map_err(Failure::Fatal)
    }

    fn parse(&self, body: &str) -> Result<TokenDist, ModelError> {
        let reply: NextTokenResponse =
            serde_json::from_str(body).map_err(|e| ModelError::Protocol(e.to_string()))?;
        logprobs_to_dist(&self.vocab, &reply.logprobs)
    }
}

/// Softmax over the returned log-probabilities, padded with zero-probability
/// entries for the rest of the vocabulary.
pub fn logprobs_to_dist(
    vocab: &Vocab,
    logprobs: &BTreeMap<String, f64>,
) -> Result<TokenDist, ModelError> {
    if logprobs.is_empty() {
        return Err(ModelError::Protocol("empty logprobs".into()));
    }
    let mut parsed = Vec::with_capacity(logprobs.len());
    for (key, &lp) in logprobs {
        let id: TokenId = key
            .parse()
            .map_err(|_| ModelError::Protocol(format!("bad token id {key:?}")))?;
        if id as usize >= vocab.len() {
            return Err(ModelError::Protocol(format!(
                "token id {id} outside vocabulary"
            )));
        }
        if lp.is_nan() || lp == f64::INFINITY {
            return Err(ModelError::Protocol(format!(
                "bad logprob {lp} for token {id}"
            )));
        }
        parsed.push((id, lp));
    }
    let max = parsed.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(ModelError::Protocol("all logprobs are -inf".into()));
    }
    let weights: Vec<(TokenId, f64)> = parsed
        .iter()
        .map(|&(id, lp)| (id, (lp - max).exp()))
        .collect();
    let z: f64 = weights.iter().map(|e| e.1).sum();
    let mut probs = vec![0.0; vocab.len()];
    for (id, w) in weights {
        probs[id as usize] = w / z;
    }
    Ok(TokenDist::from_probs(&probs))
}

impl TokenModel for RemoteModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_dist(&self, prefix: &[TokenId]) -> Result<TokenDist, ModelError> {
        self.vocab.check_prefix(prefix)?;
        let mut last = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            if attempt > 0 {
                let wait = self
                    .base_backoff
                    .saturating_mul(1 << (attempt - 1))
                    .min(self.max_backoff);
                std::thread::sleep(wait);
            }
            match self.attempt(prefix) {
                Ok(d) => {
                    self.calls.bump();
                    return Ok(d);
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) => last = msg,
            }
        }
        Err(ModelError::Transport(format!(
            "{MAX_ATTEMPTS} attempts failed; last: {last}"
        )))
    }

    fn forward_calls(&self) -> u64 {
        self.calls.get()
    }
}
