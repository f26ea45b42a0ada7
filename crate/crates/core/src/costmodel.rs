//! Analytic decode-step memory model and the abstract memory meter.
//!
//! All quantities are integer "abstract bytes". `alpha` is the opaque cost
//! of one model forward on a single sequence; `beta` is the size of one
//! beam's float32 output buffer, `4 * (n_in + n_out) * v`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Beam sizes evaluated by [`sweep`].
pub const SWEEP_BEAM_SIZES: [u64; 6] = [1, 10, 25, 50, 100, 200];

/// Bytes per output logit (float32).
pub const BYTES_PER_LOGIT: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryModelParams {
    pub alpha: u64,
    pub k: u64,
    pub n_in: u64,
    pub n_out: u64,
    pub v: u64,
}

impl MemoryModelParams {
    pub fn new(alpha: u64, k: u64, n_in: u64, n_out: u64, v: u64) -> Self {
        Self {
            alpha,
            k,
            n_in,
            n_out,
            v,
        }
    }

    pub fn with_k(self, k: u64) -> Self {
        Self { k, ..self }
    }

    pub fn beta(&self) -> u64 {
        BYTES_PER_LOGIT * (self.n_in + self.n_out) * self.v
    }
}

/// Batched beam search, one step: `k * alpha + k * beta`.
pub fn bs_step2_memory(p: &MemoryModelParams) -> u64 {
    p.k * p.alpha + p.k * p.beta()
}

/// Sequential beam search, one step: one forward at a time plus the
/// per-sub-batch stack and the final output buffer, `alpha + 2 * k * beta`.
pub fn seqbs_step2_memory(p: &MemoryModelParams) -> u64 {
    p.alpha + 2 * p.k * p.beta()
}

/// `bs - seqbs = (k - 1) * alpha - k * beta`. Negative means the sequential
/// variant uses more memory.
pub fn memory_delta(p: &MemoryModelParams) -> i128 {
    trade_off(p.alpha, p.beta(), p.k)
}

/// `(k - 1) * alpha - k * beta` for a free-standing `beta`.
pub fn trade_off(alpha: u64, beta: u64, k: u64) -> i128 {
    (k as i128 - 1) * alpha as i128 - k as i128 * beta as i128
}

/// Exact test of `alpha / beta <= k / (k - 1)` for `k >= 2`, by
/// cross-multiplication. Returns `None` when `k < 2`.
pub fn seqbs_not_smaller(p: &MemoryModelParams) -> Option<bool> {
    (p.k >= 2).then(|| p.alpha as u128 * (p.k as u128 - 1) <= p.k as u128 * p.beta() as u128)
}

/// Memory of the tree search: it only ever runs single-sequence forwards,
/// so it costs the same as a beam of one regardless of how many patches it
/// generates.
pub fn flames_memory(p: &MemoryModelParams) -> u64 {
    bs_step2_memory(&p.with_k(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("simulated out-of-memory: {requested} bytes would exceed cap {cap} (peak {peak})")]
pub struct SimulatedOom {
    pub requested: u64,
    pub cap: u64,
    pub peak: u64,
}

/// Snapshot of a meter.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MemoryReading {
    pub peak: u64,
    pub per_step: Vec<u64>,
    pub oom: bool,
}

/// Peak-tracking allocation counter with an optional cap.
#[derive(Debug, Clone, Default)]
pub struct MemoryMeter {
    cap: Option<u64>,
    current: u64,
    peak: u64,
    step_peak: u64,
    step_open: bool,
    per_step: Vec<u64>,
    oom: bool,
}

impl MemoryMeter {
    pub fn new(cap: Option<u64>) -> Self {
        Self {
            cap,
            ..Self::default()
        }
    }

    pub fn cap(&self) -> Option<u64> {
        self.cap
    }

    /// Records an allocation. If the resulting level exceeds the cap the
    /// allocation still counts towards the peak and the meter is flagged.
    pub fn charge(&mut self, bytes: u64) -> Result<(), SimulatedOom> {
        self.current += bytes;
        self.peak = self.peak.max(self.current);
        self.step_peak = self.step_peak.max(self.current);
        self.step_open = true;
        match self.cap {
            Some(cap) if self.current > cap => {
                self.oom = true;
                Err(SimulatedOom {
                    requested: bytes,
                    cap,
                    peak: self.peak,
                })
            }
            _ => Ok(()),
        }
    }

    pub fn release(&mut self, bytes: u64) {
        debug_assert!(
            bytes <= self.current,
            "release of {bytes} exceeds held {}",
            self.current
        );
        self.current = self.current.saturating_sub(bytes);
    }

    /// Closes the current step, recording its peak.
    pub fn end_step(&mut self) {
        if self.step_open {
            self.per_step.push(self.step_peak);
        }
        self.step_peak = self.current;
        self.step_open = false;
    }

    pub fn current(&self) -> u64 {
        self.current
    }

    pub fn peak(&self) -> u64 {
        self.peak
    }

    pub fn read(&self) -> MemoryReading {
        let mut per_step = self.per_step.clone();
        if self.step_open {
            per_step.push(self.step_peak);
        }
        MemoryReading {
            peak: self.peak,
            per_step,
            oom: self.oom,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: u64,
    pub bs_bytes: u64,
    pub seqbs_bytes: u64,
    pub delta_bytes: i128,
    pub oom: bool,
}

/// Evaluates the analytic model over [`SWEEP_BEAM_SIZES`]. `params.k` is
/// ignored. A row is flagged `oom` when batched beam search exceeds `cap`.
pub fn sweep(params: &MemoryModelParams, cap: Option<u64>) -> Vec<SweepRow> {
    SWEEP_BEAM_SIZES
        .iter()
        .map(|&k| {
            let p = params.with_k(k);
            let bs = bs_step2_memory(&p);
            SweepRow {
                k,
                bs_bytes: bs,
                seqbs_bytes: seqbs_step2_memory(&p),
                delta_bytes: memory_delta(&p),
                oom: cap.is_some_and(|c| bs > c),
            }
        })
        .collect()
}

/// CSV with header `k,bs_bytes,seqbs_bytes,delta_bytes,oom`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8 csv")
}
