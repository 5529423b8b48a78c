//! Delay-sequence generators for the simulators: constant, uniform-random,
//! and burst schedules, a cyclic schedule (the divergence counterexample's
//! `τ_k = k mod T`), and replay of recorded delay traces.
//!
//! Every emitted delay is clamped to `[0, min(τ, k)]`, and replaying the
//! same seed reproduces the identical sequence bit-for-bit. Random draws use
//! per-worker ChaCha streams keyed by `(seed, worker)` and a fixed word
//! position per iteration, so the value at `(worker, k)` never depends on
//! how many other draws happened.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// A delay model: a deterministic (or seeded-pseudorandom) map from the
/// iteration index to the staleness `τ_k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DelayModel {
    /// `τ_k = min(τ, k)`.
    Constant { tau: usize },
    /// `τ_k ~ U{0..min(τ, k)}`, independent across iterations and workers.
    Uniform { tau: usize, seed: u64 },
    /// `τ_k = τ` at a single epoch (the configured `burst_at`, deferred to
    /// the first `k ≥ τ` so the full magnitude is expressible) and 0
    /// elsewhere.
    Burst { tau: usize, burst_at: usize },
    /// `τ_k = k mod period` — the counterexample's cyclic schedule.
    Cyclic { period: usize },
    /// Replay of a recorded integer sequence, index = iteration.
    Trace { delays: Vec<usize> },
}

impl DelayModel {
    pub fn constant(tau: usize) -> Self {
        DelayModel::Constant { tau }
    }

    pub fn uniform(tau: usize, seed: u64) -> Self {
        DelayModel::Uniform { tau, seed }
    }

    pub fn burst(tau: usize, burst_at: usize) -> Self {
        DelayModel::Burst { tau, burst_at }
    }

    /// Burst at the default epoch: the first iteration that can express the
    /// full delay, `k = τ`.
    pub fn burst_default(tau: usize) -> Self {
        DelayModel::Burst { tau, burst_at: tau }
    }

    pub fn cyclic(period: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::BadPolicy("cyclic delay period must be >= 1".into()));
        }
        Ok(DelayModel::Cyclic { period })
    }

    pub fn trace(delays: Vec<usize>) -> Self {
        DelayModel::Trace { delays }
    }

    /// Upper bound on every delay this model can emit.
    pub fn bound(&self) -> usize {
        match self {
            DelayModel::Constant { tau }
            | DelayModel::Uniform { tau, .. }
            | DelayModel::Burst { tau, .. } => *tau,
            DelayModel::Cyclic { period } => period - 1,
            DelayModel::Trace { delays } => delays.iter().copied().max().unwrap_or(0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DelayModel::Constant { .. } => "constant",
            DelayModel::Uniform { .. } => "uniform",
            DelayModel::Burst { .. } => "burst",
            DelayModel::Cyclic { .. } => "cyclic",
            DelayModel::Trace { .. } => "trace",
        }
    }

    /// The delay at iteration `k` (worker 0 for the random model).
    pub fn next_delay(&self, k: usize) -> Result<usize> {
        self.delay_for_worker(k, 0)
    }

    fn delay_for_worker(&self, k: usize, worker: usize) -> Result<usize> {
        let tau_k = match self {
            DelayModel::Constant { tau } => (*tau).min(k),
            DelayModel::Uniform { tau, seed } => uniform_draw(*seed, worker, k, (*tau).min(k)),
            DelayModel::Burst { tau, burst_at } => {
                let epoch = (*burst_at).max(*tau);
                if k == epoch {
                    *tau
                } else {
                    0
                }
            }
            DelayModel::Cyclic { period } => k % period,
            DelayModel::Trace { delays } => match delays.get(k) {
                Some(&d) => d.min(k),
                None => return Err(Error::TraceExhausted(k)),
            },
        };
        debug_assert!(tau_k <= k);
        Ok(tau_k)
    }

    /// Per-worker delays `(τ_k^(1), …, τ_k^(n))`: independent draws for the
    /// random model, a shared value otherwise. The policy consumes
    /// `τ_k = max_i τ_k^(i)`.
    pub fn per_worker_delays(&self, k: usize, n: usize) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::NoWorkers);
        }
        match self {
            DelayModel::Uniform { .. } => (0..n).map(|w| self.delay_for_worker(k, w)).collect(),
            _ => {
                let shared = self.next_delay(k)?;
                Ok(vec![shared; n])
            }
        }
    }
}

/// Independent per-worker generator: one ChaCha stream per `(seed, worker)`
/// pair, so adding workers never perturbs existing streams.
fn worker_rng(seed: u64, worker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker as u64 + 1);
    rng
}

/// One bounded draw at a fixed word position (16 words = one ChaCha block
/// per iteration), making the value a pure function of (seed, worker, k).
fn uniform_draw(seed: u64, worker: usize, k: usize, hi: usize) -> usize {
    if hi == 0 {
        return 0;
    }
    let mut rng = worker_rng(seed, worker);
    rng.set_word_pos(k as u128 * 16);
    rng.gen_range(0..=hi)
}
