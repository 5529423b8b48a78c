//! Deterministic simulator of asynchronous block-coordinate descent with
//! the inconsistent-read model.
//!
//! One logical iteration updates a uniformly sampled coordinate block `j`:
//!
//! ```text
//! x_{k+1}^(j) = prox_{γ_k R^(j)}(x_k^(j) − γ_k ∇_j f(x̂_k))
//! ```
//!
//! where the read `x̂_k = x_k − Σ_{j∈J_k}(x_{j+1} − x_j)` undoes a subset
//! `J_k ⊆ [k−τ_k, k−1]` of recent updates, always including the oldest index
//! `k − τ_k` (so `τ_k` is exactly the delay of the read). Consistent mode
//! takes the whole window, which telescopes to the exact past iterate
//! `x_{k−τ_k}`; inconsistent mode keeps each newer index independently with
//! probability `p`, producing a snapshot that may never have existed in
//! memory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{RunTrace, TraceRow};
use crate::delay::DelayModel;
use crate::numkit::{DenseVec, ProblemSpec};
use crate::piag_sim::RunOptions;
use crate::stepsize::{GammaHistory, PolicyConfig};
use crate::{Error, Real, Result};

/// Read model for the delayed snapshot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Consistency {
    /// `J_k = {k−τ_k, …, k−1}`: the read is the exact iterate `x_{k−τ_k}`.
    Consistent,
    /// `J_k` always contains `k−τ_k`; each newer index is included
    /// independently with probability `p`.
    Inconsistent { p: Real },
}

impl Consistency {
    pub fn name(&self) -> &'static str {
        match self {
            Consistency::Consistent => "consistent",
            Consistency::Inconsistent { .. } => "inconsistent",
        }
    }
}

/// Per-step record emitted by [`bcd_step`].
#[derive(Clone, Copy, Debug)]
pub struct BcdRecord {
    pub k: usize,
    /// The sampled coordinate block.
    pub block: usize,
    pub tau: usize,
    pub gamma: Real,
    /// `P(x_k)` (before the update).
    pub obj: Real,
    /// `‖∇̃P(x_k)‖`, NaN when metric recording is off.
    pub metric: Real,
    /// `‖x_{k+1} − x_k‖²` (supported on the sampled block).
    pub step_norm_sq: Real,
    pub dist_opt_sq: Real,
}

/// Simulator state: the iterate ring (for snapshot reads and update deltas),
/// the per-step block ids, and the shared step-size history.
#[derive(Clone, Debug)]
pub struct BcdState {
    /// Slot `j % capacity` holds `x_j` for the most recent iterations.
    ring: Vec<DenseVec>,
    /// Slot `j % capacity` holds the block updated by step `j`.
    updated_block: Vec<usize>,
    capacity: usize,
    x: DenseVec,
    k: usize,
    pub gamma_history: GammaHistory,
    seed: u64,
}

/// Uniform block draw for iteration `k`: a pure function of `(seed, k)` so
/// the shared-memory runtime can reproduce the same sequence.
pub fn draw_block(seed: u64, k: usize, m: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng.set_word_pos(k as u128 * 16);
    rng.gen_range(0..m)
}

/// Generator for the inclusion coins of `J_k` (stream 2; a 64-word budget
/// per iteration keeps draws for different `k` disjoint for windows up to
/// 32 indices).
fn j_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    rng.set_word_pos(k as u128 * 64);
    rng
}

impl BcdState {
    pub fn new(problem: &ProblemSpec, x0: DenseVec, capacity: usize, seed: u64) -> Result<Self> {
        if x0.dim() != problem.dim {
            return Err(Error::DimensionMismatch {
                context: "initial iterate",
                expected: problem.dim,
                found: x0.dim(),
            });
        }
        let capacity = capacity.max(2);
        let mut ring = Vec::with_capacity(capacity);
        for _ in 0..capacity {
            ring.push(x0.clone());
        }
        Ok(BcdState {
            ring,
            updated_block: vec![0; capacity],
            capacity,
            x: x0,
            k: 0,
            gamma_history: GammaHistory::new(),
            seed,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn x(&self) -> &DenseVec {
        &self.x
    }

    /// Builds the delayed read `x̂_k`.
    fn read_snapshot(
        &self,
        problem: &ProblemSpec,
        tau: usize,
        consistency: Consistency,
    ) -> DenseVec {
        let k = self.k;
        if tau == 0 {
            return self.x.clone();
        }
        match consistency {
            // Full-window subtraction telescopes: reuse the stored iterate.
            Consistency::Consistent => self.ring[(k - tau) % self.capacity].clone(),
            Consistency::Inconsistent { p } => {
                let mut coins = j_rng(self.seed, k);
                let mut hat = self.x.clone();
                for j in (k - tau)..k {
                    // the oldest index is always in J_k; newer ones by coin
                    let include = j == k - tau || coins.gen_bool(p);
                    if !include {
                        continue;
                    }
                    let block = self.updated_block[j % self.capacity];
                    let range = problem.blocks[block].clone();
                    let newer = &self.ring[(j + 1) % self.capacity];
                    let older = &self.ring[j % self.capacity];
                    for i in range {
                        hat.0[i] -= newer.0[i] - older.0[i];
                    }
                }
                hat
            }
        }
    }
}

/// Advances the simulator one iteration under delay `τ_k = tau`.
pub fn bcd_step(
    state: &mut BcdState,
    problem: &ProblemSpec,
    policy: &PolicyConfig,
    tau: usize,
    consistency: Consistency,
    record_metric: bool,
) -> Result<BcdRecord> {
    let k = state.k;
    if tau > k {
        return Err(Error::DelayExceedsIteration { tau, k });
    }
    if tau + 1 >= state.capacity {
        return Err(Error::RingCapacity {
            tau,
            capacity: state.capacity,
            required: tau + 2,
        });
    }
    let m = problem.m_blocks();
    let block = draw_block(state.seed, k, m);

    let obj = problem.value(&state.x);
    let metric = if record_metric {
        problem.prox_grad_mapping(&state.x).norm()
    } else {
        Real::NAN
    };
    let dist_opt_sq = match &problem.x_star {
        Some(xs) => state.x.dist_sq(xs),
        None => Real::NAN,
    };

    let hat = state.read_snapshot(problem, tau, consistency);
    let gamma = policy.step(&mut state.gamma_history, tau)?;
    let gj = problem.block_grad(block, &hat);
    let range = problem.blocks[block].clone();

    let mut x_next = state.x.clone();
    let mut step_norm_sq = 0.0;
    let vals: Vec<Real> = range
        .clone()
        .zip(&gj)
        .map(|(i, &gi)| state.x.0[i] - gamma * gi)
        .collect();
    let new_vals = problem.prox_block(block, &vals, gamma);
    for (i, &nv) in range.clone().zip(&new_vals) {
        let d = nv - state.x.0[i];
        step_norm_sq += d * d;
        x_next.0[i] = nv;
    }

    state.k = k + 1;
    let slot = state.k % state.capacity;
    state.ring[slot] = x_next.clone();
    state.updated_block[k % state.capacity] = block;
    state.x = x_next;

    Ok(BcdRecord {
        k,
        block,
        tau,
        gamma,
        obj,
        metric,
        step_norm_sq,
        dist_opt_sq,
    })
}

/// Runs the block-coordinate simulator; the delay model drives `τ_k`, the
/// seed drives block sampling and inclusion coins. Step-sizes depend only on
/// the delay sequence, so traces with equal delay models share their
/// `(τ_k, γ_k)` schedule across seeds — the property the statistical
/// certificate verifier relies on.
pub fn bcd_run(
    problem: &ProblemSpec,
    model: &DelayModel,
    policy: &PolicyConfig,
    consistency: Consistency,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunTrace> {
    let x0 = opts
        .x0
        .clone()
        .unwrap_or_else(|| DenseVec::zeros(problem.dim));
    let capacity = model.bound() + 2;
    let mut state = BcdState::new(problem, x0, capacity, seed)?;

    let mut trace = RunTrace::new();
    trace.set_config("algo", "bcd");
    trace.set_config("policy", policy.kind.name());
    trace.set_config_real("gamma_prime", policy.gamma_prime);
    trace.set_config("delay_model", model.name());
    trace.set_config("tau_bound", model.bound().to_string());
    trace.set_config("m_blocks", problem.m_blocks().to_string());
    trace.set_config("dim", problem.dim.to_string());
    trace.set_config_real("l", problem.l);
    trace.set_config_real("l_hat", problem.l_hat);
    trace.set_config("consistency", consistency.name());
    trace.set_config("seed", seed.to_string());
    if let Some(pl) = &problem.pl {
        trace.set_config_real("sigma", pl.sigma);
    }
    if let Some(p_star) = problem.p_star {
        trace.set_config_real("p_star", p_star);
    }

    for k in 0..opts.k_max {
        let tau = model.next_delay(k)?;
        let rec = bcd_step(
            &mut state,
            problem,
            policy,
            tau,
            consistency,
            opts.record_metric,
        )?;
        trace.push(TraceRow {
            k: rec.k as u64,
            id: rec.block as u32,
            tau: rec.tau as u64,
            gamma: rec.gamma,
            obj: rec.obj,
            metric: rec.metric,
            step_norm_sq: rec.step_norm_sq,
            dist_opt_sq: rec.dist_opt_sq,
        });
        if let Some(target) = opts.stop_below_obj {
            if rec.obj <= target {
                break;
            }
        }
    }

    let obj = problem.value(state.x());
    let metric = if opts.record_metric {
        problem.prox_grad_mapping(state.x()).norm()
    } else {
        Real::NAN
    };
    let dist_opt_sq = match &problem.x_star {
        Some(xs) => state.x().dist_sq(xs),
        None => Real::NAN,
    };
    trace.push(TraceRow {
        k: state.k() as u64,
        id: 0,
        tau: 0,
        gamma: 0.0,
        obj,
        metric,
        step_norm_sq: 0.0,
        dist_opt_sq,
    });
    Ok(trace)
}
