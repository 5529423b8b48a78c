//! Deterministic single-threaded simulator of the proximal incremental
//! aggregated gradient method with injected delays.
//!
//! The update is
//!
//! ```text
//! g_k     = (1/n) Σ_i ∇f^(i)(x_{k−τ_k^(i)})
//! x_{k+1} = prox_{γ_k R}(x_k − γ_k g_k)
//! ```
//!
//! The simulator mirrors a parameter server's information flow: each worker
//! `i` holds a stored gradient stamped with the iteration `s^(i)` whose
//! iterate it was evaluated at, and stamps never move backward. An injected
//! delay `τ` at iteration `k` refreshes worker `i` to stamp `k − τ` only if
//! that is newer than its current stamp, so the effective delay
//! `τ_k^(i) = k − s^(i)` never exceeds the injected one.

use crate::dataio::{RunTrace, TraceRow};
use crate::delay::DelayModel;
use crate::numkit::{DenseVec, ProblemSpec};
use crate::stepsize::{GammaHistory, PolicyConfig};
use crate::{Error, Real, Result};

/// Shared proximal update kernel: `prox_{γR}(x − γ g)`. The threaded
/// parameter server reuses it so single-worker runs replay the simulator
/// bit-for-bit.
pub fn prox_step(problem: &ProblemSpec, x: &DenseVec, g: &DenseVec, gamma: Real) -> DenseVec {
    problem.prox(&x.sub_scaled(gamma, g), gamma)
}

/// Options shared by the simulator and runtime drivers.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub k_max: usize,
    /// Initial iterate; zeros when absent.
    pub x0: Option<DenseVec>,
    /// Record the stationarity metric every iteration (costs one full
    /// gradient per step).
    pub record_metric: bool,
    /// Stop as soon as `P(x_k)` drops to this value or below.
    pub stop_below_obj: Option<Real>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            k_max: 1000,
            x0: None,
            record_metric: true,
            stop_below_obj: None,
        }
    }
}

impl RunOptions {
    pub fn with_k_max(k_max: usize) -> Self {
        RunOptions {
            k_max,
            ..RunOptions::default()
        }
    }
}

/// Per-step record emitted by [`piag_step`].
#[derive(Clone, Copy, Debug)]
pub struct PiagRecord {
    pub k: usize,
    /// Effective delay seen by the policy, `max_i (k − s^(i))`.
    pub tau: usize,
    pub gamma: Real,
    /// `P(x_k)` (before the update).
    pub obj: Real,
    /// `‖∇f(x_k) + ξ_k‖`, NaN when metric recording is off.
    pub metric: Real,
    /// `‖x_{k+1} − x_k‖²`.
    pub step_norm_sq: Real,
    /// `‖x_k − x*‖²` when the minimizer is known, NaN otherwise.
    pub dist_opt_sq: Real,
}

/// Simulator state: the iterate ring, per-worker stored gradients with
/// stamps, the step-size history, and the implicit-subgradient tracker.
#[derive(Clone, Debug)]
pub struct PiagState {
    /// Ring of past iterates; slot `j % capacity` holds `x_j` for the most
    /// recent `capacity` iterations.
    ring: Vec<DenseVec>,
    capacity: usize,
    x: DenseVec,
    k: usize,
    /// Stored gradients `g^(i) = ∇f^(i)(x_{s^(i)})`.
    grads: Vec<DenseVec>,
    /// Monotone read stamps `s^(i)`.
    stamps: Vec<usize>,
    pub gamma_history: GammaHistory,
    /// `ξ_k`: the implicit regularizer subgradient extracted from the last
    /// positive-step update; a canonical subgradient before the first one.
    xi: DenseVec,
}

impl PiagState {
    /// `capacity` must be at least (max injected delay + 2); runs derive it
    /// from the delay model's bound.
    pub fn new(problem: &ProblemSpec, x0: DenseVec, capacity: usize) -> Result<Self> {
        if x0.dim() != problem.dim {
            return Err(Error::DimensionMismatch {
                context: "initial iterate",
                expected: problem.dim,
                found: x0.dim(),
            });
        }
        let capacity = capacity.max(2);
        let n = problem.n_components();
        let grads: Vec<DenseVec> = (0..n).map(|i| problem.component_grad(i, &x0)).collect();
        let xi = DenseVec(problem.reg.subgradient(&x0.0));
        let mut ring = Vec::with_capacity(capacity);
        for _ in 0..capacity {
            ring.push(x0.clone());
        }
        Ok(PiagState {
            ring,
            capacity,
            x: x0.clone(),
            k: 0,
            grads,
            stamps: vec![0; n],
            gamma_history: GammaHistory::new(),
            xi,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn x(&self) -> &DenseVec {
        &self.x
    }

    pub fn stamps(&self) -> &[usize] {
        &self.stamps
    }

    pub fn xi(&self) -> &DenseVec {
        &self.xi
    }

    fn past_iterate(&self, j: usize) -> &DenseVec {
        debug_assert!(j + self.capacity > self.k && j <= self.k);
        &self.ring[j % self.capacity]
    }

    /// `‖∇f(x_k) + ξ_k‖` at the current iterate.
    pub fn stationarity_metric(&self, problem: &ProblemSpec) -> Real {
        let grad = problem.grad(&self.x);
        grad.0
            .iter()
            .zip(&self.xi.0)
            .map(|(&a, &b)| (a + b) * (a + b))
            .sum::<Real>()
            .sqrt()
    }
}

/// Advances the simulator one iteration under the injected per-worker
/// delays (`delays[i]` = τ_k^(i) requested for worker `i`).
pub fn piag_step(
    state: &mut PiagState,
    problem: &ProblemSpec,
    policy: &PolicyConfig,
    delays: &[usize],
    record_metric: bool,
) -> Result<PiagRecord> {
    let n = problem.n_components();
    if delays.len() != n {
        return Err(Error::WorkerComponentMismatch {
            workers: delays.len(),
            components: n,
        });
    }
    let k = state.k;
    for &tau in delays {
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
    }

    // Refresh stored gradients whose injected stamp is newer; stamps are
    // monotone, so stale injections leave the fresher gradient in place.
    for (i, &tau) in delays.iter().enumerate() {
        let stamp = k - tau;
        if stamp > state.stamps[i] {
            state.grads[i] = problem.component_grad(i, state.past_iterate(stamp));
            state.stamps[i] = stamp;
        }
    }

    // Effective delays after the monotone refresh.
    let tau_k = state
        .stamps
        .iter()
        .map(|&s| k - s)
        .max()
        .expect("at least one worker");

    let obj = problem.value(&state.x);
    let metric = if record_metric {
        state.stationarity_metric(problem)
    } else {
        Real::NAN
    };
    let dist_opt_sq = match &problem.x_star {
        Some(xs) => state.x.dist_sq(xs),
        None => Real::NAN,
    };

    let gamma = policy.step(&mut state.gamma_history, tau_k)?;
    let g = DenseVec::mean_of(&state.grads);
    let x_next = prox_step(problem, &state.x, &g, gamma);
    let step_norm_sq = x_next.dist_sq(&state.x);

    // Implicit subgradient of R at x_{k+1}; carried forward on zero steps.
    if gamma > 0.0 {
        let xi: Vec<Real> = x_next
            .0
            .iter()
            .zip(&state.x.0)
            .zip(&g.0)
            .map(|((&xn, &xo), &gi)| -(xn - xo) / gamma - gi)
            .collect();
        state.xi = DenseVec(xi);
    }

    state.k = k + 1;
    let slot = state.k % state.capacity;
    state.ring[slot] = x_next.clone();
    state.x = x_next;

    Ok(PiagRecord {
        k,
        tau: tau_k,
        gamma,
        obj,
        metric,
        step_norm_sq,
        dist_opt_sq,
    })
}

/// Runs the simulator for `opts.k_max` iterations (or until the early-stop
/// objective is reached), returning the full per-iteration trace plus a
/// terminal row describing the final iterate.
pub fn piag_run(
    problem: &ProblemSpec,
    model: &DelayModel,
    policy: &PolicyConfig,
    opts: &RunOptions,
) -> Result<RunTrace> {
    let n = problem.n_components();
    let x0 = opts
        .x0
        .clone()
        .unwrap_or_else(|| DenseVec::zeros(problem.dim));
    let capacity = model.bound() + 2;
    let mut state = PiagState::new(problem, x0, capacity)?;

    let mut trace = RunTrace::new();
    trace.set_config("algo", "piag");
    trace.set_config("policy", policy.kind.name());
    trace.set_config_real("gamma_prime", policy.gamma_prime);
    trace.set_config("delay_model", model.name());
    trace.set_config("tau_bound", model.bound().to_string());
    trace.set_config("n_components", n.to_string());
    trace.set_config("dim", problem.dim.to_string());
    trace.set_config_real("l", problem.l);
    trace.set_config_real("l_hat", problem.l_hat);
    if let Some(pl) = &problem.pl {
        trace.set_config_real("sigma", pl.sigma);
    }
    if let Some(p_star) = problem.p_star {
        trace.set_config_real("p_star", p_star);
    }

    for k in 0..opts.k_max {
        let delays = model.per_worker_delays(k, n)?;
        let rec = piag_step(&mut state, problem, policy, &delays, opts.record_metric)?;
        trace.push(TraceRow {
            k: rec.k as u64,
            id: 0,
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

    // Terminal row: the state reached after the last executed step.
    let obj = problem.value(state.x());
    let metric = if opts.record_metric {
        state.stationarity_metric(problem)
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
