//! Threaded runtimes with measured (not injected) delays.
//!
//! Two backends mirror the simulators on real OS threads:
//!
//! * [`run_parameter_server`]: one master thread owns the iterate and the
//!   per-worker stored gradients; worker `i` evaluates component `i` against
//!   stamped iterates it is sent and returns stamped results. Each iteration
//!   incorporates whatever has arrived (at least one result), so the delay of
//!   component `i` at iteration `k` is `τ_k^(i) = k − s^(i)` with `s^(i)` the
//!   stamp of its stored gradient.
//! * [`run_shared_memory`]: workers share the iterate through per-block
//!   locks. A worker stamps `s` = current iteration count, assembles a
//!   snapshot (possibly interleaved with concurrent writes), computes one
//!   block gradient, and then runs an exclusive section covering the delay
//!   measurement `τ_k = k − s`, the step-size decision, the block write, and
//!   the iteration-count increment. Other workers may read during that
//!   section, but not update.
//!
//! Every run returns its trace plus an [`EventLog`] of read/write/step-size
//! events. The logs are strong enough to re-derive every recorded delay from
//! scratch; [`EventLog::audit_parameter_server`] and
//! [`EventLog::audit_shared_memory`] do exactly that and demand equality.
//! [`audit_principle`] replays a trace's `(τ_k, γ_k)` schedule against the
//! windowed step-size budget using the same compensated arithmetic the
//! policies use.
//!
//! Single-worker runs are sequential, so they reproduce the zero-delay
//! simulators bit for bit: the parameter server shares
//! [`crate::piag_sim::prox_step`] and the shared-memory backend shares
//! [`crate::bcd_sim::draw_block`] and the simulator's block-update kernel.

use std::any::Any;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Mutex, MutexGuard, PoisonError, RwLock};
use std::thread;

use crate::bcd_sim::draw_block;
use crate::dataio::{fmt_real, RunTrace, TraceRow};
use crate::numkit::{DenseVec, ProblemSpec};
use crate::piag_sim::{prox_step, RunOptions};
use crate::stepsize::{satisfies_principle, GammaHistory, PolicyConfig};
use crate::{Error, Real, Result};

// ---------------------------------------------------------------------------
// Event log
// ---------------------------------------------------------------------------

/// One entry in a runtime's audit trail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Event {
    /// Worker `worker`'s view of the iterate advanced to stamp `k`. The
    /// parameter server logs this when it incorporates a returned gradient
    /// (that is when the stamp becomes visible to delay accounting); the
    /// shared-memory backend logs it when the worker acquires its snapshot
    /// stamp.
    Read { worker: usize, k: usize },
    /// Worker `worker`'s contribution was applied at iteration `k`
    /// (updating coordinate `block` for the shared-memory backend).
    Write {
        worker: usize,
        k: usize,
        block: Option<usize>,
    },
    /// Step-size decision at iteration `k` under measured delay `tau`.
    Gamma { k: usize, tau: usize, gamma: Real },
}

/// Append-only audit trail of a threaded run.
#[derive(Clone, Debug, Default)]
pub struct EventLog {
    pub events: Vec<Event>,
}

fn bad(message: String) -> Error {
    Error::BadEventLog(message)
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Line-oriented tab-separated rendering, one event per line:
    /// `type <TAB> worker <TAB> k <TAB> extra` with `-` for absent fields.
    /// The extra column holds the block id for writes and `tau,gamma` for
    /// step-size decisions.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            match *ev {
                Event::Read { worker, k } => writeln!(out, "read\t{worker}\t{k}\t-"),
                Event::Write { worker, k, block } => match block {
                    Some(j) => writeln!(out, "write\t{worker}\t{k}\t{j}"),
                    None => writeln!(out, "write\t{worker}\t{k}\t-"),
                },
                Event::Gamma { k, tau, gamma } => {
                    writeln!(out, "gamma\t-\t{k}\t{tau},{}", fmt_real(gamma))
                }
            }
            .expect("writing to a String cannot fail");
        }
        out
    }

    /// Re-derives every parameter-server delay from the log and demands it
    /// equal the recorded one. Stamps start at 0 (the initial gradients are
    /// evaluated at the starting iterate), advance with read events, and the
    /// delay at a step-size decision must be `max_i (k − s^(i))`. Also
    /// enforces the structural invariants: per-worker reads and writes
    /// strictly alternate starting with a read, stamps never move backward,
    /// and writes belong to the current iteration. Returns the number of
    /// audited iterations.
    pub fn audit_parameter_server(&self, n_workers: usize) -> Result<usize> {
        if n_workers == 0 {
            return Err(Error::NoWorkers);
        }
        let mut stamps = vec![0usize; n_workers];
        let mut awaiting_write = vec![false; n_workers];
        let mut current: Option<usize> = None;
        let mut audited = 0usize;
        for ev in &self.events {
            match *ev {
                Event::Read { worker, k } => {
                    if worker >= n_workers {
                        return Err(bad(format!("read by out-of-range worker {worker}")));
                    }
                    if awaiting_write[worker] {
                        return Err(bad(format!(
                            "worker {worker}: two reads without an intervening write"
                        )));
                    }
                    if k < stamps[worker] {
                        return Err(bad(format!(
                            "worker {worker}: stamp moved backward ({} to {k})",
                            stamps[worker]
                        )));
                    }
                    stamps[worker] = k;
                    awaiting_write[worker] = true;
                }
                Event::Gamma { k, tau, .. } => {
                    let reconstructed = stamps
                        .iter()
                        .map(|&s| {
                            k.checked_sub(s).ok_or_else(|| {
                                bad(format!("iteration {k}: stamp {s} is from the future"))
                            })
                        })
                        .collect::<Result<Vec<usize>>>()?
                        .into_iter()
                        .max()
                        .expect("n_workers >= 1");
                    if tau != reconstructed {
                        return Err(bad(format!(
                            "iteration {k}: recorded delay {tau}, reconstructed {reconstructed}"
                        )));
                    }
                    current = Some(k);
                    audited += 1;
                }
                Event::Write { worker, k, .. } => {
                    if worker >= n_workers {
                        return Err(bad(format!("write by out-of-range worker {worker}")));
                    }
                    if !awaiting_write[worker] {
                        return Err(bad(format!(
                            "worker {worker}: write without a preceding read"
                        )));
                    }
                    if current != Some(k) {
                        return Err(bad(format!(
                            "iteration {k}: write outside its step-size decision"
                        )));
                    }
                    awaiting_write[worker] = false;
                }
            }
        }
        Ok(audited)
    }

    /// Shared-memory counterpart of [`Self::audit_parameter_server`]: each
    /// step-size decision must be immediately followed by the write it
    /// covers, and its delay must equal `k` minus the writer's last read
    /// stamp. Returns the number of audited iterations.
    pub fn audit_shared_memory(&self) -> Result<usize> {
        struct WorkerState {
            stamp: usize,
            awaiting_write: bool,
        }
        let mut workers: HashMap<usize, WorkerState> = HashMap::new();
        let mut audited = 0usize;
        let mut i = 0usize;
        while i < self.events.len() {
            match self.events[i] {
                Event::Read { worker, k } => {
                    let state = workers.entry(worker).or_insert(WorkerState {
                        stamp: 0,
                        awaiting_write: false,
                    });
                    if state.awaiting_write {
                        return Err(bad(format!(
                            "worker {worker}: two reads without an intervening write"
                        )));
                    }
                    state.stamp = k;
                    state.awaiting_write = true;
                }
                Event::Gamma { k, tau, .. } => {
                    let Some(&Event::Write {
                        worker, k: write_k, ..
                    }) = self.events.get(i + 1)
                    else {
                        return Err(bad(format!(
                            "iteration {k}: step-size decision without its write"
                        )));
                    };
                    if write_k != k {
                        return Err(bad(format!(
                            "iteration {k}: paired with a write at iteration {write_k}"
                        )));
                    }
                    let state = workers
                        .get_mut(&worker)
                        .ok_or_else(|| bad(format!("worker {worker}: write without any read")))?;
                    if !state.awaiting_write {
                        return Err(bad(format!(
                            "worker {worker}: write without a preceding read"
                        )));
                    }
                    let reconstructed = k.checked_sub(state.stamp).ok_or_else(|| {
                        bad(format!(
                            "iteration {k}: stamp {} is from the future",
                            state.stamp
                        ))
                    })?;
                    if tau != reconstructed {
                        return Err(bad(format!(
                            "iteration {k}: recorded delay {tau}, reconstructed {reconstructed}"
                        )));
                    }
                    state.awaiting_write = false;
                    audited += 1;
                    i += 1; // consume the paired write
                }
                Event::Write { worker, k, .. } => {
                    return Err(bad(format!(
                        "worker {worker}: write at iteration {k} without a step-size decision"
                    )));
                }
            }
            i += 1;
        }
        Ok(audited)
    }
}

/// Replays a trace's recorded `(τ_k, γ_k)` schedule through a fresh history
/// and checks every update against the windowed budget
/// `γ_k ≤ max(0, γ' − Σ_{t=k−τ_k}^{k−1} γ_t)`, carried out on the same
/// compensated sums the policies use. Returns the number of audited steps.
pub fn audit_principle(trace: &RunTrace, gamma_prime: Real) -> Result<usize> {
    let mut history = GammaHistory::new();
    for (k, row) in trace.steps().iter().enumerate() {
        if row.k != k as u64 {
            return Err(Error::BadTrace(format!(
                "expected iteration {k} at row {k}, found {}",
                row.k
            )));
        }
        let ok = satisfies_principle(&history, k, row.tau as usize, gamma_prime, row.gamma)?;
        if !ok {
            return Err(Error::BadTrace(format!(
                "iteration {k}: step-size {} exceeds the windowed budget",
                row.gamma
            )));
        }
        history.push(row.gamma);
    }
    Ok(trace.steps().len())
}

fn panic_message(payload: Box<dyn Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "opaque panic payload".to_string()
    }
}

fn initial_iterate(problem: &ProblemSpec, opts: &RunOptions) -> Result<DenseVec> {
    let x0 = opts
        .x0
        .clone()
        .unwrap_or_else(|| DenseVec::zeros(problem.dim));
    if x0.dim() != problem.dim {
        return Err(Error::DimensionMismatch {
            context: "initial iterate",
            expected: problem.dim,
            found: x0.dim(),
        });
    }
    Ok(x0)
}

// ---------------------------------------------------------------------------
// Parameter server
// ---------------------------------------------------------------------------

struct ReturnMsg {
    worker: usize,
    stamp: usize,
    grad: DenseVec,
}

type Job = (DenseVec, usize);

/// Runs the aggregated-gradient method on a real parameter-server topology:
/// `n_workers` threads evaluate one smooth component each, and the calling
/// thread plays the master, incorporating whatever results have arrived
/// (at least one per iteration). Delays are measured, never injected.
/// Returns the trace and the audit log.
pub fn run_parameter_server(
    problem: &ProblemSpec,
    policy: &PolicyConfig,
    n_workers: usize,
    opts: &RunOptions,
) -> Result<(RunTrace, EventLog)> {
    if n_workers == 0 {
        return Err(Error::NoWorkers);
    }
    let n = problem.n_components();
    if n_workers != n {
        return Err(Error::WorkerComponentMismatch {
            workers: n_workers,
            components: n,
        });
    }
    let x0 = initial_iterate(problem, opts)?;

    let (result_tx, result_rx) = channel::<ReturnMsg>();
    let mut job_txs: Vec<Sender<Job>> = Vec::with_capacity(n);
    let mut job_rxs: Vec<Receiver<Job>> = Vec::with_capacity(n);
    for _ in 0..n {
        let (tx, rx) = channel::<Job>();
        job_txs.push(tx);
        job_rxs.push(rx);
    }

    thread::scope(|scope| {
        let mut handles = Vec::with_capacity(n);
        for (i, rx) in job_rxs.into_iter().enumerate() {
            let tx = result_tx.clone();
            handles.push(scope.spawn(move || {
                while let Ok((x, stamp)) = rx.recv() {
                    let grad = problem.component_grad(i, &x);
                    if tx
                        .send(ReturnMsg {
                            worker: i,
                            stamp,
                            grad,
                        })
                        .is_err()
                    {
                        break;
                    }
                }
            }));
        }
        drop(result_tx); // workers hold the only senders now

        let outcome = ps_master(problem, policy, opts, x0, job_txs, result_rx);

        // Reap the workers; a panic takes precedence over any master-side
        // error it may have caused (for example a closed channel).
        let mut panic_err: Option<Error> = None;
        for (worker, handle) in handles.into_iter().enumerate() {
            if let Err(payload) = handle.join() {
                panic_err.get_or_insert(Error::WorkerPanic {
                    worker,
                    message: panic_message(payload),
                });
            }
        }
        match panic_err {
            Some(e) => Err(e),
            None => outcome,
        }
    })
}

fn ps_master(
    problem: &ProblemSpec,
    policy: &PolicyConfig,
    opts: &RunOptions,
    x0: DenseVec,
    job_txs: Vec<Sender<Job>>,
    result_rx: Receiver<ReturnMsg>,
) -> Result<(RunTrace, EventLog)> {
    let n = job_txs.len();
    let mut x = x0.clone();
    let mut grads: Vec<DenseVec> = (0..n).map(|i| problem.component_grad(i, &x0)).collect();
    let mut stamps = vec![0usize; n];
    let mut xi = DenseVec(problem.reg.subgradient(&x0.0));
    let mut history = GammaHistory::new();
    let mut events: Vec<Event> = Vec::new();

    let mut trace = RunTrace::new();
    trace.set_config("algo", "piag-threads");
    trace.set_config("policy", policy.kind.name());
    trace.set_config_real("gamma_prime", policy.gamma_prime);
    trace.set_config("delay_model", "measured");
    trace.set_config("workers", n.to_string());
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

    for tx in &job_txs {
        let _ = tx.send((x.clone(), 0));
    }

    let mut k = 0usize;
    while k < opts.k_max {
        // Incorporate whatever has arrived; block for the first result.
        let first = match result_rx.recv() {
            Ok(msg) => msg,
            Err(_) => break, // all workers gone; the join loop reports why
        };
        let mut returned: Vec<usize> = Vec::new();
        {
            let mut incorporate = |msg: ReturnMsg, events: &mut Vec<Event>| {
                events.push(Event::Read {
                    worker: msg.worker,
                    k: msg.stamp,
                });
                grads[msg.worker] = msg.grad;
                stamps[msg.worker] = msg.stamp;
                returned.push(msg.worker);
            };
            incorporate(first, &mut events);
            while let Ok(msg) = result_rx.try_recv() {
                incorporate(msg, &mut events);
            }
        }

        let tau_k = stamps
            .iter()
            .map(|&s| k - s)
            .max()
            .expect("at least one worker");

        let obj = problem.value(&x);
        let metric = if opts.record_metric {
            let grad = problem.grad(&x);
            grad.0
                .iter()
                .zip(&xi.0)
                .map(|(&a, &b)| (a + b) * (a + b))
                .sum::<Real>()
                .sqrt()
        } else {
            Real::NAN
        };
        let dist_opt_sq = match &problem.x_star {
            Some(xs) => x.dist_sq(xs),
            None => Real::NAN,
        };

        let gamma = policy.step(&mut history, tau_k)?;
        events.push(Event::Gamma {
            k,
            tau: tau_k,
            gamma,
        });
        let g = DenseVec::mean_of(&grads);
        let x_next = prox_step(problem, &x, &g, gamma);
        let step_norm_sq = x_next.dist_sq(&x);
        if gamma > 0.0 {
            let next_xi: Vec<Real> = x_next
                .0
                .iter()
                .zip(&x.0)
                .zip(&g.0)
                .map(|((&xn, &xo), &gi)| -(xn - xo) / gamma - gi)
                .collect();
            xi = DenseVec(next_xi);
        }
        for &w in &returned {
            events.push(Event::Write {
                worker: w,
                k,
                block: None,
            });
        }
        trace.push(TraceRow {
            k: k as u64,
            id: 0,
            tau: tau_k as u64,
            gamma,
            obj,
            metric,
            step_norm_sq,
            dist_opt_sq,
        });
        x = x_next;
        k += 1;
        if let Some(target) = opts.stop_below_obj {
            if obj <= target {
                break;
            }
        }
        for &w in &returned {
            let _ = job_txs[w].send((x.clone(), k));
        }
    }
    drop(job_txs); // closes the job channels so the workers exit

    let obj = problem.value(&x);
    let metric = if opts.record_metric {
        let grad = problem.grad(&x);
        grad.0
            .iter()
            .zip(&xi.0)
            .map(|(&a, &b)| (a + b) * (a + b))
            .sum::<Real>()
            .sqrt()
    } else {
        Real::NAN
    };
    let dist_opt_sq = match &problem.x_star {
        Some(xs) => x.dist_sq(xs),
        None => Real::NAN,
    };
    trace.push(TraceRow {
        k: k as u64,
        id: 0,
        tau: 0,
        gamma: 0.0,
        obj,
        metric,
        step_norm_sq: 0.0,
        dist_opt_sq,
    });
    Ok((trace, EventLog { events }))
}

// ---------------------------------------------------------------------------
// Shared memory
// ---------------------------------------------------------------------------

struct SmCtrl {
    k: usize,
    history: GammaHistory,
    rows: Vec<TraceRow>,
    events: Vec<Event>,
    stop: bool,
    error: Option<Error>,
}

struct SmShared {
    /// One lock per coordinate block; single-block reads are never torn.
    blocks: Vec<RwLock<Vec<Real>>>,
    ctrl: Mutex<SmCtrl>,
}

fn lock_ctrl(ctrl: &Mutex<SmCtrl>) -> MutexGuard<'_, SmCtrl> {
    // A poisoned lock means some worker panicked; the join loop reports it,
    // so the survivors just keep the state usable.
    ctrl.lock().unwrap_or_else(PoisonError::into_inner)
}

/// Assembles a full iterate from the per-block cells one lock at a time.
/// Without further synchronization the result may interleave concurrent
/// block writes; callers that hold the ctrl lock get an exact iterate
/// because writers are serialized by it.
fn assemble(problem: &ProblemSpec, blocks: &[RwLock<Vec<Real>>]) -> DenseVec {
    let mut x = vec![0.0; problem.dim];
    for (cell, range) in blocks.iter().zip(&problem.blocks) {
        let guard = cell.read().unwrap_or_else(PoisonError::into_inner);
        x[range.clone()].copy_from_slice(&guard);
    }
    DenseVec(x)
}

fn sm_worker(
    worker: usize,
    problem: &ProblemSpec,
    policy: &PolicyConfig,
    shared: &SmShared,
    seed: u64,
    opts: &RunOptions,
) {
    let m = problem.m_blocks();
    loop {
        // Stamp the read under ctrl: every update with index < s has fully
        // committed by the time the stamp is taken, so the snapshot below can
        // only miss updates from the window [s, k-1].
        let s = {
            let mut ctrl = lock_ctrl(&shared.ctrl);
            if ctrl.stop || ctrl.k >= opts.k_max {
                break;
            }
            let s = ctrl.k;
            ctrl.events.push(Event::Read { worker, k: s });
            s
        };
        let snapshot = assemble(problem, &shared.blocks);
        let block = draw_block(seed, s, m);
        let gj = problem.block_grad(block, &snapshot);

        // Exclusive section: delay measurement, step-size decision, block
        // write, and iteration-count increment. Concurrent reads proceed.
        let mut ctrl = lock_ctrl(&shared.ctrl);
        if ctrl.stop || ctrl.k >= opts.k_max {
            break; // the stamped read stays unpaired, which the audit allows
        }
        let k = ctrl.k;
        let tau = k - s;
        let x = assemble(problem, &shared.blocks); // exact: writers hold ctrl
        let obj = problem.value(&x);
        let metric = if opts.record_metric {
            problem.prox_grad_mapping(&x).norm()
        } else {
            Real::NAN
        };
        let dist_opt_sq = match &problem.x_star {
            Some(xs) => x.dist_sq(xs),
            None => Real::NAN,
        };
        let gamma = match policy.step(&mut ctrl.history, tau) {
            Ok(gamma) => gamma,
            Err(e) => {
                ctrl.error.get_or_insert(e);
                ctrl.stop = true;
                break;
            }
        };
        ctrl.events.push(Event::Gamma { k, tau, gamma });
        let range = problem.blocks[block].clone();
        let vals: Vec<Real> = range
            .clone()
            .zip(&gj)
            .map(|(i, &gi)| x.0[i] - gamma * gi)
            .collect();
        let new_vals = problem.prox_block(block, &vals, gamma);
        let mut step_norm_sq = 0.0;
        {
            let mut cell = shared.blocks[block]
                .write()
                .unwrap_or_else(PoisonError::into_inner);
            for (slot, &nv) in cell.iter_mut().zip(&new_vals) {
                let d = nv - *slot;
                step_norm_sq += d * d;
                *slot = nv;
            }
        }
        ctrl.events.push(Event::Write {
            worker,
            k,
            block: Some(block),
        });
        ctrl.rows.push(TraceRow {
            k: k as u64,
            id: block as u32,
            tau: tau as u64,
            gamma,
            obj,
            metric,
            step_norm_sq,
            dist_opt_sq,
        });
        ctrl.k = k + 1;
        if let Some(target) = opts.stop_below_obj {
            if obj <= target {
                ctrl.stop = true;
            }
        }
    }
}

/// Runs asynchronous block-coordinate descent on real threads sharing the
/// iterate through per-block locks. Block sampling is the same pure function
/// of `(seed, stamp)` the simulator uses, so a single worker replays the
/// zero-delay simulator bit for bit. Returns the trace and the audit log.
pub fn run_shared_memory(
    problem: &ProblemSpec,
    policy: &PolicyConfig,
    n_workers: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<(RunTrace, EventLog)> {
    if n_workers == 0 {
        return Err(Error::NoWorkers);
    }
    let x0 = initial_iterate(problem, opts)?;
    let shared = SmShared {
        blocks: problem
            .blocks
            .iter()
            .map(|range| RwLock::new(x0.0[range.clone()].to_vec()))
            .collect(),
        ctrl: Mutex::new(SmCtrl {
            k: 0,
            history: GammaHistory::new(),
            rows: Vec::new(),
            events: Vec::new(),
            stop: false,
            error: None,
        }),
    };

    let mut panic_err: Option<Error> = None;
    thread::scope(|scope| {
        let mut handles = Vec::with_capacity(n_workers);
        for worker in 0..n_workers {
            let shared = &shared;
            handles.push(scope.spawn(move || {
                sm_worker(worker, problem, policy, shared, seed, opts);
            }));
        }
        for (worker, handle) in handles.into_iter().enumerate() {
            if let Err(payload) = handle.join() {
                panic_err.get_or_insert(Error::WorkerPanic {
                    worker,
                    message: panic_message(payload),
                });
            }
        }
    });
    if let Some(e) = panic_err {
        return Err(e);
    }

    let SmShared { blocks, ctrl } = shared;
    let ctrl = ctrl.into_inner().unwrap_or_else(PoisonError::into_inner);
    if let Some(e) = ctrl.error {
        return Err(e);
    }

    let mut xfin = vec![0.0; problem.dim];
    for (cell, range) in blocks.into_iter().zip(&problem.blocks) {
        let values = cell.into_inner().unwrap_or_else(PoisonError::into_inner);
        xfin[range.clone()].copy_from_slice(&values);
    }
    let xfin = DenseVec(xfin);

    let mut trace = RunTrace::new();
    trace.set_config("algo", "bcd-threads");
    trace.set_config("policy", policy.kind.name());
    trace.set_config_real("gamma_prime", policy.gamma_prime);
    trace.set_config("delay_model", "measured");
    trace.set_config("workers", n_workers.to_string());
    trace.set_config("m_blocks", problem.m_blocks().to_string());
    trace.set_config("dim", problem.dim.to_string());
    trace.set_config_real("l", problem.l);
    trace.set_config_real("l_hat", problem.l_hat);
    trace.set_config("seed", seed.to_string());
    if let Some(pl) = &problem.pl {
        trace.set_config_real("sigma", pl.sigma);
    }
    if let Some(p_star) = problem.p_star {
        trace.set_config_real("p_star", p_star);
    }
    for row in ctrl.rows {
        trace.push(row);
    }
    let obj = problem.value(&xfin);
    let metric = if opts.record_metric {
        problem.prox_grad_mapping(&xfin).norm()
    } else {
        Real::NAN
    };
    let dist_opt_sq = match &problem.x_star {
        Some(xs) => xfin.dist_sq(xs),
        None => Real::NAN,
    };
    trace.push(TraceRow {
        k: ctrl.k as u64,
        id: 0,
        tau: 0,
        gamma: 0.0,
        obj,
        metric,
        step_norm_sq: 0.0,
        dist_opt_sq,
    });
    Ok((
        trace,
        EventLog {
            events: ctrl.events,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bcd_sim::{bcd_run, Consistency};
    use crate::dataio::synth_logreg;
    use crate::delay::DelayModel;
    use crate::numkit::{logreg_problem, quadratic_problem};
    use crate::piag_sim::piag_run;
    use std::sync::Arc;

    fn logreg(n_batches: usize, m_blocks: usize) -> ProblemSpec {
        let data = Arc::new(synth_logreg(160, 12, 5, 2.0));
        logreg_problem(data, 0.05, 0.1, n_batches, m_blocks).unwrap()
    }

    fn assert_rows_bitwise(a: &RunTrace, b: &RunTrace) {
        assert_eq!(a.rows.len(), b.rows.len());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.k, rb.k);
            assert_eq!(ra.id, rb.id);
            assert_eq!(ra.tau, rb.tau);
            assert_eq!(
                ra.gamma.to_bits(),
                rb.gamma.to_bits(),
                "gamma at k={}",
                ra.k
            );
            assert_eq!(ra.obj.to_bits(), rb.obj.to_bits(), "obj at k={}", ra.k);
            assert_eq!(
                ra.metric.to_bits(),
                rb.metric.to_bits(),
                "metric at k={}",
                ra.k
            );
            assert_eq!(
                ra.step_norm_sq.to_bits(),
                rb.step_norm_sq.to_bits(),
                "step at k={}",
                ra.k
            );
            assert_eq!(
                ra.dist_opt_sq.to_bits(),
                rb.dist_opt_sq.to_bits(),
                "dist at k={}",
                ra.k
            );
        }
    }

    #[test]
    fn zero_workers_is_a_structured_error() {
        let problem = quadratic_problem(1.0).unwrap();
        let policy = PolicyConfig::adaptive2(0.9).unwrap();
        let opts = RunOptions::with_k_max(5);
        assert!(matches!(
            run_parameter_server(&problem, &policy, 0, &opts),
            Err(Error::NoWorkers)
        ));
        assert!(matches!(
            run_shared_memory(&problem, &policy, 0, 1, &opts),
            Err(Error::NoWorkers)
        ));
    }

    #[test]
    fn worker_count_must_match_components() {
        let problem = quadratic_problem(1.0).unwrap();
        let policy = PolicyConfig::adaptive2(0.9).unwrap();
        let opts = RunOptions::with_k_max(5);
        match run_parameter_server(&problem, &policy, 3, &opts) {
            Err(Error::WorkerComponentMismatch {
                workers,
                components,
            }) => {
                assert_eq!(workers, 3);
                assert_eq!(components, 1);
            }
            other => panic!("expected a worker/component mismatch, got {other:?}"),
        }
    }

    #[test]
    fn single_worker_server_replays_the_zero_delay_simulator() {
        let problem = logreg(1, 3);
        let policy = PolicyConfig::adaptive2(0.8 / problem.l).unwrap();
        let opts = RunOptions::with_k_max(60);
        let (threaded, log) = run_parameter_server(&problem, &policy, 1, &opts).unwrap();
        let sim = piag_run(&problem, &DelayModel::constant(0), &policy, &opts).unwrap();
        assert_rows_bitwise(&threaded, &sim);
        assert!(threaded.steps().iter().all(|row| row.tau == 0), "lockstep");
        assert_eq!(log.audit_parameter_server(1).unwrap(), 60);
    }

    #[test]
    fn single_worker_shared_memory_replays_the_simulator() {
        let problem = logreg(1, 4);
        let policy = PolicyConfig::adaptive1(0.85 / problem.l_hat, 0.9).unwrap();
        let opts = RunOptions::with_k_max(80);
        let seed = 11;
        let (threaded, log) = run_shared_memory(&problem, &policy, 1, seed, &opts).unwrap();
        let sim = bcd_run(
            &problem,
            &DelayModel::constant(0),
            &policy,
            Consistency::Consistent,
            seed,
            &opts,
        )
        .unwrap();
        assert_rows_bitwise(&threaded, &sim);
        assert_eq!(log.audit_shared_memory().unwrap(), 80);
    }

    #[test]
    fn event_logs_reconstruct_every_recorded_delay() {
        let problem = logreg(4, 3);
        let policy = PolicyConfig::adaptive2(0.8 / problem.l).unwrap();
        let mut opts = RunOptions::with_k_max(250);
        opts.record_metric = false;

        let (ps_trace, ps_log) = run_parameter_server(&problem, &policy, 4, &opts).unwrap();
        assert_eq!(
            ps_log.audit_parameter_server(4).unwrap(),
            ps_trace.steps().len()
        );

        let (sm_trace, sm_log) = run_shared_memory(&problem, &policy, 4, 7, &opts).unwrap();
        assert_eq!(
            sm_log.audit_shared_memory().unwrap(),
            sm_trace.steps().len()
        );

        // Recorded delays also appear verbatim in the gamma events.
        let gamma_taus: Vec<u64> = sm_log
            .events
            .iter()
            .filter_map(|ev| match ev {
                Event::Gamma { tau, .. } => Some(*tau as u64),
                _ => None,
            })
            .collect();
        let row_taus: Vec<u64> = sm_trace.steps().iter().map(|row| row.tau).collect();
        assert_eq!(gamma_taus, row_taus);
    }

    #[test]
    fn measured_runs_satisfy_the_windowed_principle_and_descend() {
        let problem = logreg(4, 3);
        let policy = PolicyConfig::adaptive1(0.9 / problem.l, 0.9).unwrap();
        let mut opts = RunOptions::with_k_max(300);
        opts.record_metric = false;

        let (ps_trace, _) = run_parameter_server(&problem, &policy, 4, &opts).unwrap();
        assert_eq!(
            audit_principle(&ps_trace, policy.gamma_prime).unwrap(),
            ps_trace.steps().len()
        );
        let first = ps_trace.steps()[0].obj;
        let last = ps_trace.final_row().unwrap().obj;
        assert!(last.is_finite() && last < first, "{last} !< {first}");

        let (sm_trace, _) = run_shared_memory(&problem, &policy, 4, 13, &opts).unwrap();
        assert_eq!(
            audit_principle(&sm_trace, policy.gamma_prime).unwrap(),
            sm_trace.steps().len()
        );
        let first = sm_trace.steps()[0].obj;
        let last = sm_trace.final_row().unwrap().obj;
        assert!(last.is_finite() && last < first, "{last} !< {first}");
    }

    #[test]
    fn tampered_event_logs_fail_the_audit() {
        let problem = logreg(2, 2);
        let policy = PolicyConfig::adaptive2(0.8 / problem.l).unwrap();
        let mut opts = RunOptions::with_k_max(40);
        opts.record_metric = false;

        let (_, ps_log) = run_parameter_server(&problem, &policy, 2, &opts).unwrap();
        let mut tampered = ps_log.clone();
        let idx = tampered
            .events
            .iter()
            .position(|ev| matches!(ev, Event::Gamma { .. }))
            .unwrap();
        if let Event::Gamma { tau, .. } = &mut tampered.events[idx] {
            *tau += 1;
        }
        assert!(matches!(
            tampered.audit_parameter_server(2),
            Err(Error::BadEventLog(_))
        ));

        let (_, sm_log) = run_shared_memory(&problem, &policy, 2, 3, &opts).unwrap();
        let mut tampered = sm_log.clone();
        let idx = tampered
            .events
            .iter()
            .position(|ev| matches!(ev, Event::Gamma { .. }))
            .unwrap();
        if let Event::Gamma { tau, .. } = &mut tampered.events[idx] {
            *tau += 1;
        }
        assert!(matches!(
            tampered.audit_shared_memory(),
            Err(Error::BadEventLog(_))
        ));
    }

    #[test]
    fn dump_is_line_oriented_and_tab_separated() {
        let problem = logreg(2, 2);
        let policy = PolicyConfig::adaptive2(0.8 / problem.l).unwrap();
        let mut opts = RunOptions::with_k_max(10);
        opts.record_metric = false;
        let (_, log) = run_parameter_server(&problem, &policy, 2, &opts).unwrap();
        let dump = log.dump();
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(lines.len(), log.len());
        for line in lines {
            let fields: Vec<&str> = line.split('\t').collect();
            assert_eq!(fields.len(), 4, "line {line:?}");
            assert!(matches!(fields[0], "read" | "write" | "gamma"));
        }
    }

    #[test]
    fn early_stop_threshold_halts_both_backends() {
        let problem = logreg(2, 3);
        let policy = PolicyConfig::adaptive2(0.8 / problem.l).unwrap();
        let mut opts = RunOptions::with_k_max(400);
        opts.record_metric = false;
        let (full, _) = run_parameter_server(&problem, &policy, 2, &opts).unwrap();
        let target = full.steps()[40].obj;
        opts.stop_below_obj = Some(target);
        let (stopped, _) = run_parameter_server(&problem, &policy, 2, &opts).unwrap();
        assert!(stopped.steps().len() < 400);
        assert!(stopped.steps().last().unwrap().obj <= target);
        let (stopped, _) = run_shared_memory(&problem, &policy, 2, 5, &opts).unwrap();
        assert!(stopped.steps().len() < 400);
        assert!(stopped.steps().last().unwrap().obj <= target);
    }

    #[test]
    fn worker_panics_surface_as_structured_errors() {
        let handle = thread::spawn(|| panic!("boom {}", 7));
        let payload = handle.join().expect_err("the thread panicked");
        let err = Error::WorkerPanic {
            worker: 3,
            message: panic_message(payload),
        };
        match err {
            Error::WorkerPanic { worker, message } => {
                assert_eq!(worker, 3);
                assert!(message.contains("boom 7"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
