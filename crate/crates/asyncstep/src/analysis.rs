//! Numerical verifiers for the convergence machinery behind delay-adaptive
//! step-sizes.
//!
//! The central object is a *Lyapunov sequence bundle* `(V, X, W, p, q, r)`
//! extracted from a run trace. The sequence recursion
//!
//! ```text
//! X_{k+1} + V_{k+1} ≤ q_k·V_k + p_k·Σ_{ℓ=k−τ_k}^{k−1} W_ℓ − r_k·W_k
//! ```
//!
//! together with the delay-window coefficient condition (for every `k` with
//! `p_k > 0` and every `ℓ ∈ [k−τ_k, k−1]`, with `Q_k = Π_{j<k} q_j`)
//!
//! ```text
//! p_k/Q_{k+1} ≤ r_ℓ/Q_{ℓ+1} − Σ_{t=ℓ+1}^{k−1} p_t/Q_{t+1}
//! ```
//!
//! implies the envelope `V_k ≤ Q_k·V_0` and the weighted summability
//! `Σ_{k≥1} X_k/Q_k ≤ V_0`. This module instantiates the bundle for
//! aggregated-gradient runs (non-convex, convex, and quadratic-growth
//! certificates) and for block-coordinate runs (in expectation, estimated by
//! across-seed means), checks all four inequality families numerically, and
//! provides the step-size integral lower bounds of the adaptive policies.

use crate::dataio::RunTrace;
use crate::numkit::{DenseVec, ProblemSpec};
use crate::stepsize::{GammaHistory, PolicyKind};
use crate::{Error, Real, Result};

/// Absolute tolerance for deterministic inequality checks.
pub const DETERMINISTIC_TOL: Real = 1e-9;
/// Slack allowed by the step-size integral bounds.
pub const INTEGRAL_SLACK: Real = 1e-12;

/// Convexity regime assumed when instantiating an aggregated-gradient bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PiagCase {
    Nonconvex,
    Convex,
    /// Proximal quadratic-growth (PL-type) certificate with modulus σ.
    Pl,
}

impl PiagCase {
    pub fn name(&self) -> &'static str {
        match self {
            PiagCase::Nonconvex => "nonconvex",
            PiagCase::Convex => "convex",
            PiagCase::Pl => "pl",
        }
    }
}

/// Constants needed to build an aggregated-gradient bundle.
#[derive(Clone, Copy, Debug)]
pub struct PiagParams {
    /// Principle fraction `h ∈ (0,1)`; the generating run used `γ' = h/L`.
    pub h: Real,
    /// Root-mean-square smoothness constant of the components.
    pub l: Real,
    /// PL modulus, required by [`PiagCase::Pl`].
    pub sigma: Option<Real>,
    /// Optimal value used for `V_k = P(x_k) − P*`.
    pub p_star: Real,
}

/// Constants needed to build a block-coordinate bundle.
#[derive(Clone, Copy, Debug)]
pub struct BcdParams {
    /// Principle fraction `h ∈ (0,1)`; the generating runs used `γ' = h/L̂`.
    pub h: Real,
    /// Block-wise smoothness constant.
    pub l_hat: Real,
    /// Number of coordinate blocks.
    pub m: usize,
    pub p_star: Real,
}

/// One seed's realization of the stochastic sequences (used for the
/// across-seed standard error of statistical checks).
#[derive(Clone, Debug)]
pub struct SequenceSample {
    pub v: Vec<Real>,
    pub x: Vec<Real>,
    pub w: Vec<Real>,
}

/// Sequences over a finite horizon `K`: `v`/`x` have length `K+1`,
/// the per-step sequences length `K`, and `qprod[k] = Π_{j<k} q[j]`.
#[derive(Clone, Debug)]
pub struct LyapunovBundle {
    pub v: Vec<Real>,
    pub x: Vec<Real>,
    pub w: Vec<Real>,
    pub p: Vec<Real>,
    pub q: Vec<Real>,
    pub r: Vec<Real>,
    pub qprod: Vec<Real>,
    pub tau: Vec<usize>,
    pub gamma: Vec<Real>,
    /// Per-seed realizations; two or more switch the verifier to the
    /// statistical (3-sigma) tolerance.
    pub replicates: Vec<SequenceSample>,
}

impl LyapunovBundle {
    /// Number of recorded steps `K`.
    pub fn horizon(&self) -> usize {
        self.p.len()
    }

    pub fn is_statistical(&self) -> bool {
        self.replicates.len() >= 2
    }

    fn with_qprod(mut self) -> Self {
        let mut qprod = Vec::with_capacity(self.q.len() + 1);
        let mut acc = 1.0;
        qprod.push(acc);
        for &qk in &self.q {
            acc *= qk;
            qprod.push(acc);
        }
        self.qprod = qprod;
        self
    }
}

/// Trace columns split for bundle construction: `K` steps plus the boundary
/// row's objective/metric/distance.
struct TraceColumns {
    gamma: Vec<Real>,
    tau: Vec<usize>,
    obj: Vec<Real>,
    metric: Vec<Real>,
    step_norm_sq: Vec<Real>,
    dist_opt_sq: Vec<Real>,
}

fn split_trace(trace: &RunTrace) -> Result<TraceColumns> {
    if trace.rows.len() < 2 {
        return Err(Error::BadTrace(
            "trace needs at least one step and a final row".into(),
        ));
    }
    let steps = trace.steps();
    Ok(TraceColumns {
        gamma: steps.iter().map(|r| r.gamma).collect(),
        tau: steps.iter().map(|r| r.tau as usize).collect(),
        obj: trace.rows.iter().map(|r| r.obj).collect(),
        metric: trace.rows.iter().map(|r| r.metric).collect(),
        step_norm_sq: steps.iter().map(|r| r.step_norm_sq).collect(),
        dist_opt_sq: trace.rows.iter().map(|r| r.dist_opt_sq).collect(),
    })
}

fn ratio_w(step_norm_sq: &[Real], gamma: &[Real]) -> Vec<Real> {
    step_norm_sq
        .iter()
        .zip(gamma)
        .map(|(&s, &g)| if g > 0.0 { s / g } else { 0.0 })
        .collect()
}

/// Builds the Lyapunov bundle of an aggregated-gradient run.
///
/// Shapes by case, writing `γ_k` for the trace step-sizes and `m_k` for the
/// recorded stationarity metric `‖∇f(x_k)+ξ_k‖`:
/// - non-convex: `V_k = P(x_k)−P*`, `X_{k+1} = (γ_k/2)·(1−h)/(h²−h+1)·m_{k+1}²`,
///   `p_k = γ_k h L/2`, `q_k = 1`, `r_k = h²/2 − p_k`;
/// - convex: `V_k = a_k(P(x_k)−P*) + ‖x_k−x*‖²/2` with
///   `a_k = h(h+1)/(L(1−h)) + Σ_{ℓ<k} γ_ℓ`, `X ≡ 0`, `p_k = γ_k(a_k L+1)/2`,
///   `q_k = 1`, `r_k = a_k/2 − p_k`;
/// - quadratic growth: `V_k = P(x_k)−P*`, `X ≡ 0`,
///   `q_k = 1/(1 + cσ(1−h̃)γ_k/(h̃²−h̃+1))` with `h̃ = (1+h)/2` and
///   `c = min(1, (1−h)L/(2hσ))`, `p_k = γ_k h̃ L/2`, `r_k = q_k h̃²/2 − p_k`.
pub fn bundle_from_piag(
    trace: &RunTrace,
    case: PiagCase,
    params: &PiagParams,
) -> Result<LyapunovBundle> {
    if !(params.h > 0.0 && params.h < 1.0) {
        return Err(Error::BadPolicy(format!(
            "bundle fraction h must lie in (0,1), got {}",
            params.h
        )));
    }
    if !(params.l > 0.0) {
        return Err(Error::BadPolicy(format!(
            "smoothness constant must be positive, got {}",
            params.l
        )));
    }
    let cols = split_trace(trace)?;
    let steps = cols.gamma.len();
    let h = params.h;
    let l = params.l;

    let v;
    let mut x = vec![0.0; steps + 1];
    let w = ratio_w(&cols.step_norm_sq, &cols.gamma);
    let mut p = Vec::with_capacity(steps);
    let mut q = Vec::with_capacity(steps);
    let mut r = Vec::with_capacity(steps);

    match case {
        PiagCase::Nonconvex => {
            if cols.metric.iter().any(|m| !m.is_finite()) {
                return Err(Error::BadTrace(
                    "nonconvex bundle needs the stationarity metric recorded at every row".into(),
                ));
            }
            let factor = (1.0 - h) / (h * h - h + 1.0);
            v = cols.obj.iter().map(|&o| o - params.p_star).collect();
            for k in 0..steps {
                x[k + 1] = 0.5 * cols.gamma[k] * factor * cols.metric[k + 1] * cols.metric[k + 1];
                let pk = 0.5 * cols.gamma[k] * h * l;
                p.push(pk);
                q.push(1.0);
                r.push(0.5 * h * h - pk);
            }
        }
        PiagCase::Convex => {
            if cols.dist_opt_sq.iter().any(|d| !d.is_finite()) {
                return Err(Error::MissingCertificate {
                    case: "convex",
                    what: "the squared distance to a known minimizer in every trace row",
                });
            }
            let a0 = h * (h + 1.0) / (l * (1.0 - h));
            let mut prefix = 0.0;
            let mut vv = Vec::with_capacity(steps + 1);
            for k in 0..=steps {
                let ak = a0 + prefix;
                vv.push(ak * (cols.obj[k] - params.p_star) + 0.5 * cols.dist_opt_sq[k]);
                if k < steps {
                    let pk = 0.5 * cols.gamma[k] * (ak * l + 1.0);
                    p.push(pk);
                    q.push(1.0);
                    r.push(0.5 * ak - pk);
                    prefix += cols.gamma[k];
                }
            }
            v = vv;
        }
        PiagCase::Pl => {
            let sigma = params.sigma.ok_or(Error::MissingCertificate {
                case: "pl",
                what: "a quadratic-growth modulus (sigma)",
            })?;
            if !(sigma > 0.0) {
                return Err(Error::BadPolicy(format!(
                    "quadratic-growth modulus must be positive, got {sigma}"
                )));
            }
            let ht = 0.5 * (1.0 + h);
            let c = (1.0 as Real).min((1.0 - h) / (2.0 * h) * l / sigma);
            let denom = ht * ht - ht + 1.0;
            v = cols.obj.iter().map(|&o| o - params.p_star).collect();
            for k in 0..steps {
                let qk = 1.0 / (1.0 + c * sigma * (1.0 - ht) * cols.gamma[k] / denom);
                let pk = 0.5 * cols.gamma[k] * ht * l;
                q.push(qk);
                p.push(pk);
                r.push(0.5 * qk * ht * ht - pk);
            }
        }
    }

    Ok(LyapunovBundle {
        v,
        x,
        w,
        p,
        q,
        r,
        qprod: Vec::new(),
        tau: cols.tau,
        gamma: cols.gamma,
        replicates: Vec::new(),
    }
    .with_qprod())
}

/// Builds the Lyapunov bundle of a block-coordinate run ensemble.
///
/// All traces must share the `(τ_k, γ_k)` schedule (block sampling only
/// reorders coordinates, never the step-sizes). Expectations are estimated by
/// across-seed means; per-seed realizations are kept so the verifier can form
/// a standard error:
/// `V_k = E[P(x_k)]−P*`, `X_{k+1} = γ_k(1−h)/(4m)·E‖∇̃P(x_k)‖²`,
/// `W_k = E‖x_{k+1}−x_k‖²/γ_k`, `p_k = L̂γ_k/2`, `q_k = 1`, `r_k = h/2 − p_k`.
pub fn bundle_from_bcd(traces: &[RunTrace], params: &BcdParams) -> Result<LyapunovBundle> {
    if traces.is_empty() {
        return Err(Error::BadTrace("ensemble contains no traces".into()));
    }
    if !(params.h > 0.0 && params.h < 1.0) {
        return Err(Error::BadPolicy(format!(
            "bundle fraction h must lie in (0,1), got {}",
            params.h
        )));
    }
    let first = split_trace(&traces[0])?;
    let steps = first.gamma.len();
    let mut samples = Vec::with_capacity(traces.len());

    for trace in traces {
        let cols = split_trace(trace)?;
        if cols.gamma.len() != steps {
            return Err(Error::MismatchedSchedules(cols.gamma.len().min(steps)));
        }
        for k in 0..steps {
            if cols.tau[k] != first.tau[k] || cols.gamma[k].to_bits() != first.gamma[k].to_bits() {
                return Err(Error::MismatchedSchedules(k));
            }
        }
        if cols.metric[..steps].iter().any(|m| !m.is_finite()) {
            return Err(Error::BadTrace(
                "block-coordinate bundle needs the mapping norm recorded at every step".into(),
            ));
        }
        let factor = (1.0 - params.h) / (4.0 * params.m as Real);
        let mut x = vec![0.0; steps + 1];
        for k in 0..steps {
            x[k + 1] = cols.gamma[k] * factor * cols.metric[k] * cols.metric[k];
        }
        samples.push(SequenceSample {
            v: cols.obj.iter().map(|&o| o - params.p_star).collect(),
            x,
            w: ratio_w(&cols.step_norm_sq, &cols.gamma),
        });
    }

    let n = samples.len() as Real;
    let mean = |pick: &dyn Fn(&SequenceSample) -> &Vec<Real>, len: usize| -> Vec<Real> {
        (0..len)
            .map(|k| samples.iter().map(|s| pick(s)[k]).sum::<Real>() / n)
            .collect()
    };
    let v = mean(&|s| &s.v, steps + 1);
    let x = mean(&|s| &s.x, steps + 1);
    let w = mean(&|s| &s.w, steps);

    let mut p = Vec::with_capacity(steps);
    let mut r = Vec::with_capacity(steps);
    for k in 0..steps {
        let pk = 0.5 * params.l_hat * first.gamma[k];
        p.push(pk);
        r.push(0.5 * params.h - pk);
    }

    Ok(LyapunovBundle {
        v,
        x,
        w,
        p,
        q: vec![1.0; steps],
        r,
        qprod: Vec::new(),
        tau: first.tau,
        gamma: first.gamma,
        replicates: samples,
    }
    .with_qprod())
}

/// The inequality families checked by [`verify_sequence`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    /// Per-step recursion `X_{k+1}+V_{k+1} ≤ q_kV_k + p_kΣW_ℓ − r_kW_k`.
    Recursion,
    /// Delay-window coefficient condition (including `p_k, r_k ≥ 0`).
    WindowCondition,
    /// Envelope `V_k ≤ Q_k·V_0`.
    ContractionBound,
    /// Weighted partial sums `Σ_{k≤K'} X_k/Q_k ≤ V_0`.
    SummabilityBound,
}

impl CheckKind {
    pub fn name(&self) -> &'static str {
        match self {
            CheckKind::Recursion => "recursion",
            CheckKind::WindowCondition => "window-condition",
            CheckKind::ContractionBound => "contraction-bound",
            CheckKind::SummabilityBound => "summability-bound",
        }
    }
}

/// One violated inequality: positive `slack` is the amount by which the
/// left-hand side exceeded the right-hand side plus tolerance.
#[derive(Clone, Copy, Debug)]
pub struct Violation {
    pub check: CheckKind,
    pub k: usize,
    pub slack: Real,
    pub tolerance: Real,
}

/// Outcome of [`verify_sequence`]: the run passes iff no inequality is
/// violated beyond tolerance.
#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub violations: Vec<Violation>,
    pub checks_run: usize,
    /// Largest slack seen over all checks (negative = margin everywhere).
    pub worst_slack: Real,
    pub statistical: bool,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mode = if self.statistical {
            "statistical (3-sigma)"
        } else {
            "deterministic"
        };
        let mut out = if self.pass() {
            format!(
                "sequence verification: PASS ({} checks, {} tolerance, worst slack {:.3e})\n",
                self.checks_run, mode, self.worst_slack
            )
        } else {
            format!(
                "sequence verification: FAIL ({} of {} checks violated, {} tolerance, worst slack {:.3e})\n",
                self.violations.len(),
                self.checks_run,
                mode,
                self.worst_slack
            )
        };
        for v in self.violations.iter().take(20) {
            out.push_str(&format!(
                "  {:<20} k={:<6} slack {:.6e} (tolerance {:.1e})\n",
                v.check.name(),
                v.k,
                v.slack,
                v.tolerance
            ));
        }
        if self.violations.len() > 20 {
            out.push_str(&format!(
                "  ... {} more violations\n",
                self.violations.len() - 20
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,k,slack,tolerance\n");
        for v in &self.violations {
            out.push_str(&format!(
                "{},{},{},{}\n",
                v.check.name(),
                v.k,
                crate::dataio::fmt_real(v.slack),
                crate::dataio::fmt_real(v.tolerance)
            ));
        }
        out
    }
}

fn standard_error(samples: &[Real]) -> Real {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<Real>() / n as Real;
    let var = samples
        .iter()
        .map(|s| (s - mean) * (s - mean))
        .sum::<Real>()
        / (n - 1) as Real;
    (var / n as Real).sqrt()
}

#[allow(clippy::too_many_arguments)]
fn recursion_slack(
    v: &[Real],
    x: &[Real],
    w: &[Real],
    p: &[Real],
    q: &[Real],
    r: &[Real],
    taus: &[usize],
    k: usize,
) -> Real {
    let wsum: Real = ((k - taus[k])..k).map(|l| w[l]).sum();
    (x[k + 1] + v[k + 1]) - (q[k] * v[k] + p[k] * wsum - r[k] * w[k])
}

fn summability_prefixes(x: &[Real], qprod: &[Real]) -> Vec<Real> {
    let mut out = Vec::with_capacity(x.len() - 1);
    let mut acc = 0.0;
    for k in 1..x.len() {
        acc += x[k] / qprod[k];
        out.push(acc);
    }
    out
}

/// Checks the recursion, the window condition, the contraction envelope, and
/// the weighted summability over the finite horizon of `bundle`.
///
/// Deterministic bundles use an absolute tolerance of `1e−9`; statistical
/// bundles (two or more replicates) widen it by three across-seed standard
/// errors of the checked quantity. Structural defects — negative or
/// non-finite `V`/`X`/`W` entries, contraction factors outside `(0,1]`,
/// delays exceeding the iteration index — are errors, while negative
/// coefficients `p_k`/`r_k` and any violated inequality are reported as
/// failures in the returned report.
pub fn verify_sequence(bundle: &LyapunovBundle, taus: &[usize]) -> Result<VerifyReport> {
    let k_max = bundle.horizon();
    if taus.len() != k_max {
        return Err(Error::DimensionMismatch {
            context: "delay sequence",
            expected: k_max,
            found: taus.len(),
        });
    }
    if bundle.v.len() != k_max + 1 || bundle.x.len() != k_max + 1 || bundle.w.len() != k_max {
        return Err(Error::BadTrace(
            "bundle sequence lengths are inconsistent with the horizon".into(),
        ));
    }
    for (name, seq) in [("V", &bundle.v), ("X", &bundle.x), ("W", &bundle.w)] {
        for (k, &value) in seq.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::NegativeSequenceEntry { name, k, value });
            }
        }
    }
    for (k, &qk) in bundle.q.iter().enumerate() {
        if !(qk > 0.0 && qk <= 1.0) {
            return Err(Error::BadContraction { k, value: qk });
        }
    }
    for (k, &tau) in taus.iter().enumerate() {
        if tau > k {
            return Err(Error::DelayExceedsIteration { tau, k });
        }
    }

    let statistical = bundle.is_statistical();
    let mut violations = Vec::new();
    let mut checks_run = 0;
    let mut worst: Real = Real::NEG_INFINITY;
    let mut slack_samples = Vec::with_capacity(bundle.replicates.len());

    // per-step recursion
    for k in 0..k_max {
        let slack = recursion_slack(
            &bundle.v, &bundle.x, &bundle.w, &bundle.p, &bundle.q, &bundle.r, taus, k,
        );
        slack_samples.clear();
        for s in &bundle.replicates {
            slack_samples.push(recursion_slack(
                &s.v, &s.x, &s.w, &bundle.p, &bundle.q, &bundle.r, taus, k,
            ));
        }
        let tolerance = DETERMINISTIC_TOL + 3.0 * standard_error(&slack_samples);
        checks_run += 1;
        worst = worst.max(slack);
        if slack > tolerance {
            violations.push(Violation {
                check: CheckKind::Recursion,
                k,
                slack,
                tolerance,
            });
        }
    }

    // coefficient signs and the delay-window condition (deterministic even
    // for statistical bundles: p, q, r depend only on the shared schedule)
    #[allow(clippy::needless_range_loop)]
    for k in 0..k_max {
        for value in [bundle.p[k], bundle.r[k]] {
            checks_run += 1;
            let slack = -value;
            worst = worst.max(slack);
            if slack > DETERMINISTIC_TOL {
                violations.push(Violation {
                    check: CheckKind::WindowCondition,
                    k,
                    slack,
                    tolerance: DETERMINISTIC_TOL,
                });
            }
        }
        if !(bundle.p[k] > 0.0) {
            continue;
        }
        // scaled form: p_k ≤ r_ℓ·Π_{j=ℓ+1}^k q_j − Σ_{t=ℓ+1}^{k−1} p_t·Π_{j=t+1}^k q_j,
        // accumulated walking ℓ from k−1 down to k−τ_k
        let mut qr = bundle.q[k];
        let mut sum = 0.0;
        let mut l = k;
        while l > k - taus[k] {
            l -= 1;
            let slack = bundle.p[k] - (bundle.r[l] * qr - sum);
            checks_run += 1;
            worst = worst.max(slack);
            if slack > DETERMINISTIC_TOL {
                violations.push(Violation {
                    check: CheckKind::WindowCondition,
                    k,
                    slack,
                    tolerance: DETERMINISTIC_TOL,
                });
            }
            if l > 0 {
                sum += bundle.p[l] * qr;
                qr *= bundle.q[l];
            }
        }
    }

    // contraction envelope V_k ≤ Q_k V_0
    for k in 1..=k_max {
        let slack = bundle.v[k] - bundle.qprod[k] * bundle.v[0];
        slack_samples.clear();
        for s in &bundle.replicates {
            slack_samples.push(s.v[k] - bundle.qprod[k] * s.v[0]);
        }
        let tolerance = DETERMINISTIC_TOL + 3.0 * standard_error(&slack_samples);
        checks_run += 1;
        worst = worst.max(slack);
        if slack > tolerance {
            violations.push(Violation {
                check: CheckKind::ContractionBound,
                k,
                slack,
                tolerance,
            });
        }
    }

    // weighted summability: every partial sum Σ_{k≤K'} X_k/Q_k stays ≤ V_0
    let prefixes = summability_prefixes(&bundle.x, &bundle.qprod);
    let replicate_prefixes: Vec<Vec<Real>> = bundle
        .replicates
        .iter()
        .map(|s| summability_prefixes(&s.x, &bundle.qprod))
        .collect();
    for k in 1..=k_max {
        let slack = prefixes[k - 1] - bundle.v[0];
        slack_samples.clear();
        for (s, pref) in bundle.replicates.iter().zip(&replicate_prefixes) {
            slack_samples.push(pref[k - 1] - s.v[0]);
        }
        let tolerance = DETERMINISTIC_TOL + 3.0 * standard_error(&slack_samples);
        checks_run += 1;
        worst = worst.max(slack);
        if slack > tolerance {
            violations.push(Violation {
                check: CheckKind::SummabilityBound,
                k,
                slack,
                tolerance,
            });
        }
    }

    Ok(VerifyReport {
        violations,
        checks_run,
        worst_slack: worst,
        statistical,
    })
}

/// Convenience wrapper: verify a bundle against its own recorded delays.
pub fn verify_bundle(bundle: &LyapunovBundle) -> Result<VerifyReport> {
    verify_sequence(bundle, &bundle.tau)
}

/// Proximal-gradient mapping `∇̃P(x) = L̂(prox_{R/L̂}(x − ∇f(x)/L̂) − x)`;
/// zero exactly at stationary points, equal to `−∇f(x)` when `R ≡ 0`.
pub fn prox_grad_mapping(problem: &ProblemSpec, x: &DenseVec) -> DenseVec {
    problem.prox_grad_mapping(x)
}

/// Outcome of the step-size integral lower-bound check.
#[derive(Clone, Debug)]
pub struct Prop1Report {
    /// `Σ_{t≤k} γ_t − bound(k)` for every recorded `k`.
    pub margins: Vec<Real>,
    pub worst_margin: Real,
    pub pass: bool,
}

/// Checks the per-policy lower bound on the step-size integral for runs
/// whose delays stayed ≤ `tau`:
/// `Σ_{t=0}^k γ_t ≥ (k+1)·αγ'/(τ+1)` for the window-filling policy and
/// `Σ_{t=0}^k γ_t ≥ (k+1)·τγ'/(τ+1)²` for the reciprocal policy. Other
/// policies have no adaptive guarantee and are compared against zero.
pub fn check_prop1(
    history: &GammaHistory,
    tau: usize,
    alpha: Real,
    gamma_prime: Real,
    kind: PolicyKind,
) -> Prop1Report {
    let t = tau as Real;
    let per_step = match kind {
        PolicyKind::Adaptive1 => alpha * gamma_prime / (t + 1.0),
        PolicyKind::Adaptive2 => t * gamma_prime / ((t + 1.0) * (t + 1.0)),
        _ => 0.0,
    };
    let mut margins = Vec::with_capacity(history.len());
    let mut worst = Real::INFINITY;
    for k in 0..history.len() {
        let margin = history.prefix_sum(k + 1) - (k + 1) as Real * per_step;
        worst = worst.min(margin);
        margins.push(margin);
    }
    Prop1Report {
        margins,
        worst_margin: worst,
        pass: worst >= -INTEGRAL_SLACK,
    }
}

/// Synchronous proximal-gradient reference solver with step `1/L̂`; stops
/// when `‖∇̃P(x)‖ ≤ tol`. Returns the iterate and its objective value.
pub fn reference_solve(problem: &ProblemSpec, k_max: usize, tol: Real) -> (DenseVec, Real) {
    let gamma = 1.0 / problem.l_hat;
    let mut x = DenseVec::zeros(problem.dim);
    for _ in 0..k_max {
        let g = problem.grad(&x);
        let next = problem.prox(&x.sub_scaled(gamma, &g), gamma);
        // ‖∇̃P(x)‖ = L̂·‖next − x‖: stop at the iterate meeting the tolerance
        if next.sub(&x).norm() * problem.l_hat <= tol {
            break;
        }
        x = next;
    }
    let obj = problem.value(&x);
    (x, obj)
}

/// Certified cap on `Σ_{k≥1} γ_{k−1}·‖∇f(x_k)+ξ_k‖²` for aggregated-gradient
/// runs driven by the windowed principle with `γ' = h/L`.
pub fn gradient_integral_bound(h: Real, v0: Real) -> Real {
    2.0 * (h * h - h + 1.0) * v0 / (1.0 - h)
}

/// Certified objective curve for convex aggregated-gradient runs:
/// `P(x_k) − P* ≤ (V_0 + d_0²/(2a_0)) / (1 + Σγ/a_0)` with
/// `a_0 = h(h+1)/(L(1−h))`, where `Σγ` is the step-size integral through
/// `k−1` and `d_0` the initial distance to a minimizer.
pub fn convex_objective_curve(
    h: Real,
    l: Real,
    v0: Real,
    dist0_sq: Real,
    gamma_integral: Real,
) -> Real {
    let a0 = h * (h + 1.0) / (l * (1.0 - h));
    (v0 + dist0_sq / (2.0 * a0)) / (1.0 + gamma_integral / a0)
}

/// Geometric decay envelope under a quadratic-growth certificate:
/// `P(x_k) − P* ≤ exp(−3cσ(1−h̃)/(4(h̃²−h̃+1))·Σγ)·V_0` with `h̃ = (1+h)/2`
/// and `c = min(1, (1−h)L/(2hσ))`.
pub fn pl_decay_envelope(h: Real, sigma: Real, l: Real, v0: Real, gamma_integral: Real) -> Real {
    let ht = 0.5 * (1.0 + h);
    let c = (1.0 as Real).min((1.0 - h) / (2.0 * h) * l / sigma);
    (-(3.0 * c * sigma * (1.0 - ht)) / (4.0 * (ht * ht - ht + 1.0)) * gamma_integral).exp() * v0
}

/// Certified cap on `Σ_k γ_k·E‖∇̃P(x_k)‖²` for block-coordinate runs with
/// `γ' = h/L̂` over `m` blocks.
pub fn block_integral_bound(h: Real, m: usize, v0: Real) -> Real {
    4.0 * m as Real * v0 / (1.0 - h)
}
