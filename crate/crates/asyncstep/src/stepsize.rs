//! Step-size policies over a γ-history with exact windowed sums.
//!
//! The windowed step-size principle states that the step-size at iteration
//! `k` under delay `τ_k` must satisfy
//!
//! ```text
//! 0 ≤ γ_k ≤ max(0, γ' − Σ_{t=k−τ_k}^{k−1} γ_t)
//! ```
//!
//! where `γ'` is the delay-free cap (`h/L` for aggregated-gradient updates,
//! `h/L̂` for block-coordinate updates, `h ∈ (0,1)`). Any policy obeying it
//! converges for arbitrary bounded delays without knowing the bound. This
//! module provides the two adaptive policies built on the principle, the
//! fixed baselines, and the naive `c/(τ_k+b)` rule kept solely as a negative
//! control (it violates the principle and can diverge).
//!
//! Window sums are maintained as double-double compensated prefix sums, so
//! window queries are exact to well below 1e−12 and the principle can be
//! asserted as a strict inequality on the compensated values.

use crate::{Error, Real, Result};

// ---------------------------------------------------------------------------
// Double-double compensated arithmetic
// ---------------------------------------------------------------------------

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2` after renormalization.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Dd {
    hi: Real,
    lo: Real,
}

/// Error-free transformation: `a + b = s.hi + s.lo` exactly.
fn two_sum(a: Real, b: Real) -> Dd {
    let hi = a + b;
    let a_virtual = hi - b;
    let b_virtual = hi - a_virtual;
    let lo = (a - a_virtual) + (b - b_virtual);
    Dd { hi, lo }
}

impl Dd {
    fn from(v: Real) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    /// `self + v` with compensated renormalization.
    fn add(self, v: Real) -> Dd {
        let s = two_sum(self.hi, v);
        let lo = self.lo + s.lo;
        let hi = s.hi + lo;
        Dd {
            hi,
            lo: lo - (hi - s.hi),
        }
    }

    fn sub(self, other: Dd) -> Dd {
        self.add(-other.hi).add(-other.lo)
    }

    fn value(self) -> Real {
        self.hi + self.lo
    }

    /// Comparison on the compensated values (exact for our magnitudes).
    fn le(self, other: Dd) -> bool {
        let d = other.sub(self);
        d.hi > 0.0 || (d.hi == 0.0 && d.lo >= 0.0)
    }
}

// ---------------------------------------------------------------------------
// Gamma history
// ---------------------------------------------------------------------------

/// Append-only sequence `γ_0, …, γ_{k−1}` with compensated prefix sums for
/// O(1) exact window queries. Single-writer; reads of already-published
/// indices are safe from the writer's thread or after publication.
#[derive(Clone, Debug, Default)]
pub struct GammaHistory {
    gammas: Vec<Real>,
    /// `prefix[i]` = Σ_{t<i} γ_t; `prefix.len() == gammas.len() + 1`.
    prefix: Vec<Dd>,
}

impl GammaHistory {
    pub fn new() -> Self {
        GammaHistory {
            gammas: Vec::new(),
            prefix: vec![Dd::default()],
        }
    }

    /// Number of recorded step-sizes (the current iteration index `k`).
    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn gamma(&self, t: usize) -> Real {
        self.gammas[t]
    }

    pub fn as_slice(&self) -> &[Real] {
        &self.gammas
    }

    pub fn push(&mut self, gamma: Real) {
        debug_assert!(gamma >= 0.0 && gamma.is_finite(), "bad step-size {gamma}");
        self.prefix.push(self.prefix[self.gammas.len()].add(gamma));
        self.gammas.push(gamma);
    }

    /// Σ_{t=0}^{k−1} γ_t over the whole history.
    pub fn total(&self) -> Real {
        self.prefix[self.gammas.len()].value()
    }

    /// Σ_{t<k} γ_t.
    pub fn prefix_sum(&self, k: usize) -> Real {
        self.prefix[k].value()
    }

    fn window_dd(&self, k: usize, tau: usize) -> Dd {
        let from = k - tau;
        self.prefix[k].sub(self.prefix[from])
    }
}

/// Exact window sum `Σ_{t=k−τ}^{k−1} γ_t` (compensated prefix difference).
pub fn window_sum(history: &GammaHistory, k: usize, tau: usize) -> Result<Real> {
    if tau > k {
        return Err(Error::DelayExceedsIteration { tau, k });
    }
    if k > history.len() {
        return Err(Error::HistoryOutOfRange {
            k,
            len: history.len(),
        });
    }
    Ok(history.window_dd(k, tau).value())
}

/// `max(0, γ' − window)` — the principle's step-size budget.
pub fn principle_cap(gamma_prime: Real, window: Real) -> Real {
    (gamma_prime - window).max(0.0)
}

/// Largest representable value not exceeding the exact budget
/// `max(0, γ' − Σ_{t=k−τ}^{k−1} γ_t)`; emitting it (or any fraction of it)
/// keeps the principle a true inequality on the compensated sums.
fn cap_floor(history: &GammaHistory, k: usize, tau: usize, gamma_prime: Real) -> Real {
    let window = history.window_dd(k, tau);
    let exact = Dd::from(gamma_prime).sub(window);
    let mut cap = exact.value();
    if cap <= 0.0 {
        return 0.0;
    }
    // Round down if the f64 collapse overshot the compensated value.
    if !Dd::from(cap).le(exact) {
        cap = cap.next_down();
    }
    cap.max(0.0)
}

/// Checks `0 ≤ γ ≤ max(0, γ' − window)` with the comparison carried out on
/// the compensated sums (the same arithmetic the adaptive policies use).
pub fn satisfies_principle(
    history: &GammaHistory,
    k: usize,
    tau: usize,
    gamma_prime: Real,
    gamma: Real,
) -> Result<bool> {
    if tau > k {
        return Err(Error::DelayExceedsIteration { tau, k });
    }
    if k > history.len() {
        return Err(Error::HistoryOutOfRange {
            k,
            len: history.len(),
        });
    }
    if !(gamma >= 0.0) {
        return Ok(false);
    }
    if gamma == 0.0 {
        return Ok(true);
    }
    let lhs = history.window_dd(k, tau).add(gamma);
    Ok(lhs.le(Dd::from(gamma_prime)))
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    /// `γ_k = α · max(0, γ' − window)`, `α ∈ (0,1]`.
    Adaptive1,
    /// `γ_k = γ'/(τ_k+1)` when that fits the remaining budget, else 0.
    Adaptive2,
    /// Constant `γ'/(τ+1)` for a known delay bound `τ`.
    Fixed,
    /// Constant `γ'/(τ+1/2)` (equivalently `h/(L(τ+1/2))`).
    FixedSun,
    /// Constant `h/(L̂ + 2Lτ/√m)` for block-coordinate updates.
    FixedDavis,
    /// `c/(τ_k+b)` — negative control; violates the windowed principle.
    Naive,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Adaptive1 => "adaptive1",
            PolicyKind::Adaptive2 => "adaptive2",
            PolicyKind::Fixed => "fixed",
            PolicyKind::FixedSun => "fixed-sun",
            PolicyKind::FixedDavis => "fixed-davis",
            PolicyKind::Naive => "naive",
        }
    }

    pub fn parse(name: &str) -> Result<PolicyKind> {
        Ok(match name {
            "adaptive1" => PolicyKind::Adaptive1,
            "adaptive2" => PolicyKind::Adaptive2,
            "fixed" => PolicyKind::Fixed,
            "fixed-sun" => PolicyKind::FixedSun,
            "fixed-davis" => PolicyKind::FixedDavis,
            "naive" => PolicyKind::Naive,
            other => return Err(Error::BadPolicy(format!("unknown policy kind {other:?}"))),
        })
    }

    /// Whether every step-size this policy emits satisfies the windowed
    /// principle by construction (given true delays within the configured
    /// bound for `Fixed`). The naive control and the two literature
    /// baselines deliberately do not.
    pub fn respects_principle(&self) -> bool {
        matches!(
            self,
            PolicyKind::Adaptive1 | PolicyKind::Adaptive2 | PolicyKind::Fixed
        )
    }
}

/// Smoothness constants consumed by the `FixedDavis` baseline denominator
/// `L̂ + 2Lτ/√m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DavisParams {
    pub l: Real,
    pub l_hat: Real,
    pub m: usize,
}

/// Validated step-size policy configuration.
///
/// `gamma_prime` is the delay-free cap `γ'`. `alpha` is read only by
/// `Adaptive1`; `tau_bound` only by the fixed baselines; `c`, `b` only by
/// `Naive`; `h` and `davis` only by `FixedDavis`. The adaptive policies
/// never read `tau_bound` — they adapt to the measured delays alone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub gamma_prime: Real,
    pub alpha: Real,
    pub h: Real,
    pub tau_bound: Option<usize>,
    pub c: Real,
    pub b: Real,
    pub davis: Option<DavisParams>,
}

impl PolicyConfig {
    pub fn adaptive1(gamma_prime: Real, alpha: Real) -> Result<Self> {
        let cfg = PolicyConfig {
            kind: PolicyKind::Adaptive1,
            gamma_prime,
            alpha,
            h: Real::NAN,
            tau_bound: None,
            c: 1.0,
            b: 1.0,
            davis: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn adaptive2(gamma_prime: Real) -> Result<Self> {
        let cfg = PolicyConfig {
            kind: PolicyKind::Adaptive2,
            gamma_prime,
            alpha: 1.0,
            h: Real::NAN,
            tau_bound: None,
            c: 1.0,
            b: 1.0,
            davis: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fixed(gamma_prime: Real, tau_bound: usize) -> Result<Self> {
        let cfg = PolicyConfig {
            kind: PolicyKind::Fixed,
            gamma_prime,
            alpha: 1.0,
            h: Real::NAN,
            tau_bound: Some(tau_bound),
            c: 1.0,
            b: 1.0,
            davis: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fixed_sun(gamma_prime: Real, tau_bound: usize) -> Result<Self> {
        let cfg = PolicyConfig {
            kind: PolicyKind::FixedSun,
            gamma_prime,
            alpha: 1.0,
            h: Real::NAN,
            tau_bound: Some(tau_bound),
            c: 1.0,
            b: 1.0,
            davis: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fixed_davis(h: Real, l: Real, l_hat: Real, m: usize, tau_bound: usize) -> Result<Self> {
        let cfg = PolicyConfig {
            kind: PolicyKind::FixedDavis,
            gamma_prime: h / l_hat,
            alpha: 1.0,
            h,
            tau_bound: Some(tau_bound),
            c: 1.0,
            b: 1.0,
            davis: Some(DavisParams { l, l_hat, m }),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn naive(c: Real, b: Real) -> Result<Self> {
        let cfg = PolicyConfig {
            kind: PolicyKind::Naive,
            // The negative control has no delay-free cap; its k=0 value
            // doubles as a reporting stand-in.
            gamma_prime: c / b,
            alpha: 1.0,
            h: Real::NAN,
            tau_bound: None,
            c,
            b,
            davis: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadPolicy(msg));
        if !(self.gamma_prime > 0.0) || !self.gamma_prime.is_finite() {
            return bad(format!(
                "gamma_prime must be positive, got {}",
                self.gamma_prime
            ));
        }
        match self.kind {
            PolicyKind::Adaptive1 => {
                if !(self.alpha > 0.0 && self.alpha <= 1.0) {
                    return bad(format!("alpha must lie in (0,1], got {}", self.alpha));
                }
            }
            PolicyKind::Adaptive2 => {}
            PolicyKind::Fixed | PolicyKind::FixedSun | PolicyKind::FixedDavis => {
                if self.tau_bound.is_none() {
                    return Err(Error::MissingTauBound(self.kind.name()));
                }
                if self.kind == PolicyKind::FixedDavis {
                    match self.davis {
                        None => return bad("fixed-davis requires smoothness constants".into()),
                        Some(DavisParams { l, l_hat, m }) => {
                            if !(l > 0.0 && l_hat > 0.0) || m == 0 {
                                return bad(format!(
                                    "fixed-davis constants must be positive (l={l}, l_hat={l_hat}, m={m})"
                                ));
                            }
                            if !(self.h > 0.0 && self.h < 1.0) {
                                return bad(format!("h must lie in (0,1), got {}", self.h));
                            }
                        }
                    }
                }
            }
            PolicyKind::Naive => {
                if !(self.c > 0.0 && self.b > 0.0) {
                    return bad(format!(
                        "naive needs c,b > 0, got c={}, b={}",
                        self.c, self.b
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn respects_principle(&self) -> bool {
        self.kind.respects_principle()
    }

    /// Computes `γ_k` for the delay `τ_k = tau` at iteration
    /// `k = history.len()` without mutating the history.
    pub fn next_gamma(&self, history: &GammaHistory, tau: usize) -> Result<Real> {
        let k = history.len();
        if tau > k {
            return Err(Error::DelayExceedsIteration { tau, k });
        }
        let gamma = match self.kind {
            PolicyKind::Adaptive1 => {
                // α·cap ≤ cap holds in floating point for α ≤ 1 because cap
                // is representable and the exact product does not exceed it.
                self.alpha * cap_floor(history, k, tau, self.gamma_prime)
            }
            PolicyKind::Adaptive2 => {
                let mu = self.gamma_prime / (tau as Real + 1.0);
                // Exact comparison on the compensated sums; ties emit μ.
                let lhs = history.window_dd(k, tau).add(mu);
                if lhs.le(Dd::from(self.gamma_prime)) {
                    mu
                } else {
                    0.0
                }
            }
            PolicyKind::Fixed => {
                let tau_bound = self.tau_bound.expect("validated");
                let nominal = self.gamma_prime / (tau_bound as Real + 1.0);
                // The nominal value fits the budget whenever true delays stay
                // within the bound; the clamp only shaves rounding residue
                // (and guards against out-of-bound delays).
                nominal.min(cap_floor(history, k, tau, self.gamma_prime))
            }
            PolicyKind::FixedSun => {
                let tau_bound = self.tau_bound.expect("validated");
                self.gamma_prime / (tau_bound as Real + 0.5)
            }
            PolicyKind::FixedDavis => {
                let tau_bound = self.tau_bound.expect("validated");
                let DavisParams { l, l_hat, m } = self.davis.expect("validated");
                self.h / (l_hat + 2.0 * l * tau_bound as Real / (m as Real).sqrt())
            }
            PolicyKind::Naive => self.c / (tau as Real + self.b),
        };
        Ok(gamma)
    }

    /// Computes `γ_k`, asserts the principle (debug builds, principled
    /// policies only), and appends to the history.
    pub fn step(&self, history: &mut GammaHistory, tau: usize) -> Result<Real> {
        let gamma = self.next_gamma(history, tau)?;
        if self.respects_principle() {
            debug_assert!(
                satisfies_principle(history, history.len(), tau, self.gamma_prime, gamma)?,
                "policy {} broke the windowed principle: gamma={gamma:e} tau={tau} k={}",
                self.kind.name(),
                history.len(),
            );
        }
        history.push(gamma);
        Ok(gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn history_of(values: &[Real]) -> GammaHistory {
        let mut h = GammaHistory::new();
        for &v in values {
            h.push(v);
        }
        h
    }

    #[test]
    fn window_sum_arithmetic() {
        let h = history_of(&[0.1, 0.2, 0.3]);
        assert!((window_sum(&h, 3, 2).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(window_sum(&h, 3, 0).unwrap(), 0.0);
        assert_eq!(window_sum(&h, 2, 0).unwrap(), 0.0);
        assert!((window_sum(&h, 3, 3).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(
            window_sum(&h, 2, 3),
            Err(Error::DelayExceedsIteration { tau: 3, k: 2 })
        ));
        assert!(matches!(
            window_sum(&h, 9, 1),
            Err(Error::HistoryOutOfRange { k: 9, len: 3 })
        ));
    }

    #[test]
    fn window_sum_matches_naive_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let len = rng.gen_range(1..400usize);
            let values: Vec<Real> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
            let h = history_of(&values);
            let k = rng.gen_range(0..=len);
            let tau = rng.gen_range(0..=k);
            let fast = window_sum(&h, k, tau).unwrap();
            let naive: Real = values[k - tau..k].iter().sum();
            // the oracle itself carries ~len*eps error
            let tol = 1e-16 * (tau as Real + 4.0) * naive.abs() + 1e-18;
            assert!(
                (fast - naive).abs() <= tol * 16.0,
                "window {fast} vs naive {naive}"
            );
        }
    }

    #[test]
    fn principle_cap_clamps() {
        assert!((principle_cap(1.0, 0.4) - 0.6).abs() < 1e-15);
        assert_eq!(principle_cap(1.0, 1.7), 0.0);
        assert_eq!(principle_cap(0.99, 0.0), 0.99);
    }

    #[test]
    fn adaptive1_first_step_and_fixed_point() {
        let cfg = PolicyConfig::adaptive1(1.0, 0.9).unwrap();
        let mut h = GammaHistory::new();
        assert_eq!(cfg.step(&mut h, 0).unwrap(), 0.9);
        // constant delay 5: gamma converges to alpha*gamma'/(1+alpha*tau)
        for k in 1..10_000usize {
            cfg.step(&mut h, k.min(5)).unwrap();
        }
        let last = h.gamma(h.len() - 1);
        assert!(
            (last - 0.9 / 5.5).abs() < 1e-9,
            "fixed point {last} vs {}",
            0.9 / 5.5
        );
    }

    #[test]
    fn adaptive1_alpha_one_never_exceeds_cap() {
        let cfg = PolicyConfig::adaptive1(0.7, 1.0).unwrap();
        let mut h = GammaHistory::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in 0..3000usize {
            let tau = rng.gen_range(0..=k.min(9));
            let g = cfg.next_gamma(&h, tau).unwrap();
            assert!((0.0..=0.7).contains(&g));
            // a nonzero step never overdraws gamma'; an overdrawn window
            // (possible when tau grows between iterations) forces zero
            let w = window_sum(&h, k, tau).unwrap();
            if g > 0.0 {
                assert!(
                    w + g <= 0.7 * (1.0 + 1e-12),
                    "overdraw at k={k}: w={w} g={g}"
                );
            } else {
                assert!(
                    w >= 0.7 * (1.0 - 1e-12),
                    "zero step with slack at k={k}: w={w}"
                );
            }
            h.push(g);
        }
    }

    #[test]
    fn adaptive2_steady_state_is_exact() {
        let cfg = PolicyConfig::adaptive2(1.0).unwrap();
        let mut h = GammaHistory::new();
        for k in 0..200usize {
            cfg.step(&mut h, k.min(5)).unwrap();
        }
        // gamma_0 = gamma' (empty window, tie emits the nonzero value)
        assert_eq!(h.gamma(0), 1.0);
        // after the window refills, every step is exactly gamma'/6
        for t in 6..200 {
            assert_eq!(h.gamma(t), 1.0 / 6.0, "at t={t}");
        }
    }

    #[test]
    fn adaptive2_burst_zeroes_exactly_once() {
        let cfg = PolicyConfig::adaptive2(0.99).unwrap();
        let mut h = GammaHistory::new();
        for k in 0..50usize {
            let tau = if k == 10 { 5 } else { 0 };
            cfg.step(&mut h, tau).unwrap();
        }
        for t in 0..50 {
            if t == 10 {
                assert_eq!(h.gamma(t), 0.0);
            } else {
                assert_eq!(h.gamma(t), 0.99, "at t={t}");
            }
        }
    }

    #[test]
    fn naive_matches_harmonic_sums() {
        let cfg = PolicyConfig::naive(1.0, 1.0).unwrap();
        let mut h = GammaHistory::new();
        for k in 0..7usize {
            let g = cfg.step(&mut h, k % 7).unwrap();
            assert_eq!(g, 1.0 / (k as Real + 1.0));
        }
        // period sum is the 7th harmonic number 363/140 > 2
        let period: Real = h.total();
        assert!((period - 363.0 / 140.0).abs() < 1e-15);
        assert!(period > 2.0);
    }

    #[test]
    fn naive_violates_principle_on_cyclic_delays() {
        // negative control: with tau_k = k mod 7 and c=b=1 the budget
        // gamma'=1 is overdrawn somewhere in every period
        let cfg = PolicyConfig::naive(1.0, 1.0).unwrap();
        let mut h = GammaHistory::new();
        let mut violated = false;
        for k in 0..50usize {
            let tau = k % 7;
            let g = cfg.next_gamma(&h, tau).unwrap();
            if !satisfies_principle(&h, k, tau, 1.0, g).unwrap() {
                violated = true;
            }
            h.push(g);
        }
        assert!(violated);
    }

    #[test]
    fn fixed_baseline_emits_constant() {
        let cfg = PolicyConfig::fixed(1.0, 5).unwrap();
        let mut h = GammaHistory::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for k in 0..500usize {
            let tau = rng.gen_range(0..=k.min(5));
            let g = cfg.step(&mut h, tau).unwrap();
            assert_eq!(g, 1.0 / 6.0, "at k={k}");
        }
    }

    #[test]
    fn fixed_sun_and_davis_formulas() {
        let sun = PolicyConfig::fixed_sun(0.99, 5).unwrap();
        let h = GammaHistory::new();
        assert_eq!(sun.next_gamma(&h, 0).unwrap(), 0.99 / 5.5);

        let davis = PolicyConfig::fixed_davis(0.99, 1.0, 1.0, 20, 5).unwrap();
        let expect = 0.99 / (1.0 + 10.0 / (20.0 as Real).sqrt());
        assert_eq!(davis.next_gamma(&h, 0).unwrap(), expect);
        // these baselines intentionally ignore the windowed budget
        assert!(!sun.respects_principle());
        assert!(!davis.respects_principle());
        assert!(sun.next_gamma(&h, 0).unwrap() > 0.99 / 6.0);
    }

    #[test]
    fn delay_beyond_iteration_rejected() {
        let cfg = PolicyConfig::adaptive2(1.0).unwrap();
        let h = GammaHistory::new();
        assert!(matches!(
            cfg.next_gamma(&h, 1),
            Err(Error::DelayExceedsIteration { tau: 1, k: 0 })
        ));
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        assert!(PolicyConfig::adaptive1(1.0, 0.0).is_err());
        assert!(PolicyConfig::adaptive1(1.0, 1.5).is_err());
        assert!(PolicyConfig::adaptive1(-1.0, 0.5).is_err());
        assert!(PolicyConfig::adaptive2(0.0).is_err());
        assert!(PolicyConfig::naive(0.0, 1.0).is_err());
        assert!(PolicyConfig::naive(1.0, -2.0).is_err());
        assert!(PolicyConfig::fixed_davis(0.99, 0.0, 1.0, 20, 5).is_err());
        assert!(PolicyConfig::fixed_davis(1.5, 1.0, 1.0, 20, 5).is_err());
        let mut cfg = PolicyConfig::fixed(1.0, 3).unwrap();
        cfg.tau_bound = None;
        assert!(matches!(cfg.validate(), Err(Error::MissingTauBound(_))));
    }

    #[test]
    fn policy_kind_names_round_trip() {
        for kind in [
            PolicyKind::Adaptive1,
            PolicyKind::Adaptive2,
            PolicyKind::Fixed,
            PolicyKind::FixedSun,
            PolicyKind::FixedDavis,
            PolicyKind::Naive,
        ] {
            assert_eq!(PolicyKind::parse(kind.name()).unwrap(), kind);
        }
        assert!(PolicyKind::parse("sgd").is_err());
    }

    proptest! {
        // lower bounds on the step-size integral: for any delay sequence
        // bounded by tau, adaptive 1 accumulates at least
        // (k+1)*alpha*gamma'/(tau+1) and adaptive 2 at least
        // (k+1)*tau*gamma'/(tau+1)^2
        #[test]
        fn integral_lower_bounds(
            seed in 0u64..1_000_000,
            tau in 0usize..=10,
            len in 1usize..300,
            alpha in 0.05f64..=1.0,
        ) {
            let gamma_prime = 0.75;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let delays: Vec<usize> = (0..len)
                .map(|k| rng.gen_range(0..=tau.min(k)))
                .collect();

            let a1 = PolicyConfig::adaptive1(gamma_prime, alpha).unwrap();
            let mut h1 = GammaHistory::new();
            let a2 = PolicyConfig::adaptive2(gamma_prime).unwrap();
            let mut h2 = GammaHistory::new();
            for &tau_k in &delays {
                a1.step(&mut h1, tau_k).unwrap();
                a2.step(&mut h2, tau_k).unwrap();
            }
            let k = (len - 1) as Real;
            let bound1 = (k + 1.0) * alpha * gamma_prime / (tau as Real + 1.0);
            prop_assert!(h1.total() >= bound1 - 1e-12);
            let t = tau as Real;
            let bound2 = (k + 1.0) * t * gamma_prime / ((t + 1.0) * (t + 1.0));
            prop_assert!(h2.total() >= bound2 - 1e-12);
        }

        // every principled policy passes the audit on arbitrary delays
        #[test]
        fn principle_holds_for_adaptive_policies(
            seed in 0u64..1_000_000,
            tau in 0usize..=8,
            len in 1usize..200,
        ) {
            let policies = [
                PolicyConfig::adaptive1(0.5, 0.9).unwrap(),
                PolicyConfig::adaptive1(0.5, 1.0).unwrap(),
                PolicyConfig::adaptive2(0.5).unwrap(),
                PolicyConfig::fixed(0.5, tau).unwrap(),
            ];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let delays: Vec<usize> = (0..len)
                .map(|k| rng.gen_range(0..=tau.min(k)))
                .collect();
            for cfg in policies {
                let mut h = GammaHistory::new();
                for (k, &tau_k) in delays.iter().enumerate() {
                    let g = cfg.next_gamma(&h, tau_k).unwrap();
                    prop_assert!(satisfies_principle(&h, k, tau_k, cfg.gamma_prime, g).unwrap());
                    h.push(g);
                }
            }
        }
    }
}
