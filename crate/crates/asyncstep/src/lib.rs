//! Delay-adaptive step-size policies for asynchronous proximal optimization.
//!
//! The crate implements two asynchronous algorithms for composite problems
//! `min_x P(x) = f(x) + R(x)`:
//!
//! * **PIAG** (proximal incremental aggregated gradient) in a parameter-server
//!   topology: the master keeps the latest, possibly stale, gradient per
//!   worker, averages them, and takes a proximal step.
//! * **Async-BCD** (asynchronous block-coordinate descent) in a shared-memory
//!   topology: workers update random coordinate blocks using possibly
//!   inconsistent reads of the shared iterate.
//!
//! Both are driven by step-size policies built around the *windowed step-size
//! principle*
//!
//! ```text
//! 0 <= gamma_k <= max(0, gamma' - sum_{t=k-tau_k..k-1} gamma_t)
//! ```
//!
//! which guarantees convergence for arbitrary bounded delays without knowing
//! the delay bound. The [`stepsize`] module houses the policies, [`delay`] the
//! delay-sequence generators, [`piag_sim`] / [`bcd_sim`] deterministic
//! single-threaded simulators, [`runtime`] real multi-threaded backends with
//! measured delays, and [`analysis`] numerical verifiers for the convergence
//! certificates (Lyapunov sequence inequalities, residual-sum bounds, and
//! step-size-integral lower bounds).
//!
//! All domain types use the crate-level [`Real`] alias (64-bit floats; the
//! certificate checks need ~1e-12 headroom). Low-level vector kernels in
//! [`numkit`] are generic over [`Scalar`] so they can be instantiated at `f32`
//! as well.

// Validation uses `!(x > 0.0)`-style comparisons throughout so that NaN
// inputs fail closed; the suggested `partial_cmp` forms hide that intent.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bcd_sim;
pub mod dataio;
pub mod delay;
mod error;
pub mod numkit;
pub mod piag_sim;
pub mod runtime;
pub mod stepsize;

pub use error::{Error, Result};

/// Scalar precision used by all domain types.
pub type Real = f64;

/// Floating-point scalars accepted by the generic kernels in [`numkit`].
pub trait Scalar: num_traits::Float + num_traits::FromPrimitive + core::fmt::Debug {}

impl Scalar for f32 {}
impl Scalar for f64 {}
