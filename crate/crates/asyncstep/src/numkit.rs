//! Vector math, loss functions, proximal operators, and Lipschitz-constant
//! estimation for composite objectives `P(x) = f(x) + R(x)` with a finite-sum
//! smooth part `f = (1/n) sum_i f^(i)` and a block-separable regularizer.
//!
//! Low-level kernels are generic over [`Scalar`] (`f32`/`f64`); the domain
//! types are fixed at [`Real`].

use std::ops::Range;
use std::sync::Arc;

use crate::dataio::Dataset;
use crate::{Error, Real, Result, Scalar};

// ---------------------------------------------------------------------------
// Generic kernels
// ---------------------------------------------------------------------------

/// Dot product of two equally sized slices.
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// Squared Euclidean norm.
pub fn norm_sq<F: Scalar>(a: &[F]) -> F {
    dot(a, a)
}

/// In-place `out += coeff * a`.
pub fn axpy<F: Scalar>(coeff: F, a: &[F], out: &mut [F]) {
    debug_assert_eq!(a.len(), out.len());
    for (o, &x) in out.iter_mut().zip(a) {
        *o = *o + coeff * x;
    }
}

/// Componentwise soft threshold: `sign(v) * max(|v| - t, 0)`.
pub fn soft_threshold<F: Scalar>(v: F, t: F) -> F {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        F::zero()
    }
}

/// Numerically stable `ln(1 + e^t)`.
pub fn softplus<F: Scalar>(t: F) -> F {
    // max(t, 0) + ln(1 + e^{-|t|}) avoids overflow for large |t|.
    let zero = F::zero();
    let big = if t > zero { t } else { zero };
    big + (-t.abs()).exp().ln_1p()
}

/// Logistic sigmoid `1 / (1 + e^{-t})`, stable on both tails.
pub fn sigmoid<F: Scalar>(t: F) -> F {
    let one = F::one();
    if t >= F::zero() {
        one / (one + (-t).exp())
    } else {
        let e = t.exp();
        e / (one + e)
    }
}

// ---------------------------------------------------------------------------
// Dense and sparse vectors
// ---------------------------------------------------------------------------

/// Dense vector of [`Real`] entries. Public operations keep every entry
/// finite; this is debug-asserted after mutating math.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseVec(pub Vec<Real>);

impl DenseVec {
    pub fn zeros(dim: usize) -> Self {
        DenseVec(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<Real>) -> Self {
        let v = DenseVec(values);
        v.debug_assert_finite();
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[Real] {
        &self.0
    }

    pub fn dot(&self, other: &DenseVec) -> Real {
        dot(&self.0, &other.0)
    }

    pub fn norm_sq(&self) -> Real {
        norm_sq(&self.0)
    }

    pub fn norm(&self) -> Real {
        self.norm_sq().sqrt()
    }

    /// `self - coeff * other`.
    pub fn sub_scaled(&self, coeff: Real, other: &DenseVec) -> DenseVec {
        debug_assert_eq!(self.dim(), other.dim());
        let out = DenseVec(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(&a, &b)| a - coeff * b)
                .collect(),
        );
        out.debug_assert_finite();
        out
    }

    pub fn sub(&self, other: &DenseVec) -> DenseVec {
        self.sub_scaled(1.0, other)
    }

    pub fn scale(&self, coeff: Real) -> DenseVec {
        let out = DenseVec(self.0.iter().map(|&a| a * coeff).collect());
        out.debug_assert_finite();
        out
    }

    pub fn dist_sq(&self, other: &DenseVec) -> Real {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum()
    }

    /// Entrywise mean of a nonempty family of equally sized vectors.
    pub fn mean_of(vecs: &[DenseVec]) -> DenseVec {
        assert!(!vecs.is_empty());
        let dim = vecs[0].dim();
        let mut out = vec![0.0; dim];
        for v in vecs {
            axpy(1.0, &v.0, &mut out);
        }
        let inv = 1.0 / vecs.len() as Real;
        for o in &mut out {
            *o *= inv;
        }
        DenseVec(out)
    }

    fn debug_assert_finite(&self) {
        debug_assert!(
            self.0.iter().all(|v| v.is_finite()),
            "DenseVec contains a non-finite entry"
        );
    }
}

/// Sparse feature row with strictly increasing column indices below `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<Real>,
    pub dim: usize,
}

impl SparseRow {
    /// Validates the index invariant (strictly increasing, all below `dim`).
    pub fn new(indices: Vec<usize>, values: Vec<Real>, dim: usize) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch {
                context: "sparse row (indices vs values)",
                expected: indices.len(),
                found: values.len(),
            });
        }
        for w in indices.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("indices not strictly increasing: {} then {}", w[0], w[1]),
                });
            }
        }
        if let Some(&last) = indices.last() {
            if last >= dim {
                return Err(Error::DimensionMismatch {
                    context: "sparse row (max index vs dim)",
                    expected: dim,
                    found: last + 1,
                });
            }
        }
        Ok(SparseRow {
            indices,
            values,
            dim,
        })
    }

    pub fn dot_dense(&self, x: &[Real]) -> Real {
        debug_assert!(x.len() >= self.dim);
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| v * x[i])
            .sum()
    }

    pub fn norm_sq(&self) -> Real {
        norm_sq(&self.values)
    }

    /// `out += coeff * self` (scatter).
    pub fn add_scaled_into(&self, coeff: Real, out: &mut [Real]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] += coeff * v;
        }
    }
}

// ---------------------------------------------------------------------------
// Regularizers
// ---------------------------------------------------------------------------

/// Block-separable regularizer `R`.
#[derive(Clone, Debug, PartialEq)]
pub enum Regularizer {
    /// `R = 0`.
    Zero,
    /// `R(x) = lambda1 * ||x||_1`.
    L1 { lambda1: Real },
}

impl Regularizer {
    pub fn value(&self, x: &[Real]) -> Real {
        match self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { lambda1 } => lambda1 * x.iter().map(|v| v.abs()).sum::<Real>(),
        }
    }

    /// Componentwise `prox_{gamma R}`; separable, so it also serves block
    /// updates.
    pub fn prox_scalar(&self, v: Real, gamma: Real) -> Real {
        match self {
            Regularizer::Zero => v,
            Regularizer::L1 { lambda1 } => soft_threshold(v, gamma * lambda1),
        }
    }

    pub fn prox_slice(&self, v: &[Real], gamma: Real) -> Vec<Real> {
        v.iter().map(|&a| self.prox_scalar(a, gamma)).collect()
    }

    /// A canonical subgradient of `R` at `x` (used when a step-size of zero
    /// leaves no implicit subgradient to extract from the update).
    pub fn subgradient(&self, x: &[Real]) -> Vec<Real> {
        match self {
            Regularizer::Zero => vec![0.0; x.len()],
            Regularizer::L1 { lambda1 } => x.iter().map(|&v| lambda1 * signum0(v)).collect(),
        }
    }
}

fn signum0(v: Real) -> Real {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Soft-threshold prox `prox_{t ||.||_1}(v)`, componentwise
/// `sign(v_j) * max(|v_j| - t, 0)`.
pub fn prox_l1(v: &DenseVec, threshold: Real) -> Result<DenseVec> {
    if threshold < 0.0 || !threshold.is_finite() {
        return Err(Error::NegativeThreshold(threshold));
    }
    Ok(DenseVec(
        v.0.iter().map(|&a| soft_threshold(a, threshold)).collect(),
    ))
}

// ---------------------------------------------------------------------------
// Problems
// ---------------------------------------------------------------------------

/// Strong-convexity / Polyak-Lojasiewicz certificate with modulus `sigma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PLCertificate {
    pub sigma: Real,
    pub kind: PlKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlKind {
    StronglyConvex,
    ProximalPL,
}

/// The smooth part `f`, with its finite-sum component structure.
#[derive(Clone, Debug)]
pub enum Objective {
    /// One-dimensional `f(x) = scale * x^2 / 2` (a single component).
    Quadratic { scale: Real },
    /// Regularized logistic loss over a dataset split into per-worker
    /// batches: `f^(i)(x) = (1/|B_i|) sum_{s in B_i} ln(1 + e^{-b_s a_s.x})
    /// + (lambda2/2) ||x||^2` and `f = (1/n) sum_i f^(i)`.
    Logreg {
        data: Arc<Dataset>,
        lambda2: Real,
        batches: Vec<Range<usize>>,
        /// Per-sample weight `1 / (n * |B_i|)` so that gradients of `f`
        /// aggregate exactly, even for uneven batches.
        weights: Vec<Real>,
    },
}

/// Composite problem specification: smooth components with gradient oracles,
/// a regularizer with a prox oracle, smoothness constants, and the block
/// partition used by coordinate descent.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub objective: Objective,
    pub reg: Regularizer,
    pub dim: usize,
    /// Per-component smoothness constants `L_i`.
    pub l_i: Vec<Real>,
    /// Aggregate constant `L = sqrt((1/n) sum_i L_i^2)`.
    pub l: Real,
    /// Block-wise constant; conservative default `l_hat = l`
    /// (valid since `L` lies in `[l_hat, m * l_hat]`).
    pub l_hat: Real,
    /// Partition of `0..dim` into coordinate blocks.
    pub blocks: Vec<Range<usize>>,
    pub pl: Option<PLCertificate>,
    /// Known optimal value, when available.
    pub p_star: Option<Real>,
    /// Known minimizer, when available.
    pub x_star: Option<DenseVec>,
}

impl ProblemSpec {
    pub fn n_components(&self) -> usize {
        match &self.objective {
            Objective::Quadratic { .. } => 1,
            Objective::Logreg { batches, .. } => batches.len(),
        }
    }

    pub fn m_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Smooth value `f(x) = (1/n) sum_i f^(i)(x)`.
    pub fn smooth_value(&self, x: &DenseVec) -> Real {
        match &self.objective {
            Objective::Quadratic { scale } => 0.5 * scale * x.0[0] * x.0[0],
            Objective::Logreg {
                data,
                lambda2,
                weights,
                ..
            } => {
                let mut acc = 0.0;
                for (s, row) in data.rows.iter().enumerate() {
                    let z = data.labels[s] * row.dot_dense(&x.0);
                    acc += weights[s] * softplus(-z);
                }
                acc + 0.5 * lambda2 * x.norm_sq()
            }
        }
    }

    /// Composite value `P(x) = f(x) + R(x)`.
    pub fn value(&self, x: &DenseVec) -> Real {
        self.smooth_value(x) + self.reg.value(&x.0)
    }

    /// Full gradient of `f`.
    pub fn grad(&self, x: &DenseVec) -> DenseVec {
        match &self.objective {
            Objective::Quadratic { scale } => DenseVec(vec![scale * x.0[0]]),
            Objective::Logreg {
                data,
                lambda2,
                weights,
                ..
            } => {
                let mut g = vec![0.0; self.dim];
                for (s, row) in data.rows.iter().enumerate() {
                    let b = data.labels[s];
                    let z = b * row.dot_dense(&x.0);
                    // d/dz ln(1+e^{-z}) = -sigmoid(-z)
                    row.add_scaled_into(-b * sigmoid(-z) * weights[s], &mut g);
                }
                axpy(*lambda2, &x.0, &mut g);
                DenseVec(g)
            }
        }
    }

    /// Gradient of one component `f^(i)`.
    pub fn component_grad(&self, i: usize, x: &DenseVec) -> DenseVec {
        match &self.objective {
            Objective::Quadratic { scale } => {
                debug_assert_eq!(i, 0);
                DenseVec(vec![scale * x.0[0]])
            }
            Objective::Logreg {
                data,
                lambda2,
                batches,
                ..
            } => {
                let batch = &batches[i];
                let inv = 1.0 / batch.len() as Real;
                let mut g = vec![0.0; self.dim];
                for s in batch.clone() {
                    let row = &data.rows[s];
                    let b = data.labels[s];
                    let z = b * row.dot_dense(&x.0);
                    row.add_scaled_into(-b * sigmoid(-z) * inv, &mut g);
                }
                axpy(*lambda2, &x.0, &mut g);
                DenseVec(g)
            }
        }
    }

    /// Gradient of `f` restricted to coordinate block `j`.
    pub fn block_grad(&self, j: usize, x: &DenseVec) -> Vec<Real> {
        let block = self.blocks[j].clone();
        match &self.objective {
            Objective::Quadratic { scale } => {
                debug_assert_eq!(j, 0);
                vec![scale * x.0[0]]
            }
            Objective::Logreg {
                data,
                lambda2,
                weights,
                ..
            } => {
                let mut g = vec![0.0; block.len()];
                for (s, row) in data.rows.iter().enumerate() {
                    let b = data.labels[s];
                    let z = b * row.dot_dense(&x.0);
                    let coeff = -b * sigmoid(-z) * weights[s];
                    // scatter only the indices that fall inside the block
                    for (&i, &v) in row.indices.iter().zip(&row.values) {
                        if block.contains(&i) {
                            g[i - block.start] += coeff * v;
                        }
                    }
                }
                for (gi, &xi) in g.iter_mut().zip(&x.0[block]) {
                    *gi += lambda2 * xi;
                }
                g
            }
        }
    }

    /// `prox_{gamma R}` over the full vector.
    pub fn prox(&self, v: &DenseVec, gamma: Real) -> DenseVec {
        DenseVec(self.reg.prox_slice(&v.0, gamma))
    }

    /// Proximal gradient mapping `∇̃P(x) = L̂ (prox_{R/L̂}(x − ∇f(x)/L̂) − x)`,
    /// the composite stationarity residual: zero exactly at stationary
    /// points, and equal to `∇f(x)` when `R = 0`.
    pub fn prox_grad_mapping(&self, x: &DenseVec) -> DenseVec {
        let gamma = 1.0 / self.l_hat;
        let g = self.grad(x);
        let forward = self.prox(&x.sub_scaled(gamma, &g), gamma);
        DenseVec(
            forward
                .0
                .iter()
                .zip(&x.0)
                .map(|(&f, &xi)| self.l_hat * (f - xi))
                .collect(),
        )
    }

    /// `prox_{gamma R^(j)}` over block `j` (R is block-separable).
    pub fn prox_block(&self, _j: usize, v: &[Real], gamma: Real) -> Vec<Real> {
        self.reg.prox_slice(v, gamma)
    }
}

/// One-dimensional quadratic `f(x) = scale * x^2 / 2`, `R = 0`, with exact
/// constants `L = L_1 = l_hat = sigma = scale` and optimum `P* = 0` at 0.
#[allow(clippy::single_range_in_vec_init)] // one coordinate block covering [0,1)
pub fn quadratic_problem(scale: Real) -> Result<ProblemSpec> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::NonPositiveScale(scale));
    }
    Ok(ProblemSpec {
        objective: Objective::Quadratic { scale },
        reg: Regularizer::Zero,
        dim: 1,
        l_i: vec![scale],
        l: scale,
        l_hat: scale,
        blocks: vec![0..1],
        pl: Some(PLCertificate {
            sigma: scale,
            kind: PlKind::StronglyConvex,
        }),
        p_star: Some(0.0),
        x_star: Some(DenseVec(vec![0.0])),
    })
}

/// Average logistic loss and gradient over a whole dataset:
/// `f(x) = (1/N) sum_s (ln(1 + e^{-b_s a_s.x}) + (lambda2/2)||x||^2)`.
///
/// The gradient matches central finite differences to relative 1e-5.
pub fn logreg_value_grad(data: &Dataset, x: &DenseVec, lambda2: Real) -> Result<(Real, DenseVec)> {
    if x.dim() != data.dim {
        return Err(Error::DimensionMismatch {
            context: "logistic value/gradient (x vs dataset)",
            expected: data.dim,
            found: x.dim(),
        });
    }
    let n = data.n_samples();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let inv = 1.0 / n as Real;
    let mut value = 0.0;
    let mut grad = vec![0.0; data.dim];
    for (row, &b) in data.rows.iter().zip(&data.labels) {
        if b != 1.0 && b != -1.0 {
            return Err(Error::BadLabel(b));
        }
        let z = b * row.dot_dense(&x.0);
        value += inv * softplus(-z);
        row.add_scaled_into(-b * sigmoid(-z) * inv, &mut grad);
    }
    value += 0.5 * lambda2 * x.norm_sq();
    axpy(lambda2, &x.0, &mut grad);
    Ok((value, DenseVec(grad)))
}

/// Smoothness constants for batched logistic regression.
///
/// Uses the logistic curvature bound `sigma'(z) <= 1/4`:
/// `L_i = (1/|B_i|) sum_{s in B_i} ||a_s||^2 / 4 + lambda2`, the aggregate
/// `L = sqrt((1/n) sum_i L_i^2)`, and the conservative block constant
/// `l_hat = L`.
pub fn lipschitz_logreg(
    data: &Dataset,
    lambda2: Real,
    batches: &[Range<usize>],
) -> Result<(Vec<Real>, Real, Real)> {
    let mut l_i = Vec::with_capacity(batches.len());
    for (i, batch) in batches.iter().enumerate() {
        if batch.is_empty() {
            return Err(Error::EmptyBatch(i));
        }
        let sum: Real = batch.clone().map(|s| data.rows[s].norm_sq() / 4.0).sum();
        l_i.push(sum / batch.len() as Real + lambda2);
    }
    let n = l_i.len() as Real;
    let l = (l_i.iter().map(|v| v * v).sum::<Real>() / n).sqrt();
    Ok((l_i, l, l))
}

/// Near-even contiguous partition of `0..d` into `m` blocks; the first
/// `d mod m` blocks get one extra dimension.
pub fn partition_blocks(d: usize, m: usize) -> Result<Vec<Range<usize>>> {
    if m == 0 || m > d {
        return Err(Error::BadPartition { total: d, parts: m });
    }
    let base = d / m;
    let extra = d % m;
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    for j in 0..m {
        let len = base + usize::from(j < extra);
        out.push(start..start + len);
        start += len;
    }
    debug_assert_eq!(start, d);
    Ok(out)
}

/// Assembles an L1-regularized logistic-regression problem over `n_batches`
/// per-worker components and `m_blocks` coordinate blocks.
///
/// `sigma = lambda2` certifies strong convexity of the ridge term when
/// `lambda2 > 0`. The optimal value is unknown a priori; estimate it with
/// [`crate::analysis::reference_solve`] when a gap is needed.
pub fn logreg_problem(
    data: Arc<Dataset>,
    lambda1: Real,
    lambda2: Real,
    n_batches: usize,
    m_blocks: usize,
) -> Result<ProblemSpec> {
    let batches = crate::dataio::partition_batches(data.n_samples(), n_batches)?;
    let (l_i, l, l_hat) = lipschitz_logreg(&data, lambda2, &batches)?;
    let blocks = partition_blocks(data.dim, m_blocks)?;
    let n = batches.len();
    let mut weights = vec![0.0; data.n_samples()];
    for batch in &batches {
        let w = 1.0 / (n as Real * batch.len() as Real);
        for s in batch.clone() {
            weights[s] = w;
        }
    }
    let dim = data.dim;
    Ok(ProblemSpec {
        objective: Objective::Logreg {
            data,
            lambda2,
            batches,
            weights,
        },
        reg: if lambda1 > 0.0 {
            Regularizer::L1 { lambda1 }
        } else {
            Regularizer::Zero
        },
        dim,
        l_i,
        l,
        l_hat,
        blocks,
        pl: (lambda2 > 0.0).then_some(PLCertificate {
            sigma: lambda2,
            kind: PlKind::StronglyConvex,
        }),
        p_star: None,
        x_star: None,
    })
}
