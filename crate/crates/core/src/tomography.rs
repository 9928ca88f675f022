//! Quantum-state domain for the rank-selection study.
//!
//! Candidate models index the rank of an n-qubit density matrix. A rank-r
//! state is parameterized by a complex 2^n x r matrix X through
//! rho = X X^dag / Tr(X X^dag); drawing the entries of X with independent
//! standard-normal real and imaginary parts gives the rank-r Ginibre prior.
//! Measurements are random Pauli observables, and state error is reported in
//! spectral (operator) norm.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smc::{Estimate, Model, ParticleCloud, SmcError};
use crate::stats::binomial_log_pmf;

pub type ComplexMatrix = DMatrix<Complex64>;

/// Entrywise tolerance for the Hermiticity check.
pub const HERMITICITY_TOL: f64 = 1e-10;
/// Tolerance on |Tr rho - 1|.
pub const TRACE_TOL: f64 = 1e-10;
/// Eigenvalues are accepted down to this (small negative) floor.
pub const EIGENVALUE_FLOOR: f64 = -1e-10;

#[derive(Debug, Error)]
pub enum TomographyError {
    #[error("qubit count must be at least 1")]
    ZeroQubits,
    #[error("pauli index {k} out of range for {qubits} qubit(s); must be below {max}")]
    PauliIndexOutOfRange { k: usize, qubits: usize, max: usize },
    #[error("rank {rank} out of range for {qubits} qubit(s); must lie in 1..={max}")]
    RankOutOfRange { rank: usize, qubits: usize, max: usize },
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamsLength { got: usize, expected: usize },
    #[error("all-zero parameter vector defines no state")]
    DegenerateState,
    #[error("matrix dimensions differ ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("not a density matrix: {reason}")]
    NotADensityMatrix { reason: String },
}

/// Hermitian, positive-semidefinite, unit-trace complex matrix.
///
/// Serializes as `{"dim": d, "re": [...], "im": [...]}` with both parts in
/// row-major order; deserialization re-validates the invariants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityMatrixRepr", into = "DensityMatrixRepr")]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: ComplexMatrix) -> Result<Self, TomographyError> {
        Self::check(&matrix)?;
        Ok(Self { matrix })
    }

    /// Wrap a matrix that is valid by construction (e.g. X X^dag / Tr X X^dag,
    /// or a convex combination of valid states).
    pub(crate) fn new_unchecked(matrix: ComplexMatrix) -> Self {
        Self { matrix }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let scale = Complex64::new(1.0 / dim as f64, 0.0);
        Self { matrix: ComplexMatrix::identity(dim, dim) * scale }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    /// Eigenvalues in ascending order (real up to rounding).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut eig: Vec<f64> = self.matrix.clone().symmetric_eigen().eigenvalues.iter().cloned().collect();
        eig.sort_by(|a, b| a.total_cmp(b));
        eig
    }

    /// Tr rho^2; equals 1 exactly for pure states.
    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// Re-check the defining invariants.
    pub fn validate(&self) -> Result<(), TomographyError> {
        Self::check(&self.matrix)
    }

    fn check(m: &ComplexMatrix) -> Result<(), TomographyError> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(TomographyError::NotADensityMatrix {
                reason: format!("shape {}x{} is not square and nonempty", m.nrows(), m.ncols()),
            });
        }
        for i in 0..m.nrows() {
            for j in 0..=i {
                let delta = m[(i, j)] - m[(j, i)].conj();
                if delta.norm() > HERMITICITY_TOL {
                    return Err(TomographyError::NotADensityMatrix {
                        reason: format!("entry ({i}, {j}) breaks Hermiticity by {:.3e}", delta.norm()),
                    });
                }
            }
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(TomographyError::NotADensityMatrix {
                reason: format!("trace is {tr} instead of 1"),
            });
        }
        let min_eig = m
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < EIGENVALUE_FLOOR {
            return Err(TomographyError::NotADensityMatrix {
                reason: format!("smallest eigenvalue {min_eig:.3e} is negative"),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct DensityMatrixRepr {
    dim: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl From<DensityMatrix> for DensityMatrixRepr {
    fn from(value: DensityMatrix) -> Self {
        let dim = value.dim();
        let mut re = Vec::with_capacity(dim * dim);
        let mut im = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                re.push(value.matrix[(i, j)].re);
                im.push(value.matrix[(i, j)].im);
            }
        }
        Self { dim, re, im }
    }
}

impl TryFrom<DensityMatrixRepr> for DensityMatrix {
    type Error = TomographyError;

    fn try_from(repr: DensityMatrixRepr) -> Result<Self, Self::Error> {
        let n = repr.dim * repr.dim;
        if repr.re.len() != n || repr.im.len() != n {
            return Err(TomographyError::NotADensityMatrix {
                reason: format!(
                    "dim {} needs {n} entries per part, got {} re / {} im",
                    repr.dim,
                    repr.re.len(),
                    repr.im.len()
                ),
            });
        }
        let m = ComplexMatrix::from_fn(repr.dim, repr.dim, |i, j| {
            Complex64::new(repr.re[i * repr.dim + j], repr.im[i * repr.dim + j])
        });
        DensityMatrix::new(m)
    }
}

/// Index of a tensor-product Pauli observable on `qubits` qubits.
///
/// `k` is read in base 4 with the least significant digit naming the leftmost
/// tensor factor: `k = k_1 + 4 k_2 + ... + 4^(n-1) k_n` selects
/// `sigma_{k_1} (x) sigma_{k_2} (x) ... (x) sigma_{k_n}` where sigma_0..3 are
/// I, X, Y, Z.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PauliIndex {
    k: usize,
    qubits: usize,
}

impl PauliIndex {
    pub fn new(k: usize, qubits: usize) -> Result<Self, TomographyError> {
        if qubits == 0 {
            return Err(TomographyError::ZeroQubits);
        }
        let max = 1usize << (2 * qubits);
        if k >= max {
            return Err(TomographyError::PauliIndexOutOfRange { k, qubits, max });
        }
        Ok(Self { k, qubits })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn is_identity(&self) -> bool {
        self.k == 0
    }

    /// Base-4 digits of `k`, least significant first.
    pub fn digits(&self) -> Vec<usize> {
        let mut k = self.k;
        (0..self.qubits)
            .map(|_| {
                let d = k % 4;
                k /= 4;
                d
            })
            .collect()
    }
}

fn single_qubit_pauli(k: usize) -> ComplexMatrix {
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    let entries = match k {
        0 => [one, zero, zero, one],
        1 => [zero, one, one, zero],
        2 => [zero, -i, i, zero],
        3 => [one, zero, zero, -one],
        _ => unreachable!("base-4 digit"),
    };
    ComplexMatrix::from_row_slice(2, 2, &entries)
}

/// Dense matrix of the tensor-product Pauli observable named by `index`.
pub fn pauli(index: PauliIndex) -> ComplexMatrix {
    let digits = index.digits();
    let mut m = single_qubit_pauli(digits[0]);
    for &d in &digits[1..] {
        m = m.kronecker(&single_qubit_pauli(d));
    }
    m
}

/// Length of a rank-r parameter vector: 2 * 2^n * r real coordinates.
pub fn params_len(qubits: usize, rank: usize) -> usize {
    2 * (1 << qubits) * rank
}

fn validate_shape(qubits: usize, rank: usize) -> Result<(), TomographyError> {
    if qubits == 0 {
        return Err(TomographyError::ZeroQubits);
    }
    let max = 1 << qubits;
    if rank == 0 || rank > max {
        return Err(TomographyError::RankOutOfRange { rank, qubits, max });
    }
    Ok(())
}

/// Interpret a parameter vector as the complex 2^n x r matrix X.
///
/// Layout: the first 2^n * r slots hold Re X stacked column-major, the next
/// 2^n * r hold Im X in the same order. Rejuvenation and refinement act on
/// these real coordinates directly.
pub fn unpack_x(params: &[f64], qubits: usize, rank: usize) -> Result<ComplexMatrix, TomographyError> {
    validate_shape(qubits, rank)?;
    let dim = 1 << qubits;
    let half = dim * rank;
    if params.len() != 2 * half {
        return Err(TomographyError::ParamsLength { got: params.len(), expected: 2 * half });
    }
    Ok(ComplexMatrix::from_fn(dim, rank, |i, c| {
        Complex64::new(params[c * dim + i], params[half + c * dim + i])
    }))
}

/// Inverse of [`unpack_x`].
pub fn pack_x(x: &ComplexMatrix) -> Vec<f64> {
    let (dim, rank) = (x.nrows(), x.ncols());
    let half = dim * rank;
    let mut params = vec![0.0; 2 * half];
    for c in 0..rank {
        for i in 0..dim {
            params[c * dim + i] = x[(i, c)].re;
            params[half + c * dim + i] = x[(i, c)].im;
        }
    }
    params
}

/// Draw a rank-r Ginibre parameter vector: every real coordinate is an
/// independent standard normal.
pub fn ginibre_params(
    qubits: usize,
    rank: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>, TomographyError> {
    validate_shape(qubits, rank)?;
    Ok((0..params_len(qubits, rank)).map(|_| StandardNormal.sample(rng)).collect())
}

/// rho = X X^dag / Tr(X X^dag) for the X encoded in `params`.
pub fn rho_from_params(
    params: &[f64],
    qubits: usize,
    rank: usize,
) -> Result<DensityMatrix, TomographyError> {
    let x = unpack_x(params, qubits, rank)?;
    let norm2: f64 = params.iter().map(|v| v * v).sum();
    if norm2 == 0.0 {
        return Err(TomographyError::DegenerateState);
    }
    let mut rho = &x * x.adjoint();
    rho.scale_mut(1.0 / norm2);
    Ok(DensityMatrix::new_unchecked(rho))
}

/// Measurement outcome of a single Pauli observable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PauliOutcome {
    Plus,
    Minus,
}

/// Pr(+1) when measuring the observable `sigma` on the state of `params`,
/// computed as (1 + Tr(X X^dag sigma) / Tr(X X^dag)) / 2 without forming rho.
pub fn prob_plus(
    params: &[f64],
    qubits: usize,
    rank: usize,
    sigma: &ComplexMatrix,
) -> Result<f64, TomographyError> {
    validate_shape(qubits, rank)?;
    let dim = 1 << qubits;
    let half = dim * rank;
    if params.len() != 2 * half {
        return Err(TomographyError::ParamsLength { got: params.len(), expected: 2 * half });
    }
    if sigma.nrows() != dim {
        return Err(TomographyError::DimensionMismatch { left: sigma.nrows(), right: dim });
    }
    let mut num = 0.0;
    let mut norm2 = 0.0;
    for c in 0..rank {
        let base = c * dim;
        for i in 0..dim {
            let xr = params[base + i];
            let xi = params[half + base + i];
            norm2 += xr * xr + xi * xi;
            // (sigma x_c)_i, then Re(conj(x_ic) * .)
            let mut sr = 0.0;
            let mut si = 0.0;
            for j in 0..dim {
                let s = sigma[(i, j)];
                if s.re != 0.0 || s.im != 0.0 {
                    let yr = params[base + j];
                    let yi = params[half + base + j];
                    sr += s.re * yr - s.im * yi;
                    si += s.re * yi + s.im * yr;
                }
            }
            num += xr * sr + xi * si;
        }
    }
    if norm2 == 0.0 {
        return Err(TomographyError::DegenerateState);
    }
    Ok((0.5 * (1.0 + num / norm2)).clamp(0.0, 1.0))
}

/// Single-shot likelihood of a +1 or -1 result for the Pauli named by `index`.
pub fn pauli_likelihood(
    params: &[f64],
    qubits: usize,
    rank: usize,
    index: PauliIndex,
    outcome: PauliOutcome,
) -> Result<f64, TomographyError> {
    let p = prob_plus(params, qubits, rank, &pauli(index))?;
    Ok(match outcome {
        PauliOutcome::Plus => p,
        PauliOutcome::Minus => 1.0 - p,
    })
}

/// Largest singular value of a - b.
pub fn spectral_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64, TomographyError> {
    if a.dim() != b.dim() {
        return Err(TomographyError::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    let diff = a.matrix() - b.matrix();
    Ok(largest_singular_value(&diff))
}

/// Largest singular value, via the top eigenvalue of m^dag m.
pub fn largest_singular_value(m: &ComplexMatrix) -> f64 {
    let gram = m.adjoint() * m;
    gram.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(0.0)
        .sqrt()
}

/// Posterior-mean state: the weight-averaged rho over all particles.
pub fn mean_density_matrix(
    cloud: &ParticleCloud,
    qubits: usize,
    rank: usize,
) -> Result<DensityMatrix, TomographyError> {
    let dim = 1 << qubits;
    let mut acc = ComplexMatrix::zeros(dim, dim);
    for (params, &w) in cloud.particles().iter().zip(cloud.weights()) {
        let rho = rho_from_params(params, qubits, rank)?;
        acc += rho.matrix() * Complex64::new(w, 0.0);
    }
    DensityMatrix::new(acc)
}

/// One batch of identically prepared measurements: a Pauli setting measured
/// `shots` times. The outcome paired with it is the count of +1 results. The
/// dense observable is built lazily and shared across particles.
#[derive(Debug)]
pub struct PauliBatch {
    index: PauliIndex,
    shots: u64,
    sigma: OnceLock<ComplexMatrix>,
}

impl PauliBatch {
    pub fn new(index: PauliIndex, shots: u64) -> Self {
        assert!(shots >= 1, "a batch needs at least one shot");
        Self { index, shots, sigma: OnceLock::new() }
    }

    pub fn index(&self) -> PauliIndex {
        self.index
    }

    pub fn shots(&self) -> u64 {
        self.shots
    }

    pub fn sigma(&self) -> &ComplexMatrix {
        self.sigma.get_or_init(|| pauli(self.index))
    }
}

/// Rank-r candidate model for an n-qubit state under Pauli batch measurements.
pub struct RankModel {
    qubits: usize,
    rank: usize,
    name: String,
}

impl RankModel {
    pub fn new(qubits: usize, rank: usize) -> Result<Self, TomographyError> {
        validate_shape(qubits, rank)?;
        Ok(Self { qubits, rank, name: format!("rank-{rank}") })
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

impl Model<u64, PauliBatch> for RankModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        params_len(self.qubits, self.rank)
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        ginibre_params(self.qubits, self.rank, rng).expect("shape validated at construction")
    }

    fn log_likelihood(&self, outcome: &u64, context: &PauliBatch, params: &[f64]) -> f64 {
        match prob_plus(params, self.qubits, self.rank, context.sigma()) {
            // an all-zero particle defines no state and carries no support
            Err(_) => f64::NEG_INFINITY,
            Ok(p) => binomial_log_pmf(*outcome, context.shots(), p),
        }
    }

    fn estimate(&self, params: &[f64]) -> Result<Estimate, SmcError> {
        rho_from_params(params, self.qubits, self.rank)
            .map(Estimate::Density)
            .map_err(|e| SmcError::Extractor(e.to_string()))
    }
}
