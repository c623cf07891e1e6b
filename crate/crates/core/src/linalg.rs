//! Dense complex matrices for small qubit registers.
//!
//! Everything in this crate lives in dimension 2 through 2^(2m) with m at most
//! four, so storage is a flat row-major `Vec<Complex64>` and every operation is
//! the textbook dense loop. The one non-trivial routine is [`psd_sqrt_2x2`],
//! the closed-form square root of a 2×2 positive-semidefinite operator used to
//! turn POVM effects into Lüders instruments.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use thiserror::Error;

/// Hermiticity tolerance (max entry deviation) for physical operators.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Trace tolerance for density operators.
pub const TRACE_TOL: f64 = 1e-12;
/// Smallest eigenvalue accepted as "non-negative". Anything below is rejected,
/// never clipped.
pub const PSD_TOL: f64 = 1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("entry count {len} is not the square of dimension {dim}")]
    BadShape { dim: usize, len: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("expected a {expected}x{expected} matrix, got {got}x{got}")]
    WrongDimension { expected: usize, got: usize },
    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {min_eigenvalue:e})")]
    NotPositive { min_eigenvalue: f64 },
    #[error("trace is {trace}, expected 1")]
    TraceNotOne { trace: f64 },
}

/// Dense square complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn new(dim: usize, entries: Vec<Complex64>) -> Result<Self, LinalgError> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(LinalgError::BadShape {
                dim,
                len: entries.len(),
            });
        }
        Ok(Self { dim, entries })
    }

    /// Builds a matrix from real row-major entries.
    pub fn from_real(dim: usize, entries: &[f64]) -> Result<Self, LinalgError> {
        Self::new(dim, entries.iter().map(|&r| Complex64::new(r, 0.0)).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "matrix dimension must be positive");
        Self {
            dim,
            entries: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.entries[i * dim + i] = ONE;
        }
        m
    }

    pub fn diag(values: &[Complex64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.entries[i * values.len() + i] = v;
        }
        m
    }

    /// Outer product |u⟩⟨v|.
    pub fn outer(u: &[Complex64], v: &[Complex64]) -> Self {
        assert_eq!(u.len(), v.len(), "outer product of unequal vectors");
        let dim = u.len();
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.entries[i * dim + j] = u[i] * v[j].conj();
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.entries[row * self.dim + col] = value;
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|z| z * factor)
    }

    pub fn scale_complex(&self, factor: Complex64) -> Self {
        self.map(|z| z * factor)
    }

    fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|&z| f(z)).collect(),
        }
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim, "comparing matrices of unequal dimension");
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermitian_deviation(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    /// Positive-semidefiniteness up to `-tol` on the spectrum.
    ///
    /// Runs a Cholesky factorisation of `self + tol·𝟙`, which succeeds exactly
    /// when every eigenvalue of `self` is at least `-tol`. Assumes Hermitian
    /// input.
    pub fn is_psd(&self, tol: f64) -> bool {
        let n = self.dim;
        let mut l = vec![ZERO; n * n];
        for j in 0..n {
            let mut d = self.get(j, j).re + tol;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if d < 0.0 {
                return false;
            }
            let d = d.sqrt();
            l[j * n + j] = Complex64::new(d, 0.0);
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = if d > 0.0 { s / d } else { ZERO };
            }
        }
        true
    }

    /// Tr(self · other) without forming the product.
    pub fn trace_product(&self, other: &Self) -> Complex64 {
        assert_eq!(self.dim, other.dim, "trace of product with unequal dimensions");
        let d = self.dim;
        let mut acc = ZERO;
        for i in 0..d {
            for j in 0..d {
                acc += self.entries[i * d + j] * other.entries[j * d + i];
            }
        }
        acc
    }

    /// Reorders the tensor factors of a register of `qubits` qubits.
    ///
    /// `order[new] = old`: qubit `old` of `self` becomes qubit `new` of the
    /// result. Qubit 0 is the most significant (leftmost) factor.
    pub fn permute_qubits(&self, order: &[usize]) -> Self {
        let qubits = order.len();
        assert_eq!(1usize << qubits, self.dim, "qubit count does not match dimension");
        let map_index = |idx: usize| -> usize {
            let mut out = 0;
            for (new, &old) in order.iter().enumerate() {
                let bit = (idx >> (qubits - 1 - new)) & 1;
                out |= bit << (qubits - 1 - old);
            }
            out
        };
        let source: Vec<usize> = (0..self.dim).map(map_index).collect();
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.entries[i * self.dim + j] = self.get(source[i], source[j]);
            }
        }
        out
    }

    /// Traces out the left factor of a `left ⊗ right` operator.
    pub fn partial_trace_left(&self, left: usize) -> Self {
        assert_eq!(self.dim % left, 0, "left factor does not divide dimension");
        let right = self.dim / left;
        let mut out = Self::zeros(right);
        for k in 0..left {
            for i in 0..right {
                for j in 0..right {
                    out.entries[i * right + j] += self.get(k * right + i, k * right + j);
                }
            }
        }
        out
    }

    /// Traces out the right factor of a `left ⊗ right` operator.
    pub fn partial_trace_right(&self, right: usize) -> Self {
        assert_eq!(self.dim % right, 0, "right factor does not divide dimension");
        let left = self.dim / right;
        let mut out = Self::zeros(left);
        for i in 0..left {
            for j in 0..left {
                let mut acc = ZERO;
                for k in 0..right {
                    acc += self.get(i * right + k, j * right + k);
                }
                out.entries[i * left + j] = acc;
            }
        }
        out
    }

    /// `K · self · K†`.
    pub fn conjugate_by(&self, k: &Self) -> Self {
        &(k * self) * &dagger(k)
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{}) [", self.dim, self.dim)?;
        for row in self.entries.chunks(self.dim) {
            write!(f, "  ")?;
            for z in row {
                write!(f, "{:>+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "adding matrices of unequal dimension");
        ComplexMatrix {
            dim: self.dim,
            entries: self.entries.iter().zip(&rhs.entries).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "subtracting matrices of unequal dimension");
        ComplexMatrix {
            dim: self.dim,
            entries: self.entries.iter().zip(&rhs.entries).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Matrix product. Panics on a dimension mismatch; use [`matmul`] for the
/// checked form.
impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        matmul(self, rhs).expect("matrix product of unequal dimensions")
    }
}

pub fn matmul(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
    if a.dim != b.dim {
        return Err(LinalgError::DimensionMismatch {
            left: a.dim,
            right: b.dim,
        });
    }
    let d = a.dim;
    let mut out = vec![ZERO; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a.entries[i * d + k];
            if aik == ZERO {
                continue;
            }
            let row_b = &b.entries[k * d..(k + 1) * d];
            let row_out = &mut out[i * d..(i + 1) * d];
            for (o, &bkj) in row_out.iter_mut().zip(row_b) {
                *o += aik * bkj;
            }
        }
    }
    Ok(ComplexMatrix { dim: d, entries: out })
}

/// Kronecker product; the left factor varies slowest.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (da, db) = (a.dim, b.dim);
    let d = da * db;
    let mut out = vec![ZERO; d * d];
    for i in 0..da {
        for j in 0..da {
            let aij = a.entries[i * da + j];
            if aij == ZERO {
                continue;
            }
            for k in 0..db {
                for l in 0..db {
                    out[(i * db + k) * d + j * db + l] = aij * b.entries[k * db + l];
                }
            }
        }
    }
    ComplexMatrix { dim: d, entries: out }
}

/// Kronecker product of a non-empty list, left to right.
pub fn kron_all<'a>(factors: impl IntoIterator<Item = &'a ComplexMatrix>) -> ComplexMatrix {
    let mut iter = factors.into_iter();
    let first = iter.next().expect("kron_all of an empty list").clone();
    iter.fold(first, |acc, m| kron(&acc, m))
}

pub fn trace(m: &ComplexMatrix) -> Complex64 {
    (0..m.dim).map(|i| m.get(i, i)).sum()
}

pub fn dagger(m: &ComplexMatrix) -> ComplexMatrix {
    let d = m.dim;
    let mut out = ComplexMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            out.entries[j * d + i] = m.entries[i * d + j].conj();
        }
    }
    out
}

/// Unique PSD square root of a 2×2 Hermitian PSD matrix.
///
/// With eigenvalues λ± the root is (M + √(λ₊λ₋)·𝟙) / √(λ₊ + λ₋ + 2√(λ₊λ₋)),
/// which is the spectral decomposition √λ₊P₊ + √λ₋P₋ collapsed through
/// Cayley–Hamilton. Eigenvalues in `[-PSD_TOL, 0)` are treated as zero.
pub fn psd_sqrt_2x2(m: &ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
    if m.dim != 2 {
        return Err(LinalgError::WrongDimension {
            expected: 2,
            got: m.dim,
        });
    }
    let deviation = m.hermitian_deviation();
    if deviation > HERMITIAN_TOL {
        return Err(LinalgError::NotHermitian { deviation });
    }
    let a = m.get(0, 0).re;
    let d = m.get(1, 1).re;
    let b = m.get(0, 1);
    let half_trace = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    let low = half_trace - radius;
    if low < -PSD_TOL {
        return Err(LinalgError::NotPositive { min_eigenvalue: low });
    }
    let high = half_trace + radius;
    let root_det = (high.max(0.0) * low.max(0.0)).sqrt();
    let norm = (a + d + 2.0 * root_det).max(0.0).sqrt();
    if norm == 0.0 {
        return Ok(ComplexMatrix::zeros(2));
    }
    let mut out = m.clone();
    out.entries[0] += root_det;
    out.entries[3] += root_det;
    // Symmetrise so the result is Hermitian to the last bit.
    let off = 0.5 * (out.entries[1] + out.entries[2].conj());
    out.entries[1] = off;
    out.entries[2] = off.conj();
    out.entries[0].im = 0.0;
    out.entries[3].im = 0.0;
    Ok(out.scale(1.0 / norm))
}

pub fn pauli_x() -> ComplexMatrix {
    ComplexMatrix::from_real(2, &[0.0, 1.0, 1.0, 0.0]).unwrap()
}

pub fn pauli_y() -> ComplexMatrix {
    let i = Complex64::new(0.0, 1.0);
    ComplexMatrix::new(2, vec![ZERO, -i, i, ZERO]).unwrap()
}

pub fn pauli_z() -> ComplexMatrix {
    ComplexMatrix::from_real(2, &[1.0, 0.0, 0.0, -1.0]).unwrap()
}

/// A validated quantum state: Hermitian, unit trace, positive semidefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    matrix: ComplexMatrix,
}

impl DensityOperator {
    pub fn new(matrix: ComplexMatrix) -> Result<Self, LinalgError> {
        let deviation = matrix.hermitian_deviation();
        if deviation > HERMITIAN_TOL {
            return Err(LinalgError::NotHermitian { deviation });
        }
        let tr = trace(&matrix);
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(LinalgError::TraceNotOne { trace: tr.re });
        }
        if !matrix.is_psd(PSD_TOL) {
            return Err(LinalgError::NotPositive {
                min_eigenvalue: f64::NAN,
            });
        }
        Ok(Self { matrix })
    }

    /// Pure state |ψ⟩⟨ψ| from a normalised amplitude vector.
    pub fn pure(amplitudes: &[Complex64]) -> Result<Self, LinalgError> {
        Self::new(ComplexMatrix::outer(amplitudes, amplitudes))
    }

    #[inline]
    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim
    }

    /// Real part of Tr(op · ρ).
    pub fn expectation(&self, op: &ComplexMatrix) -> f64 {
        op.trace_product(&self.matrix).re
    }

    pub(crate) fn from_trusted(matrix: ComplexMatrix) -> Self {
        debug_assert!(matrix.is_hermitian(1e-9));
        Self { matrix }
    }
}
