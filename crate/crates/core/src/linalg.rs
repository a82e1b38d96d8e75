//! Dense complex matrices, Hermitian operators and density matrices.
//!
//! Storage is delegated to [`faer`], which also provides the Hermitian
//! eigensolver. Everything above this module works with the three wrapper
//! types defined here.

use std::fmt;
use std::sync::OnceLock;

use faer::Mat;
pub use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::graining::CoarseGraining;
use crate::tol;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    inner: Mat<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{}", self.nrows(), self.ncols())?;
        for i in 0..self.nrows().min(8) {
            for j in 0..self.ncols().min(8) {
                let z = self.get(i, j);
                write!(f, " {:+.4}{:+.4}i", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { inner: Mat::zeros(rows, cols) }
    }

    pub fn identity(n: usize) -> Self {
        Self { inner: Mat::identity(n, n) }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut f = f;
        Self { inner: Mat::from_fn(rows, cols, |i, j| f(i, j)) }
    }

    /// Builds a matrix from rows given in logical row-major order.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch { expected: c, found: row.len() });
            }
        }
        let m = Self::from_fn(r, c, |i, j| rows[i][j]);
        if !m.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(m)
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { diag[i] } else { ZERO })
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { C64::new(diag[i], 0.0) } else { ZERO })
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<C64>]) -> Result<Self> {
        let c = columns.len();
        let r = columns.first().map_or(0, Vec::len);
        for col in columns {
            if col.len() != r {
                return Err(Error::DimensionMismatch { expected: r, found: col.len() });
            }
        }
        let m = Self::from_fn(r, c, |i, j| columns[j][i]);
        if !m.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(m)
    }

    /// Outer product `|a><b|`.
    pub fn outer(a: &[C64], b: &[C64]) -> Self {
        Self::from_fn(a.len(), b.len(), |i, j| a[i] * b[j].conj())
    }

    pub(crate) fn faer(&self) -> &Mat<C64> {
        &self.inner
    }

    pub fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.nrows() == self.ncols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.inner[(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: C64) {
        self.inner[(i, j)] = value;
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.nrows()).map(|i| self.get(i, j)).collect()
    }

    /// Columns `start..start + len` as a new matrix.
    pub fn columns(&self, start: usize, len: usize) -> Self {
        Self { inner: self.inner.as_ref().subcols(start, len).to_owned() }
    }

    pub fn is_finite(&self) -> bool {
        (0..self.ncols()).all(|j| (0..self.nrows()).all(|i| {
            let z = self.get(i, j);
            z.re.is_finite() && z.im.is_finite()
        }))
    }

    pub fn adjoint(&self) -> Self {
        Self { inner: self.inner.adjoint().to_owned() }
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> Self {
        Self { inner: self.inner.conjugate().to_owned() }
    }

    pub fn transpose(&self) -> Self {
        Self { inner: self.inner.transpose().to_owned() }
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.ncols(), rhs.nrows(), "matmul shape mismatch");
        Self { inner: &self.inner * &rhs.inner }
    }

    /// `self^H * rhs` without materializing the adjoint.
    pub fn adjoint_matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.nrows(), rhs.nrows(), "matmul shape mismatch");
        Self { inner: self.inner.adjoint() * &rhs.inner }
    }

    /// `self * rhs^H` without materializing the adjoint.
    pub fn matmul_adjoint(&self, rhs: &Self) -> Self {
        assert_eq!(self.ncols(), rhs.ncols(), "matmul shape mismatch");
        Self { inner: &self.inner * rhs.inner.adjoint() }
    }

    /// `u * self * u^H`.
    pub fn conjugate_by(&self, u: &Self) -> Self {
        u.matmul(self).matmul_adjoint(u)
    }

    pub fn add(&self, rhs: &Self) -> Self {
        Self { inner: &self.inner + &rhs.inner }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        Self { inner: &self.inner - &rhs.inner }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_fn(self.nrows(), self.ncols(), |i, j| self.get(i, j) * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn trace(&self) -> C64 {
        (0..self.nrows().min(self.ncols())).map(|i| self.get(i, i)).sum()
    }

    /// `tr(self * rhs)` in O(n^2).
    pub fn trace_product(&self, rhs: &Self) -> C64 {
        assert_eq!(self.ncols(), rhs.nrows());
        assert_eq!(self.nrows(), rhs.ncols());
        let mut acc = ZERO;
        for i in 0..self.nrows() {
            for k in 0..self.ncols() {
                acc += self.get(i, k) * rhs.get(k, i);
            }
        }
        acc
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.nrows().min(self.ncols())).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.ncols() {
            for i in 0..self.nrows() {
                m = m.max(self.get(i, j).norm());
            }
        }
        m
    }

    pub fn max_abs_diff(&self, rhs: &Self) -> f64 {
        assert_eq!((self.nrows(), self.ncols()), (rhs.nrows(), rhs.ncols()));
        let mut m = 0.0f64;
        for j in 0..self.ncols() {
            for i in 0..self.nrows() {
                m = m.max((self.get(i, j) - rhs.get(i, j)).norm());
            }
        }
        m
    }

    /// `max |self - self^H|`.
    pub fn hermiticity_deviation(&self) -> f64 {
        let n = self.nrows();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in i..n {
                m = m.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        m
    }

    /// Deviation of `self^H self` from the identity.
    pub fn unitarity_deviation(&self) -> f64 {
        self.adjoint_matmul(self).max_abs_diff(&Self::identity(self.ncols()))
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.ncols(), v.len());
        (0..self.nrows())
            .map(|i| (0..self.ncols()).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }
}

/// Kronecker product: `(a ⊗ b)[i*rb + k, j*cb + l] = a[i, j] * b[k, l]`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix { inner: a.inner.kron(&b.inner) }
}

/// Kronecker product of a list of factors, left to right.
pub fn kron_all<'a>(factors: impl IntoIterator<Item = &'a ComplexMatrix>) -> ComplexMatrix {
    let mut acc = ComplexMatrix::identity(1);
    for f in factors {
        acc = kron(&acc, f);
    }
    acc
}

/// `max |[a, b]|`.
pub fn commutator_norm(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.matmul(b).max_abs_diff(&b.matmul(a))
}

/// Eigenvalues in ascending order with the matching orthonormal eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl Spectrum {
    /// `V f(Λ) V^H`.
    pub fn map(&self, f: impl Fn(f64) -> C64) -> ComplexMatrix {
        let v = &self.vectors;
        let scaled = ComplexMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v.get(i, j) * f(self.values[j]));
        scaled.matmul_adjoint(v)
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug)]
pub struct HermitianOperator {
    matrix: ComplexMatrix,
    spectrum: OnceLock<Spectrum>,
}

impl HermitianOperator {
    /// Validates Hermiticity and stores the exactly symmetrized matrix.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), found: matrix.ncols() });
        }
        if !matrix.is_finite() {
            return Err(Error::NonFinite);
        }
        let deviation = matrix.hermiticity_deviation();
        if deviation > tol::HERMITIAN * matrix.max_abs().max(1.0) {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Self::symmetrized(matrix))
    }

    pub(crate) fn symmetrized(matrix: ComplexMatrix) -> Self {
        let n = matrix.nrows();
        let sym = ComplexMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(matrix.get(i, i).re, 0.0)
            } else {
                (matrix.get(i, j) + matrix.get(j, i).conj()) * 0.5
            }
        });
        Self { matrix: sym, spectrum: OnceLock::new() }
    }

    /// Operator with a known decomposition; the spectrum is cached immediately.
    pub(crate) fn from_spectrum(spectrum: Spectrum) -> Self {
        let op = Self::symmetrized(spectrum.map(|x| C64::new(x, 0.0)));
        let _ = op.spectrum.set(spectrum);
        op
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        Self::symmetrized(ComplexMatrix::from_real_diagonal(diag))
    }

    pub fn zeros(n: usize) -> Self {
        Self::symmetrized(ComplexMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self::symmetrized(ComplexMatrix::identity(n))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    /// Cached eigendecomposition, computed on first use.
    pub fn spectrum(&self) -> Result<&Spectrum> {
        if let Some(s) = self.spectrum.get() {
            return Ok(s);
        }
        let s = decompose(&self.matrix)?;
        let _ = self.spectrum.set(s);
        Ok(self.spectrum.get().expect("spectrum just set"))
    }

    pub fn has_cached_spectrum(&self) -> bool {
        self.spectrum.get().is_some()
    }

    pub fn add(&self, rhs: &Self) -> Self {
        Self::symmetrized(self.matrix.add(&rhs.matrix))
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        Self::symmetrized(self.matrix.sub(&rhs.matrix))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::symmetrized(self.matrix.scale_real(s))
    }

    /// Entrywise conjugate, i.e. the time-reversed operator.
    pub fn conj(&self) -> Self {
        Self::symmetrized(self.matrix.conj())
    }

    /// `u A u^H`.
    pub fn conjugate_by(&self, u: &ComplexMatrix) -> Self {
        Self::symmetrized(self.matrix.conjugate_by(u))
    }

    /// Real expectation value `tr(A ρ)`; errors if the imaginary part is not negligible.
    pub fn expectation(&self, rho: &DensityMatrix) -> Result<f64> {
        if rho.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: rho.dim() });
        }
        let z = self.matrix.trace_product(rho.matrix());
        if z.im.abs() > tol::IMAGINARY_RESIDUE * self.matrix.max_abs().max(1.0) {
            return Err(Error::NotHermitian { deviation: z.im.abs() });
        }
        Ok(z.re)
    }
}

fn decompose(m: &ComplexMatrix) -> Result<Spectrum> {
    let evd = m
        .faer()
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| Error::ConvergenceFailure)?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].re.total_cmp(&s[b].re));
    let values: Vec<f64> = order.iter().map(|&k| s[k].re).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::ConvergenceFailure);
    }
    let vectors = ComplexMatrix::from_fn(n, n, |i, j| u[(i, order[j])]);
    Ok(Spectrum { values, vectors })
}

/// Eigendecomposition with ascending eigenvalues.
pub fn eig_hermitian(h: &HermitianOperator) -> Result<&Spectrum> {
    h.spectrum()
}

/// `exp(-i h dt)` from the eigendecomposition of `h`.
pub fn propagator_step(h: &HermitianOperator, dt: f64) -> Result<ComplexMatrix> {
    if !dt.is_finite() {
        return Err(Error::NonFinite);
    }
    let s = h.spectrum()?;
    Ok(s.map(|e| C64::from_polar(1.0, -e * dt)))
}

/// Positive unit-trace Hermitian operator on a tensor-product space.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    op: HermitianOperator,
    dims: Vec<usize>,
}

impl DensityMatrix {
    /// Fully validated construction (Hermitian, unit trace, positive).
    pub fn new(matrix: ComplexMatrix, dims: Vec<usize>) -> Result<Self> {
        let op = HermitianOperator::new(matrix)?;
        let rho = Self::with_dims(op, dims)?;
        rho.check_trace()?;
        let min = rho.op.spectrum()?.min();
        if min < -tol::POSITIVITY {
            return Err(Error::NotPositive { min_eigenvalue: min });
        }
        Ok(rho)
    }

    /// Construction for matrices that are positive by construction (unitary
    /// images, partial traces, mixtures); only trace and shape are checked.
    pub(crate) fn trusted(matrix: ComplexMatrix, dims: Vec<usize>) -> Result<Self> {
        let rho = Self::with_dims(HermitianOperator::symmetrized(matrix), dims)?;
        rho.check_trace()?;
        Ok(rho)
    }

    pub(crate) fn from_spectrum(spectrum: Spectrum, dims: Vec<usize>) -> Result<Self> {
        let rho = Self::with_dims(HermitianOperator::from_spectrum(spectrum), dims)?;
        rho.check_trace()?;
        Ok(rho)
    }

    fn with_dims(op: HermitianOperator, dims: Vec<usize>) -> Result<Self> {
        let total: usize = dims.iter().product();
        if dims.is_empty() || total != op.dim() {
            return Err(Error::DimensionMismatch { expected: op.dim(), found: total });
        }
        Ok(Self { op, dims })
    }

    fn check_trace(&self) -> Result<()> {
        let t = self.op.matrix().trace().re;
        if (t - 1.0).abs() > tol::TRACE {
            return Err(Error::NotUnitTrace { trace: t });
        }
        Ok(())
    }

    pub fn pure(psi: &[C64], dims: Vec<usize>) -> Result<Self> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NonFinite);
        }
        let v: Vec<C64> = psi.iter().map(|z| z / norm).collect();
        Self::trusted(ComplexMatrix::outer(&v, &v), dims)
    }

    pub fn maximally_mixed(dims: Vec<usize>) -> Result<Self> {
        let d: usize = dims.iter().product();
        Self::diagonal(&vec![1.0 / d as f64; d], dims)
    }

    /// Diagonal state in the computational basis.
    pub fn diagonal(probabilities: &[f64], dims: Vec<usize>) -> Result<Self> {
        if let Some(&p) = probabilities.iter().find(|&&p| p < -tol::POSITIVITY) {
            return Err(Error::NotPositive { min_eigenvalue: p });
        }
        Self::trusted(ComplexMatrix::from_real_diagonal(probabilities), dims)
    }

    /// Tensor product of states; factor dims are concatenated.
    pub fn product(parts: &[&DensityMatrix]) -> Result<Self> {
        let dims: Vec<usize> = parts.iter().flat_map(|p| p.dims.iter().copied()).collect();
        let m = kron_all(parts.iter().map(|p| p.matrix()));
        Self::trusted(m, dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        self.op.matrix()
    }

    pub fn operator(&self) -> &HermitianOperator {
        &self.op
    }

    pub fn spectrum(&self) -> Result<&Spectrum> {
        self.op.spectrum()
    }

    /// Same matrix, regrouped into different tensor factors.
    pub fn with_factor_dims(&self, dims: Vec<usize>) -> Result<Self> {
        Self::with_dims(self.op.clone(), dims)
    }

    /// `u ρ u^H`, keeping the factor structure.
    pub fn unitary_image(&self, u: &ComplexMatrix) -> Result<Self> {
        if u.nrows() != self.dim() || u.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: u.nrows() });
        }
        Self::trusted(self.matrix().conjugate_by(u), self.dims.clone())
    }
}

/// Reduced state on the factors listed in `keep` (in increasing order).
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let dims = rho.dims();
    let m = dims.len();
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if kept.is_empty() || kept.iter().any(|&k| k >= m) {
        return Err(Error::DimensionMismatch { expected: m, found: keep.len() });
    }
    let traced: Vec<usize> = (0..m).filter(|f| !kept.contains(f)).collect();
    let mut strides = vec![1usize; m];
    for f in (0..m.saturating_sub(1)).rev() {
        strides[f] = strides[f + 1] * dims[f + 1];
    }
    let offsets = |factors: &[usize]| -> Vec<usize> {
        let mut out = vec![0usize];
        for &f in factors {
            let mut next = Vec::with_capacity(out.len() * dims[f]);
            for &o in &out {
                for digit in 0..dims[f] {
                    next.push(o + digit * strides[f]);
                }
            }
            out = next;
        }
        out
    };
    let ok = offsets(&kept);
    let ot = offsets(&traced);
    let full = rho.matrix();
    let reduced = ComplexMatrix::from_fn(ok.len(), ok.len(), |a, b| {
        ot.iter().map(|&t| full.get(ok[a] + t, ok[b] + t)).sum()
    });
    DensityMatrix::trusted(reduced, kept.iter().map(|&f| dims[f]).collect())
}

/// `Σ_x Π_x ρ Π_x`.
pub fn dephase(rho: &DensityMatrix, x: &CoarseGraining) -> Result<DensityMatrix> {
    if x.dim() != rho.dim() {
        return Err(Error::DimensionMismatch { expected: x.dim(), found: rho.dim() });
    }
    let w = x.basis();
    let mut r = w.adjoint_matmul(rho.matrix()).matmul(w);
    let n = rho.dim();
    let mut block_of = vec![0usize; n];
    for (k, &(start, len)) in x.blocks().iter().enumerate() {
        block_of[start..start + len].iter_mut().for_each(|b| *b = k);
    }
    for j in 0..n {
        for i in 0..n {
            if block_of[i] != block_of[j] {
                r.set(i, j, ZERO);
            }
        }
    }
    DensityMatrix::trusted(r.conjugate_by(w), rho.dims().to_vec())
}
