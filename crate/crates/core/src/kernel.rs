//! Exact Gaussian kernel evaluation and dense symmetric eigendecomposition.

use crate::{DenseMatrix, Error, Result, Vector};

/// Gaussian kernel `k(x, y) = exp(-gamma * ||x - y||^2)`.
///
/// `gamma` is the inverse squared bandwidth `1 / (2 sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    gamma: f64,
}

impl GaussianKernel {
    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "kernel gamma must be finite and positive, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-self.gamma * d2).exp()
    }
}

fn check_finite(m: &DenseMatrix, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!("{what} contains non-finite values")));
    }
    Ok(())
}

fn row_sq_norms(a: &DenseMatrix) -> Vec<f64> {
    (0..a.nrows()).map(|i| a.row(i).norm_squared()).collect()
}

/// Gram matrix between row sets: entry `(i, j) = k(a_i, b_j)`.
///
/// Distances are formed as `||a||^2 + ||b||^2 - 2 a.b` with tiny negatives
/// clamped to zero, so the whole computation is a single matrix product.
pub fn gram(kernel: &GaussianKernel, a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "gram inputs must share the feature dimension: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    check_finite(a, "gram input A")?;
    check_finite(b, "gram input B")?;
    let an = row_sq_norms(a);
    let bn = row_sq_norms(b);
    let mut g = a * b.transpose();
    let gamma = kernel.gamma;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let d2 = (an[i] + bn[j] - 2.0 * g[(i, j)]).max(0.0);
            g[(i, j)] = (-gamma * d2).exp();
        }
    }
    Ok(g)
}

/// Gram matrix of one row set with itself: exactly symmetric, unit diagonal.
pub fn gram_self(kernel: &GaussianKernel, a: &DenseMatrix) -> Result<DenseMatrix> {
    check_finite(a, "gram input")?;
    let n = a.nrows();
    let an = row_sq_norms(a);
    let p = a * a.transpose();
    let gamma = kernel.gamma;
    let mut g = DenseMatrix::zeros(n, n);
    for i in 0..n {
        g[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let d2 = (an[i] + an[j] - 2.0 * p[(i, j)]).max(0.0);
            let v = (-gamma * d2).exp();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the same order as `values`.
    pub vectors: DenseMatrix,
}

impl SymEig {
    /// `V diag(values) V^T`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, lam) in self.values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*lam);
        }
        let mut out = DenseMatrix::zeros(n, n);
        out.gemm(1.0, &scaled, &self.vectors.transpose(), 0.0);
        out
    }
}

/// Maximum absolute asymmetry tolerated before `sym_eig` rejects its input.
fn symmetry_tolerance(m: &DenseMatrix) -> f64 {
    let scale = m.amax().max(1.0);
    1e-10 * scale
}

/// Symmetric eigendecomposition `M = V diag(lambda) V^T`, descending eigenvalues.
///
/// The input must be symmetric up to a small tolerance; it is symmetrized
/// explicitly before factorization so round-off asymmetry cannot leak through.
pub fn sym_eig(m: &DenseMatrix) -> Result<SymEig> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "sym_eig requires a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    check_finite(m, "sym_eig input")?;
    let tol = symmetry_tolerance(m);
    let mut asym = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > tol {
        return Err(Error::InvalidData(format!(
            "matrix is not symmetric: max |M - M^T| = {asym:e} exceeds {tol:e}"
        )));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("eigenvalues are finite")
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DenseMatrix::zeros(m.nrows(), m.ncols());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEig { values, vectors })
}

/// Solve `(K + lambda I) alpha = y` for symmetric PSD `K`.
///
/// Used by both the ridge solver and the risk evaluators; kept here with the
/// eigensolver so the factorization machinery lives in one place.
pub fn solve_shifted(k: &DenseMatrix, y: &Vector, lambda: f64) -> Result<Vector> {
    if k.nrows() != k.ncols() || k.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "solve_shifted: K is {}x{}, y has length {}",
            k.nrows(),
            k.ncols(),
            y.len()
        )));
    }
    let n = k.nrows();
    let mut shifted = k.clone();
    for i in 0..n {
        shifted[(i, i)] += lambda;
    }
    let alpha = match shifted.clone().cholesky() {
        Some(chol) => chol.solve(y),
        None => {
            // Semi-definite fallback through the eigensolver.
            let eig = sym_eig(k)?;
            let scale = eig.values.first().copied().unwrap_or(0.0).abs().max(1.0);
            let mut coeffs = eig.vectors.transpose() * y;
            for (i, c) in coeffs.iter_mut().enumerate() {
                let denom = eig.values[i] + lambda;
                if denom.abs() <= 1e-14 * scale {
                    return Err(Error::Numerical(format!(
                        "K + lambda I is numerically singular (eigenvalue {:e} + {lambda:e})",
                        eig.values[i]
                    )));
                }
                *c /= denom;
            }
            &eig.vectors * coeffs
        }
    };
    let residual = (&shifted * &alpha - y).norm();
    let rel = residual / y.norm().max(1e-300);
    if !rel.is_finite() || rel > 1e-10 {
        return Err(Error::Numerical(format!(
            "linear solve residual {rel:e} exceeds 1e-10 (system too ill-conditioned)"
        )));
    }
    Ok(alpha)
}

/// Dot product of equal-length slices with manual accumulator splitting.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}
