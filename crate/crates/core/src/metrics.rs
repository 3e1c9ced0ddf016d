//! Kernel approximation error measures.
//!
//! Beyond the conventional Frobenius/spectral norms of `K - K~`, the module
//! measures the two-sided spectral approximation quality: the smallest
//! `(delta1, delta2)` such that
//!
//! ```text
//! (1 - delta1)(K + lambda I)  <=  K~ + lambda I  <=  (1 + delta2)(K + lambda I)
//! ```
//!
//! in the positive-semidefinite order. Writing
//! `A = (K + lambda I)^{-1/2} (K~ - K) (K + lambda I)^{-1/2}`, the minimal
//! feasible values are `delta1 = max(0, -lambda_min(A))` and
//! `delta2 = max(0, lambda_max(A))`.

use crate::kernel::{sym_eig, SymEig};
use crate::{DenseMatrix, Error, Result};

/// Frobenius (squared) and spectral norms of the error matrix `K - K~`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub frob_sq: f64,
    pub spectral: f64,
}

/// Measured two-sided spectral approximation quality at one `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralDeltas {
    pub delta1: f64,
    pub delta2: f64,
    /// `max(delta1, delta2)`.
    pub delta: f64,
    pub lambda: f64,
}

fn check_same_square(k: &DenseMatrix, kt: &DenseMatrix) -> Result<()> {
    if k.nrows() != k.ncols() || kt.nrows() != kt.ncols() || k.nrows() != kt.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "expected same-size square matrices, got {}x{} and {}x{}",
            k.nrows(),
            k.ncols(),
            kt.nrows(),
            kt.ncols()
        )));
    }
    Ok(())
}

/// Frobenius and spectral norms of `K - K~`.
pub fn error_norms(k: &DenseMatrix, kt: &DenseMatrix) -> Result<ErrorNorms> {
    check_same_square(k, kt)?;
    let diff = k - kt;
    let frob_sq = diff.iter().map(|v| v * v).sum();
    let eig = sym_eig(&diff)?;
    let spectral = eig
        .values
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok(ErrorNorms { frob_sq, spectral })
}

/// Reusable (delta1, delta2) estimator for sweeping `lambda` against a fixed
/// `(K, K~)` pair: the congruence `V^T (K~ - K) V` is formed once, each
/// `lambda` then costs one scaling and one eigendecomposition.
pub struct DeltaSweep {
    /// Eigenvalues of `K`, descending, as produced by `sym_eig`.
    eigs_k: Vec<f64>,
    /// `V^T (K~ - K) V`, symmetrized.
    f: DenseMatrix,
}

impl DeltaSweep {
    pub fn new(k_eig: &SymEig, k_tilde: &DenseMatrix) -> Result<Self> {
        let n = k_eig.values.len();
        if k_tilde.nrows() != n || k_tilde.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "approximation is {}x{}, kernel eigendecomposition has n = {n}",
                k_tilde.nrows(),
                k_tilde.ncols()
            )));
        }
        let diff = k_tilde - k_eig.reconstruct();
        let f_raw = k_eig.vectors.transpose() * diff * &k_eig.vectors;
        let f = (&f_raw + f_raw.transpose()) * 0.5;
        Ok(DeltaSweep {
            eigs_k: k_eig.values.clone(),
            f,
        })
    }

    pub fn deltas(&self, lambda: f64) -> Result<SpectralDeltas> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParam(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let min_eig = self.eigs_k.last().copied().unwrap_or(0.0);
        if min_eig + lambda <= 1e-14 {
            return Err(Error::Numerical(format!(
                "K + lambda I is numerically singular: lambda_min(K) + lambda = {:e}",
                min_eig + lambda
            )));
        }
        // Eigenvalues of K clamped at zero before shifting: the exact kernel
        // matrix is PSD up to round-off.
        let scales: Vec<f64> = self
            .eigs_k
            .iter()
            .map(|mu| 1.0 / (mu.max(0.0) + lambda).sqrt())
            .collect();
        let n = scales.len();
        let mut a = DenseMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                a[(i, j)] = self.f[(i, j)] * scales[i] * scales[j];
            }
        }
        let eig = sym_eig(&a)?;
        let delta2 = eig.values.first().copied().unwrap_or(0.0).max(0.0);
        let delta1 = (-eig.values.last().copied().unwrap_or(0.0)).max(0.0);
        Ok(SpectralDeltas {
            delta1,
            delta2,
            delta: delta1.max(delta2),
            lambda,
        })
    }
}

/// Smallest `(delta1, delta2)` making `K~ + lambda I` a two-sided spectral
/// approximation of `K + lambda I`; both are clamped at zero.
pub fn spectral_deltas(
    k: &DenseMatrix,
    k_tilde: &DenseMatrix,
    lambda: f64,
) -> Result<SpectralDeltas> {
    check_same_square(k, k_tilde)?;
    let k_eig = sym_eig(k)?;
    DeltaSweep::new(&k_eig, k_tilde)?.deltas(lambda)
}

/// Rank-driven lower bound on delta1: any rank-`m` approximation satisfies
/// `delta1 >= lambda_{m+1}(K) / (lambda_{m+1}(K) + lambda)`.
pub fn delta1_rank_floor(eigs_k: &[f64], m: usize, lambda: f64) -> f64 {
    if m >= eigs_k.len() {
        return 0.0;
    }
    let tail = eigs_k[m].max(0.0);
    if tail == 0.0 {
        0.0
    } else {
        tail / (tail + lambda)
    }
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Average 1-based rank over the tie run [i, j].
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of (average-tie) ranks.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!(
            "sequences have lengths {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidParam(
            "rank correlation needs at least two points".into(),
        ));
    }
    if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite value in rank correlation".into()));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::InvalidData(
            "rank correlation undefined for a constant sequence".into(),
        ));
    }
    Ok(cov / (vx * vy).sqrt())
}
