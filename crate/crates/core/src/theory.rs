//! Fixed-design kernel ridge regression and its approximation bounds.
//!
//! In the fixed-design setting the inputs are deterministic and only the label
//! noise is random: `y_i = ybar_i + eps_i` with `E[eps] = 0`,
//! `Var[eps] = sigma^2`. The expected risk of the ridge regressor then has a
//! closed form, which splits into a squared-bias term and a noise-variance
//! term. `risk_hat` is the standard upper bound on the risk obtained by
//! dropping one inverse factor.
//!
//! On top of the exact-risk engine the module evaluates:
//! * the two-sided spectral-approximation risk bound
//!   `risk(K~) <= risk_hat(K) / (1 - delta1) + delta2/(1+delta2) * (m/n) sigma^2`,
//! * a probability lower bound that a quantized feature gram spectrally
//!   approximates `K + lambda I` within `(delta1, delta2)`, and
//! * the feature count sufficient for one side of that sandwich to hold with
//!   a given failure probability.

use crate::kernel::{solve_shifted, sym_eig, SymEig};
use crate::metrics::SpectralDeltas;
use crate::quantize::delta_b_sq;
use crate::{DenseMatrix, Error, Result, Vector};

/// A fixed-design ridge regression instance.
#[derive(Debug, Clone)]
pub struct FixedDesignProblem {
    /// Kernel matrix actually used by the regressor (exact or approximate).
    pub k_used: DenseMatrix,
    /// True (noise-free) labels.
    pub y_bar: Vector,
    /// Label-noise variance.
    pub sigma_sq: f64,
    /// Ridge regularization strength.
    pub lambda: f64,
}

/// Closed-form risk decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskReport {
    /// Expected risk `bias_sq + variance_term`.
    pub risk: f64,
    /// Upper bound on `risk`.
    pub risk_hat: f64,
    pub bias_sq: f64,
    pub variance_term: f64,
}

/// `alpha = (K + lambda I)^{-1} y`.
pub fn ridge_fit(k: &DenseMatrix, y: &Vector, lambda: f64) -> Result<Vector> {
    if lambda < 0.0 {
        return Err(Error::InvalidParam(format!(
            "ridge regularization must be nonnegative, got {lambda}"
        )));
    }
    solve_shifted(k, y, lambda)
}

/// Risk terms from a precomputed eigendecomposition of the kernel matrix in
/// use; lets one factorization serve a whole lambda sweep.
pub fn risk_from_eig(
    eig: &SymEig,
    y_bar: &Vector,
    sigma_sq: f64,
    lambda: f64,
) -> Result<RiskReport> {
    let n = eig.values.len();
    if y_bar.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "labels have length {}, kernel matrix is {n}x{n}",
            y_bar.len()
        )));
    }
    if sigma_sq < 0.0 || lambda < 0.0 {
        return Err(Error::InvalidParam(
            "sigma_sq and lambda must be nonnegative".into(),
        ));
    }
    let scale = eig.values.first().copied().unwrap_or(0.0).abs().max(1.0);
    let proj = eig.vectors.transpose() * y_bar;
    let nf = n as f64;
    let mut bias_sq = 0.0;
    let mut variance_term = 0.0;
    let mut risk_hat = 0.0;
    for i in 0..n {
        let mu = eig.values[i];
        let denom = mu + lambda;
        if denom <= 1e-14 * scale {
            return Err(Error::Numerical(format!(
                "K + lambda I is numerically singular (eigenvalue {mu:e}, lambda {lambda:e})"
            )));
        }
        let y2 = proj[i] * proj[i];
        bias_sq += lambda * lambda * y2 / (denom * denom);
        variance_term += sigma_sq * mu * mu / (denom * denom);
        risk_hat += lambda * y2 / denom + sigma_sq * mu / denom;
    }
    Ok(RiskReport {
        risk: (bias_sq + variance_term) / nf,
        risk_hat: risk_hat / nf,
        bias_sq: bias_sq / nf,
        variance_term: variance_term / nf,
    })
}

/// Closed-form expected risk of the ridge regressor on `problem.k_used`.
pub fn risk_exact(problem: &FixedDesignProblem) -> Result<RiskReport> {
    let eig = sym_eig(&problem.k_used)?;
    risk_from_eig(&eig, &problem.y_bar, problem.sigma_sq, problem.lambda)
}

/// Risk of the regressor trained on an approximate kernel matrix. The
/// squared-bias field is the probe quantity `(lambda^2/n) y^T (K~+lambda I)^{-2} y`.
pub fn risk_of_approx(
    k_exact: &DenseMatrix,
    k_approx: &DenseMatrix,
    y_bar: &Vector,
    sigma_sq: f64,
    lambda: f64,
) -> Result<RiskReport> {
    if k_exact.shape() != k_approx.shape() {
        return Err(Error::DimensionMismatch(format!(
            "exact and approximate kernel matrices differ in shape: {:?} vs {:?}",
            k_exact.shape(),
            k_approx.shape()
        )));
    }
    risk_exact(&FixedDesignProblem {
        k_used: k_approx.clone(),
        y_bar: y_bar.clone(),
        sigma_sq,
        lambda,
    })
}

/// Risk bound for a regressor trained on a rank-`m_rank` approximation whose
/// shifted matrix spectrally approximates the exact one within `deltas`.
///
/// Returns `+inf` when `delta1 >= 1` (the bound diverges there).
pub fn approx_risk_bound(
    risk_hat_exact: f64,
    deltas: &SpectralDeltas,
    m_rank: usize,
    n: usize,
    sigma_sq: f64,
) -> f64 {
    if deltas.delta1 >= 1.0 {
        return f64::INFINITY;
    }
    let first = risk_hat_exact / (1.0 - deltas.delta1);
    let second = deltas.delta2 / (1.0 + deltas.delta2) * (m_rank as f64 / n as f64) * sigma_sq;
    first + second
}

/// `8 tr((K + lambda I)^{-1} (K + delta_b^2 I))`, the leading factor of the
/// spectral-approximation probability bound.
fn trace_factor(eigs_k: &[f64], lambda: f64, db2: f64) -> f64 {
    8.0 * eigs_k
        .iter()
        .map(|mu| (mu + db2) / (mu + lambda))
        .sum::<f64>()
}

fn check_bound_assumptions(eigs_k: &[f64], lambda: f64, db2: f64) -> Result<()> {
    if eigs_k.is_empty() {
        return Err(Error::InvalidParam("empty eigenvalue list".into()));
    }
    let k_norm = eigs_k.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if k_norm < lambda {
        return Err(Error::Assumption(format!(
            "requires ||K|| >= lambda: ||K|| = {k_norm:e}, lambda = {lambda:e}"
        )));
    }
    if lambda < db2 {
        return Err(Error::Assumption(format!(
            "requires lambda >= delta_b^2: lambda = {lambda:e}, delta_b^2 = {db2:e}"
        )));
    }
    Ok(())
}

/// Probability lower bound and its trace factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichBound {
    /// Lower bound on the probability that the two-sided approximation holds,
    /// clamped to [0, 1].
    pub prob: f64,
    /// The trace factor `a`.
    pub a_trace: f64,
}

fn tail_exponent(m: usize, n: usize, lambda: f64, t: f64) -> f64 {
    // exp(-m t^2 / ((4n/lambda)(1 + 2t/3)))
    (-(m as f64) * t * t / ((4.0 * n as f64 / lambda) * (1.0 + 2.0 * t / 3.0))).exp()
}

/// Lower bound on the probability that an `m`-feature `b`-bit quantized RFF
/// gram `K~` satisfies
/// `(1-delta1)(K+lambda I) <= K~+lambda I <= (1+delta2)(K+lambda I)`.
///
/// Requires `||K|| >= lambda >= delta_b^2`, `delta1 >= 0`, and
/// `delta2 >= delta_b^2 / lambda`; violations are reported by name.
pub fn sandwich_probability(
    eigs_k: &[f64],
    lambda: f64,
    b: u8,
    m: usize,
    delta1: f64,
    delta2: f64,
) -> Result<SandwichBound> {
    let db2 = delta_b_sq(b)?;
    check_bound_assumptions(eigs_k, lambda, db2)?;
    if delta1 < 0.0 {
        return Err(Error::Assumption(format!(
            "requires delta1 >= 0, got {delta1}"
        )));
    }
    let floor = db2 / lambda;
    if delta2 < floor {
        return Err(Error::Assumption(format!(
            "requires delta2 >= delta_b^2/lambda = {floor:e}, got {delta2}"
        )));
    }
    let n = eigs_k.len();
    let a_trace = trace_factor(eigs_k, lambda, db2);
    let e1 = tail_exponent(m, n, lambda, delta1);
    let e2 = tail_exponent(m, n, lambda, delta2 - floor);
    let prob = (1.0 - a_trace * (e1 + e2)).clamp(0.0, 1.0);
    Ok(SandwichBound { prob, a_trace })
}

/// Which side of the sandwich a feature count should guarantee.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaTarget {
    Delta1(f64),
    Delta2(f64),
}

/// Feature count sufficient for one side of the sandwich to hold with
/// probability at least `1 - fail_prob`.
pub fn min_features_for_target(
    eigs_k: &[f64],
    lambda: f64,
    b: u8,
    target: DeltaTarget,
    fail_prob: f64,
) -> Result<u64> {
    let db2 = delta_b_sq(b)?;
    check_bound_assumptions(eigs_k, lambda, db2)?;
    if !(fail_prob > 0.0 && fail_prob < 1.0) {
        return Err(Error::InvalidParam(format!(
            "failure probability must lie in (0, 1), got {fail_prob}"
        )));
    }
    let gap = match target {
        DeltaTarget::Delta1(d1) => {
            if !(d1 > 0.0 && d1 <= 1.5) {
                return Err(Error::Assumption(format!(
                    "requires 0 < delta1 <= 3/2, got {d1}"
                )));
            }
            d1
        }
        DeltaTarget::Delta2(d2) => {
            let floor = db2 / lambda;
            if d2 <= floor {
                return Err(Error::Assumption(format!(
                    "delta2 = {d2} is at or below the quantization floor delta_b^2/lambda = {floor:e}"
                )));
            }
            if d2 > 1.5 {
                return Err(Error::Assumption(format!(
                    "requires delta2 <= 3/2, got {d2}"
                )));
            }
            d2 - floor
        }
    };
    let n = eigs_k.len() as f64;
    let a = trace_factor(eigs_k, lambda, db2);
    Ok(feature_count_formula(n, lambda, gap, a, fail_prob))
}

/// `ceil((8 n / lambda) / gap^2 * ln(a / fail_prob))`, clamped at zero when
/// the log term vanishes or goes negative.
fn feature_count_formula(n: f64, lambda: f64, gap: f64, a: f64, fail_prob: f64) -> u64 {
    let log_term = (a / fail_prob).ln();
    if log_term <= 0.0 {
        return 0;
    }
    ((8.0 * n / lambda) / (gap * gap) * log_term).ceil() as u64
}

/// Bound evaluations collected for one quantized-feature configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// Spectral risk bound at the measured deltas.
    pub risk_bound: f64,
    /// Probability lower bound for the sandwich at the targets, in [0, 1].
    pub sandwich_prob: f64,
    pub a_trace: f64,
    /// Feature counts sufficient for each side of the sandwich at the targets.
    pub m_min_delta1: u64,
    pub m_min_delta2: u64,
}

impl BoundReport {
    /// Evaluate every bound for one `(m, b)` configuration against targets
    /// `(delta1_target, delta2_target)` at failure probability `fail_prob`.
    /// `measured` supplies the deltas the risk bound is taken at.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        eigs_k: &[f64],
        lambda: f64,
        b: u8,
        m: usize,
        rank: usize,
        sigma_sq: f64,
        risk_hat_exact: f64,
        measured: &SpectralDeltas,
        targets: (f64, f64),
        fail_prob: f64,
    ) -> Result<BoundReport> {
        let sandwich = sandwich_probability(eigs_k, lambda, b, m, targets.0, targets.1)?;
        let m_min_delta1 =
            min_features_for_target(eigs_k, lambda, b, DeltaTarget::Delta1(targets.0), fail_prob)?;
        let m_min_delta2 =
            min_features_for_target(eigs_k, lambda, b, DeltaTarget::Delta2(targets.1), fail_prob)?;
        Ok(BoundReport {
            risk_bound: approx_risk_bound(risk_hat_exact, measured, rank, eigs_k.len(), sigma_sq),
            sandwich_prob: sandwich.prob,
            a_trace: sandwich.a_trace,
            m_min_delta1,
            m_min_delta2,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::gaussian_inputs;
    use crate::kernel::{gram_self, GaussianKernel};
    use approx::assert_relative_eq;

    #[test]
    fn ridge_scalar_case() {
        let k = DenseMatrix::from_row_slice(1, 1, &[1.0]);
        let y = Vector::from_vec(vec![2.0]);
        let alpha = ridge_fit(&k, &y, 1.0).unwrap();
        assert_relative_eq!(alpha[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ridge_large_lambda_shrinks_to_zero() {
        let k = DenseMatrix::identity(4, 4);
        let y = Vector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let alpha = ridge_fit(&k, &y, 1e12).unwrap();
        assert!(alpha.norm() < 1e-10);
    }

    #[test]
    fn ridge_identity_kernel() {
        let k = DenseMatrix::identity(3, 3);
        let y = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        let lambda = 0.5;
        let alpha = ridge_fit(&k, &y, lambda).unwrap();
        for i in 0..3 {
            assert_relative_eq!(alpha[i], y[i] / (1.0 + lambda), epsilon = 1e-12);
        }
    }

    #[test]
    fn risk_scalar_noise_free() {
        let report = risk_exact(&FixedDesignProblem {
            k_used: DenseMatrix::from_row_slice(1, 1, &[1.0]),
            y_bar: Vector::from_vec(vec![2.0]),
            sigma_sq: 0.0,
            lambda: 1.0,
        })
        .unwrap();
        assert_relative_eq!(report.bias_sq, 1.0, epsilon = 1e-12);
        assert_relative_eq!(report.variance_term, 0.0, epsilon = 1e-12);
        assert_relative_eq!(report.risk, 1.0, epsilon = 1e-12);
        assert_relative_eq!(report.risk_hat, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn risk_scalar_with_noise() {
        let report = risk_exact(&FixedDesignProblem {
            k_used: DenseMatrix::from_row_slice(1, 1, &[1.0]),
            y_bar: Vector::from_vec(vec![2.0]),
            sigma_sq: 1.0,
            lambda: 1.0,
        })
        .unwrap();
        assert_relative_eq!(report.risk, 1.25, epsilon = 1e-12);
        assert_relative_eq!(report.risk_hat, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn risk_zero_lambda_nonsingular_kernel() {
        let report = risk_exact(&FixedDesignProblem {
            k_used: DenseMatrix::identity(3, 3) * 2.0,
            y_bar: Vector::from_vec(vec![1.0, 2.0, 3.0]),
            sigma_sq: 0.7,
            lambda: 0.0,
        })
        .unwrap();
        assert_relative_eq!(report.bias_sq, 0.0, epsilon = 1e-12);
        assert_relative_eq!(report.variance_term, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn risk_hat_dominates_risk_on_random_instances() {
        let kern = GaussianKernel::new(0.3).unwrap();
        for seed in 0..20u64 {
            let x = gaussian_inputs(12, 3, 300 + seed);
            let k = gram_self(&kern, &x).unwrap();
            let y = Vector::from_fn(12, |i, _| ((i as f64) * 0.71 + seed as f64).sin());
            for sigma_sq in [0.0, 0.5, 1.0] {
                for lambda in [1e-4, 1e-2, 1.0] {
                    let r = risk_exact(&FixedDesignProblem {
                        k_used: k.clone(),
                        y_bar: y.clone(),
                        sigma_sq,
                        lambda,
                    })
                    .unwrap();
                    assert!(
                        r.risk_hat >= r.risk - 1e-10,
                        "risk_hat {} < risk {}",
                        r.risk_hat,
                        r.risk
                    );
                    assert_relative_eq!(
                        r.risk,
                        r.bias_sq + r.variance_term,
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn approx_risk_equals_exact_when_matrices_match() {
        let kern = GaussianKernel::new(0.4).unwrap();
        let x = gaussian_inputs(8, 2, 17);
        let k = gram_self(&kern, &x).unwrap();
        let y = Vector::from_fn(8, |i, _| (i as f64).cos());
        let a = risk_of_approx(&k, &k, &y, 0.3, 0.1).unwrap();
        let b = risk_exact(&FixedDesignProblem {
            k_used: k,
            y_bar: y,
            sigma_sq: 0.3,
            lambda: 0.1,
        })
        .unwrap();
        assert_relative_eq!(a.risk, b.risk, epsilon = 1e-12);
        assert_relative_eq!(a.risk_hat, b.risk_hat, epsilon = 1e-12);
    }

    #[test]
    fn approx_risk_of_zero_matrix_is_null_predictor() {
        let n = 5;
        let k = DenseMatrix::identity(n, n);
        let zero = DenseMatrix::zeros(n, n);
        let y = Vector::from_fn(n, |i, _| i as f64 + 1.0);
        let r = risk_of_approx(&k, &zero, &y, 0.9, 0.5).unwrap();
        assert_relative_eq!(r.bias_sq, y.norm_squared() / n as f64, epsilon = 1e-12);
        assert_relative_eq!(r.variance_term, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn risk_bound_identities() {
        let mk = |d1: f64, d2: f64| SpectralDeltas {
            delta1: d1,
            delta2: d2,
            delta: d1.max(d2),
            lambda: 1.0,
        };
        // No approximation error: the bound is risk_hat itself.
        assert_relative_eq!(approx_risk_bound(2.0, &mk(0.0, 0.0), 4, 4, 1.0), 2.0);
        // Worked case: 2 * 2 + (1/2) * 1 * 1 = 4.5.
        assert_relative_eq!(approx_risk_bound(2.0, &mk(0.5, 1.0), 4, 4, 1.0), 4.5);
        // delta2 -> inf saturates the second term at (m/n) sigma^2.
        let big = approx_risk_bound(2.0, &mk(0.0, 1e12), 4, 4, 1.0);
        assert_relative_eq!(big, 3.0, epsilon = 1e-9);
        // delta1 -> 1 diverges.
        assert!(approx_risk_bound(2.0, &mk(1.0, 0.0), 4, 4, 1.0).is_infinite());
    }

    #[test]
    fn sandwich_probability_matches_hand_computation() {
        // One eigenvalue 1, lambda 1, b = 16: trace factor is almost exactly
        // 8 * (1/2) = 4. With delta1 = delta2 = 1 and m = 50 both exponents
        // are exp(-50 / (4 * (1 + 2/3))) = exp(-7.5), so the bound is
        // 1 - 8 exp(-7.5) = 0.9955753...
        let bound = sandwich_probability(&[1.0], 1.0, 16, 50, 1.0, 1.0).unwrap();
        assert_relative_eq!(bound.a_trace, 4.0, epsilon = 1e-8);
        assert_relative_eq!(bound.prob, 1.0 - 8.0 * (-7.5f64).exp(), epsilon = 1e-6);
        assert_relative_eq!(bound.prob, 0.99557533, epsilon = 1e-6);
    }

    #[test]
    fn sandwich_probability_vacuous_at_zero_gaps() {
        // Both exponentials are 1, so the raw bound is negative and clamps.
        let db2 = delta_b_sq(4).unwrap();
        let bound = sandwich_probability(&[1.0], 1.0, 4, 100, 0.0, db2 / 1.0).unwrap();
        assert_eq!(bound.prob, 0.0);
    }

    #[test]
    fn sandwich_probability_names_violated_assumptions() {
        // lambda above the spectral norm of K.
        let err = sandwich_probability(&[0.5], 1.0, 8, 10, 0.1, 0.5).unwrap_err();
        assert!(err.to_string().contains("||K||"), "{err}");
        // lambda below the quantization variance scale (b = 1 has delta^2 = 2).
        let err = sandwich_probability(&[3.0], 1.0, 1, 10, 0.1, 2.5).unwrap_err();
        assert!(err.to_string().contains("delta_b^2"), "{err}");
        // delta2 below the floor.
        let err = sandwich_probability(&[3.0], 2.5, 1, 10, 0.1, 0.5).unwrap_err();
        assert!(err.to_string().contains("delta2"), "{err}");
        // negative delta1.
        assert!(sandwich_probability(&[3.0], 2.5, 1, 10, -0.1, 1.0).is_err());
    }

    #[test]
    fn feature_count_hand_value() {
        // n = 1, eigs = [1], lambda = 1, b = 16 (floor ~ 5e-10), fail 0.04:
        // a ~ 4, so m = ceil(32 * ln(100)) = ceil(147.365...) = 148.
        let m = min_features_for_target(&[1.0], 1.0, 16, DeltaTarget::Delta1(0.5), 0.04).unwrap();
        assert_eq!(m, 148);
    }

    #[test]
    fn feature_count_zero_when_log_vanishes() {
        // With a / fail_prob = 1 the log term vanishes and the count is zero.
        assert_eq!(feature_count_formula(1.0, 1.0, 0.5, 0.9, 0.9), 0);
        assert_eq!(feature_count_formula(1.0, 1.0, 0.5, 0.5, 0.9), 0);
    }

    #[test]
    fn feature_count_quadruples_when_target_halves() {
        let eigs = [1.0];
        let m1 = min_features_for_target(&eigs, 1.0, 16, DeltaTarget::Delta1(0.5), 0.04).unwrap();
        let m2 = min_features_for_target(&eigs, 1.0, 16, DeltaTarget::Delta1(0.25), 0.04).unwrap();
        // Up to ceiling round-off.
        assert!(m2 >= 4 * m1 - 4 && m2 <= 4 * m1 + 4, "m1 = {m1}, m2 = {m2}");
    }

    #[test]
    fn feature_count_rejects_unreachable_delta2() {
        // b = 1 gives delta_b^2 = 2; at lambda = 2 the floor is 1, so a
        // delta2 target at or below 1 is unreachable.
        let err =
            min_features_for_target(&[3.0], 2.0, 1, DeltaTarget::Delta2(0.9), 0.05).unwrap_err();
        assert!(err.to_string().contains("floor"), "{err}");
        // Above the floor it works.
        assert!(
            min_features_for_target(&[3.0], 2.0, 1, DeltaTarget::Delta2(1.4), 0.05).is_ok()
        );
    }

    #[test]
    fn bound_report_collects_all_evaluations() {
        let eigs = [4.0, 1.0, 0.25, 0.01];
        let lambda = 0.5;
        let measured = SpectralDeltas {
            delta1: 0.3,
            delta2: 0.8,
            delta: 0.8,
            lambda,
        };
        let report = BoundReport::evaluate(
            &eigs,
            lambda,
            8,
            64,
            4,
            1.0,
            2.0,
            &measured,
            (0.5, 1.0),
            0.05,
        )
        .unwrap();
        assert!(report.sandwich_prob >= 0.0 && report.sandwich_prob <= 1.0);
        assert!(report.a_trace > 0.0);
        assert!(report.m_min_delta1 > 0 && report.m_min_delta2 > 0);
        assert_relative_eq!(
            report.risk_bound,
            approx_risk_bound(2.0, &measured, 4, 4, 1.0),
            epsilon = 1e-12
        );
        // Precondition violations surface as errors.
        assert!(BoundReport::evaluate(
            &eigs,
            lambda,
            1, // delta_b^2 = 2 > lambda
            64,
            4,
            1.0,
            2.0,
            &measured,
            (0.5, 1.0),
            0.05
        )
        .is_err());
    }

    #[test]
    fn ridge_solution_predicts_fixed_design_training_labels() {
        // End-to-end sanity: alpha from ridge_fit reproduces y as lambda -> 0.
        let kern = GaussianKernel::new(0.5).unwrap();
        let x = gaussian_inputs(10, 2, 8);
        let k = gram_self(&kern, &x).unwrap();
        let y = Vector::from_fn(10, |i, _| (i as f64 * 0.31).sin());
        let alpha = ridge_fit(&k, &y, 1e-10).unwrap();
        let pred = &k * &alpha;
        assert!((pred - &y).norm() <= 1e-4 * y.norm());
    }
}
