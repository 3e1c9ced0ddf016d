//! Bit-accurate training-memory accountant.
//!
//! Training memory is the sum of three components: feature generation state,
//! one mini-batch of features, and the model parameters. With data dimension
//! `d`, feature count `m`, mini-batch size `s`, output count `c`, and
//! full-precision numbers at 32 bits:
//!
//! | method          | feature generation | feature mini-batch | parameters |
//! |-----------------|--------------------|--------------------|------------|
//! | Nystrom         | `32 (m d + m^2)`   | `32 m s`           | `32 m c`   |
//! | RFF             | `32 m d`           | `32 m s`           | `32 m c`   |
//! | circulant RFF   | `32 m`             | `32 m s`           | `32 m c`   |
//! | LP-RFF (b bits) | `32 m`             | `b m s`            | `32 m c`   |
//!
//! Input and output mini-batches are excluded. The circulant sign vector
//! costs `m` extra bits that the standard accounting omits; `strict` mode
//! charges them.

use crate::{Error, Result};

/// Kernel approximation method being accounted for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproxMethod {
    Nystrom,
    Rff,
    CirculantRff,
    LpRff,
}

impl ApproxMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ApproxMethod::Nystrom => "nystrom",
            ApproxMethod::Rff => "rff",
            ApproxMethod::CirculantRff => "circulant_rff",
            ApproxMethod::LpRff => "lp_rff",
        }
    }
}

impl std::str::FromStr for ApproxMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nystrom" => Ok(ApproxMethod::Nystrom),
            "rff" => Ok(ApproxMethod::Rff),
            "circulant_rff" => Ok(ApproxMethod::CirculantRff),
            "lp_rff" => Ok(ApproxMethod::LpRff),
            other => Err(Error::InvalidParam(format!(
                "unknown method `{other}` (expected nystrom|rff|circulant_rff|lp_rff)"
            ))),
        }
    }
}

/// Training-memory breakdown in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryFootprint {
    pub feature_gen_bits: u64,
    pub batch_bits: u64,
    pub params_bits: u64,
    pub total_bits: u64,
}

const FULL_PRECISION_BITS: u64 = 32;

fn footprint_impl(
    method: ApproxMethod,
    m: u64,
    d: u64,
    s: u64,
    c: u64,
    b: Option<u8>,
    strict: bool,
) -> Result<MemoryFootprint> {
    if c == 0 {
        return Err(Error::InvalidParam("output count c must be at least 1".into()));
    }
    match (method, b) {
        (ApproxMethod::LpRff, None) => {
            return Err(Error::InvalidParam(
                "lp_rff requires a precision b".into(),
            ))
        }
        (ApproxMethod::LpRff, Some(bits)) if !crate::quantize::ALLOWED_BITS.contains(&bits) => {
            return Err(Error::InvalidParam(format!(
                "lp_rff precision must be one of {:?}, got {bits}",
                crate::quantize::ALLOWED_BITS
            )))
        }
        (ApproxMethod::LpRff, Some(_)) => {}
        (_, Some(bits)) => {
            return Err(Error::InvalidParam(format!(
                "precision b = {bits} only applies to lp_rff"
            )))
        }
        (_, None) => {}
    }
    let fp = FULL_PRECISION_BITS;
    let sign_bits = if strict { m } else { 0 };
    let (feature_gen_bits, batch_bits) = match method {
        ApproxMethod::Nystrom => (fp * (m * d + m * m), fp * m * s),
        ApproxMethod::Rff => (fp * m * d, fp * m * s),
        ApproxMethod::CirculantRff => (fp * m + sign_bits, fp * m * s),
        ApproxMethod::LpRff => (fp * m + sign_bits, b.unwrap() as u64 * m * s),
    };
    let params_bits = fp * m * c;
    Ok(MemoryFootprint {
        feature_gen_bits,
        batch_bits,
        params_bits,
        total_bits: feature_gen_bits + batch_bits + params_bits,
    })
}

/// Training-memory footprint of one configuration, in bits.
///
/// `b` is required exactly for `lp_rff`. Regression and binary classification
/// use `c = 1`.
pub fn footprint(
    method: ApproxMethod,
    m: u64,
    d: u64,
    s: u64,
    c: u64,
    b: Option<u8>,
) -> Result<MemoryFootprint> {
    footprint_impl(method, m, d, s, c, b, false)
}

/// Like [`footprint`] but also charges the `m` sign bits of the circulant
/// projection (circulant RFF and LP-RFF).
pub fn footprint_strict(
    method: ApproxMethod,
    m: u64,
    d: u64,
    s: u64,
    c: u64,
    b: Option<u8>,
) -> Result<MemoryFootprint> {
    footprint_impl(method, m, d, s, c, b, true)
}

/// Default relative-performance tolerance for compression ratios.
pub const DEFAULT_REL_TOLERANCE: f64 = 1e-4;

/// A completed run: its memory footprint and heldout metric (lower is better).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunCost {
    pub footprint_bits: u64,
    pub metric: f64,
}

/// Memory ratio between the smallest baseline run and the smallest
/// low-precision run whose metric is within `rel_tolerance` of the best
/// baseline metric.
pub fn compression_ratio(
    baseline_runs: &[RunCost],
    lp_runs: &[RunCost],
    rel_tolerance: f64,
) -> Result<f64> {
    if baseline_runs.is_empty() || lp_runs.is_empty() {
        return Err(Error::InvalidParam(
            "compression ratio needs at least one run on each side".into(),
        ));
    }
    let best = baseline_runs
        .iter()
        .map(|r| r.metric)
        .fold(f64::INFINITY, f64::min);
    let cutoff = best * (1.0 + rel_tolerance) + f64::EPSILON;
    let min_qualifying = |runs: &[RunCost]| -> Option<u64> {
        runs.iter()
            .filter(|r| r.metric <= cutoff)
            .map(|r| r.footprint_bits)
            .min()
    };
    let base = min_qualifying(baseline_runs).ok_or_else(|| {
        Error::InvalidParam("no baseline run within tolerance of the best baseline".into())
    })?;
    let lp = min_qualifying(lp_runs).ok_or_else(|| {
        Error::InvalidParam(
            "no low-precision run within tolerance of the best baseline".into(),
        )
    })?;
    Ok(base as f64 / lp as f64)
}
