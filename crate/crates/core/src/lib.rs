//! Kernel approximation under a training-memory budget.
//!
//! The crate builds full- and low-precision random Fourier features as well as
//! Nystrom features, measures how well the resulting approximate kernel matrix
//! spectrally approximates the exact one, evaluates closed-form risk bounds for
//! fixed-design ridge regression, trains linear models with mini-batch SGD and
//! early stopping, and accounts for every bit of training memory.
//!
//! Modules follow the pipeline:
//!
//! * [`data`] — dataset ingestion (LIBSVM / CSV), normalization, splitting
//! * [`kernel`] — exact Gaussian kernel and dense symmetric eigensolver
//! * [`features`] — RFF, circulant RFF, and Nystrom feature maps
//! * [`quantize`] — stochastic rounding to b-bit codes and bit-packed storage
//! * [`metrics`] — Frobenius/spectral errors, (delta1, delta2) measurement,
//!   rank floor, Spearman rank correlation
//! * [`theory`] — fixed-design risk, risk bounds, feature-count bounds
//! * [`trainer`] — mini-batch SGD with the LR-halving early-stopping protocol
//! * [`memory`] — closed-form training memory accountant

pub mod data;
pub mod error;
pub mod features;
pub mod kernel;
pub mod memory;
pub mod metrics;
pub mod quantize;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};

/// Dense real matrix used throughout the crate (row index = example).
pub type DenseMatrix = nalgebra::DMatrix<f64>;
/// Dense real vector.
pub type Vector = nalgebra::DVector<f64>;
