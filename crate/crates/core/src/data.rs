//! Dataset ingestion, normalization, and deterministic splitting.
//!
//! Supported on-disk formats: LIBSVM text (1-based sparse indices, strictly
//! increasing per line) and header-less CSV with the label in the first
//! column. Continuous columns are standardized with statistics computed on the
//! training split only; columns whose training values are a subset of {0, 1}
//! are treated as binary flags and left untouched.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{DenseMatrix, Error, Result};

/// Labels attached to a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Real-valued regression targets.
    Real(Vec<f64>),
    /// Class indices in `[0, count)`.
    Class { idx: Vec<usize>, count: usize },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Real(v) => v.len(),
            Labels::Class { idx, .. } => idx.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An immutable in-memory dataset: one example per row of `x`.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DenseMatrix,
    labels: Labels,
}

impl Dataset {
    pub fn new(x: DenseMatrix, labels: Labels) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} examples but {} labels",
                x.nrows(),
                labels.len()
            )));
        }
        if let Labels::Class { idx, count } = &labels {
            if let Some(bad) = idx.iter().find(|&&c| c >= *count) {
                return Err(Error::InvalidData(format!(
                    "class index {bad} outside [0, {count})"
                )));
            }
        }
        Ok(Self { x, labels })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.labels, Labels::Class { .. })
    }

    /// Number of model outputs: class count for classification, 1 otherwise.
    pub fn output_dim(&self) -> usize {
        match &self.labels {
            Labels::Real(_) => 1,
            Labels::Class { count, .. } => *count,
        }
    }

    /// Rows at `indices`, in the given order, with their labels.
    pub fn gather(&self, indices: &[usize]) -> Dataset {
        let mut x = DenseMatrix::zeros(indices.len(), self.d());
        for (r, &i) in indices.iter().enumerate() {
            x.row_mut(r).copy_from(&self.x.row(i));
        }
        let labels = match &self.labels {
            Labels::Real(v) => Labels::Real(indices.iter().map(|&i| v[i]).collect()),
            Labels::Class { idx, count } => Labels::Class {
                idx: indices.iter().map(|&i| idx[i]).collect(),
                count: *count,
            },
        };
        Dataset { x, labels }
    }

    /// Deterministic subsample of at most `cap` rows.
    pub fn subsample(&self, cap: usize, seed: u64) -> Dataset {
        if self.n() <= cap {
            return self.clone();
        }
        let mut indices: Vec<usize> = (0..self.n()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        indices.shuffle(&mut rng);
        indices.truncate(cap);
        indices.sort_unstable();
        self.gather(&indices)
    }

    /// Reinterpret real labels as class indices.
    ///
    /// Distinct label values are sorted ascending and mapped to `0..c`; this
    /// matches the common LIBSVM convention of -1/+1 or 1..c labels.
    pub fn into_classification(self) -> Result<Dataset> {
        let values = match self.labels {
            Labels::Class { .. } => return Ok(self),
            Labels::Real(v) => v,
        };
        let mut distinct: Vec<f64> = values.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).expect("labels are finite"));
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::InvalidData(
                "classification task needs at least two distinct label values".into(),
            ));
        }
        let idx = values
            .iter()
            .map(|v| distinct.partition_point(|d| d < v))
            .collect();
        Dataset::new(
            self.x,
            Labels::Class {
                idx,
                count: distinct.len(),
            },
        )
    }
}

/// Per-column normalization statistics computed on a training split.
#[derive(Debug, Clone)]
pub struct NormStats {
    /// Per-column mean (0 for binary columns).
    pub mean: Vec<f64>,
    /// Per-column standard deviation (1 for binary and zero-variance columns).
    pub std: Vec<f64>,
    /// True where the training column values are a subset of {0, 1}.
    pub binary: Vec<bool>,
    /// Training label mean, recorded for regression tasks only.
    pub label_mean: Option<f64>,
}

impl NormStats {
    fn fit(train: &Dataset) -> NormStats {
        let n = train.n() as f64;
        let d = train.d();
        let mut mean = vec![0.0; d];
        let mut std = vec![1.0; d];
        let mut binary = vec![false; d];
        for j in 0..d {
            let col = train.x.column(j);
            binary[j] = col.iter().all(|&v| v == 0.0 || v == 1.0);
            if binary[j] {
                continue;
            }
            let mu = col.sum() / n;
            let var = col.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / n;
            mean[j] = mu;
            // Zero-variance columns are centered but not scaled.
            std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let label_mean = match train.labels() {
            Labels::Real(v) => Some(v.iter().sum::<f64>() / n),
            Labels::Class { .. } => None,
        };
        NormStats {
            mean,
            std,
            binary,
            label_mean,
        }
    }

    /// Apply the recorded transform to a dataset with the same width.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.d() != self.mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "normalization stats cover {} columns, dataset has {}",
                self.mean.len(),
                ds.d()
            )));
        }
        let mut x = ds.x.clone();
        for j in 0..ds.d() {
            if self.binary[j] {
                continue;
            }
            for i in 0..ds.n() {
                x[(i, j)] = (x[(i, j)] - self.mean[j]) / self.std[j];
            }
        }
        let labels = match (ds.labels(), self.label_mean) {
            (Labels::Real(v), Some(mu)) => Labels::Real(v.iter().map(|y| y - mu).collect()),
            (l, _) => l.clone(),
        };
        Dataset::new(x, labels)
    }
}

/// Standardize continuous columns using statistics from `train` only.
///
/// Returns the transformed datasets (`train` first, then `others` in order)
/// together with the statistics, so the same transform can be replayed later.
pub fn normalize(train: &Dataset, others: &[&Dataset]) -> Result<(Vec<Dataset>, NormStats)> {
    for o in others {
        if o.d() != train.d() {
            return Err(Error::DimensionMismatch(format!(
                "all datasets must share the feature dimension: {} vs {}",
                train.d(),
                o.d()
            )));
        }
    }
    let stats = NormStats::fit(train);
    let mut out = Vec::with_capacity(1 + others.len());
    out.push(stats.apply(train)?);
    for o in others {
        out.push(stats.apply(o)?);
    }
    Ok((out, stats))
}

/// Deterministically split off a heldout fraction.
///
/// The heldout size is `fraction * n` rounded half away from zero; splits
/// leaving either part empty are rejected.
pub fn split_heldout(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.n() < 2 {
        return Err(Error::InvalidParam(
            "need at least two examples to split".into(),
        ));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParam(format!(
            "heldout fraction must be in (0, 1), got {fraction}"
        )));
    }
    let heldout_size = (fraction * ds.n() as f64).round() as usize;
    if heldout_size == 0 || heldout_size >= ds.n() {
        return Err(Error::InvalidParam(format!(
            "heldout fraction {fraction} leaves an empty part for n = {}",
            ds.n()
        )));
    }
    let mut indices: Vec<usize> = (0..ds.n()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut heldout_idx: Vec<usize> = indices[..heldout_size].to_vec();
    let mut train_idx: Vec<usize> = indices[heldout_size..].to_vec();
    heldout_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((ds.gather(&train_idx), ds.gather(&heldout_idx)))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_finite(s: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse {what} `{s}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("{what} `{s}` is not finite"),
        });
    }
    Ok(v)
}

/// Load a LIBSVM-format file: `label idx:val ...` with 1-based, strictly
/// increasing indices per line. Absent indices are zero; the width is the
/// maximum index seen anywhere in the file.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = read_to_string(path.as_ref())?;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut d = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a first token");
        labels.push(parse_finite(label_tok, lineno, "label")?);
        let mut row = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected idx:val, got `{tok}`"),
            })?;
            let idx: usize = idx_s.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("cannot parse feature index `{idx_s}`"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "feature indices are 1-based".into(),
                });
            }
            if idx <= prev {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("feature index {idx} does not increase (previous {prev})"),
                });
            }
            prev = idx;
            let val = parse_finite(val_s, lineno, "feature value")?;
            row.push((idx - 1, val));
            d = d.max(idx);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidData("dataset file contains no examples".into()));
    }
    let mut x = DenseMatrix::zeros(rows.len(), d);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            x[(i, j)] = v;
        }
    }
    Dataset::new(x, Labels::Real(labels))
}

/// Load a header-less CSV file with the label in the first column.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = read_to_string(path.as_ref())?;
    let mut labels = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut d: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: lineno,
                msg: "expected a label followed by at least one feature".into(),
            });
        }
        match d {
            None => d = Some(fields.len() - 1),
            Some(w) if w != fields.len() - 1 => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {w} features, found {}", fields.len() - 1),
                })
            }
            _ => {}
        }
        labels.push(parse_finite(fields[0], lineno, "label")?);
        for f in &fields[1..] {
            values.push(parse_finite(f, lineno, "feature value")?);
        }
    }
    let d = d.ok_or_else(|| Error::InvalidData("dataset file contains no examples".into()))?;
    let x = DenseMatrix::from_row_slice(labels.len(), d, &values);
    Dataset::new(x, Labels::Real(labels))
}

/// Small synthetic generators used by the experiment harness.
pub mod synthetic {
    use super::*;
    use rand_distr::StandardNormal;

    /// `n x d` matrix with i.i.d. standard normal entries.
    pub fn gaussian_inputs(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(n, d, |_, _| rand::Rng::sample(&mut rng, StandardNormal))
    }

    /// Two-class task with a radial decision boundary at the median squared
    /// norm, so the classes are balanced and only kernel methods separate them.
    pub fn radial_two_class(n: usize, d: usize, seed: u64) -> Dataset {
        let x = gaussian_inputs(n, d, seed);
        let mut norms: Vec<f64> = (0..n).map(|i| x.row(i).norm_squared()).collect();
        let mut sorted = norms.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[n / 2];
        let idx = norms
            .drain(..)
            .map(|v| usize::from(v > median))
            .collect::<Vec<_>>();
        Dataset::new(x, Labels::Class { idx, count: 2 }).expect("constructed consistently")
    }

    /// Regression task with a smooth nonlinear target plus optional noise.
    pub fn smooth_regression(n: usize, d: usize, noise_sd: f64, seed: u64) -> Dataset {
        let x = gaussian_inputs(n, d, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
        let labels = (0..n)
            .map(|i| {
                let row = x.row(i);
                let s: f64 = row.iter().enumerate().map(|(j, v)| (v * (j as f64 + 1.0) * 0.35).sin()).sum();
                let noise: f64 = rand::Rng::sample(&mut rng, StandardNormal);
                s + noise_sd * noise
            })
            .collect();
        Dataset::new(x, Labels::Real(labels)).expect("constructed consistently")
    }
}
