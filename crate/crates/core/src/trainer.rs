//! Mini-batch SGD on (possibly quantized) feature streams.
//!
//! Training follows an LR-halving early-stopping protocol: at the end of each
//! epoch the heldout surrogate loss is compared to the best seen so far. If it
//! is not at least 1% relatively better the learning rate is halved, and if it
//! is outright worse the model reverts to the best snapshot. Training stops
//! once the rate has been halved `max_decays` times, and the best model by
//! heldout loss is returned.
//!
//! When quantization is enabled, mini-batch features are re-quantized with
//! fresh noise each epoch; the heldout pass sees its own noise lane. Double
//! sampling draws independent noise for the forward pass and the gradient.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Labels};
use crate::features::FeatureMap;
use crate::quantize::{
    dequantize, quantize_stochastic, Lane, NystromQuantizer, StreamKey,
};
use crate::{DenseMatrix, Error, Result};

/// Linear model on top of a feature map: `dim x c` parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub theta: DenseMatrix,
}

impl LinearModel {
    pub fn zeros(dim: usize, outputs: usize) -> Self {
        LinearModel {
            theta: DenseMatrix::zeros(dim, outputs),
        }
    }

    pub fn outputs(&self) -> usize {
        self.theta.ncols()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.theta.len() * 8);
        out.extend_from_slice(b"LPMD");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.theta.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.theta.ncols() as u32).to_le_bytes());
        for i in 0..self.theta.nrows() {
            for j in 0..self.theta.ncols() {
                out.extend_from_slice(&self.theta[(i, j)].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 16 || &buf[..4] != b"LPMD" {
            return Err(Error::InvalidData("not a model blob".into()));
        }
        let rows = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
        if buf.len() != 16 + rows * cols * 8 {
            return Err(Error::InvalidData("model blob truncated".into()));
        }
        let vals: Vec<f64> = buf[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(LinearModel {
            theta: DenseMatrix::from_row_slice(rows, cols, &vals),
        })
    }
}

/// Surrogate training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    /// Half-scaled squared error; gradient `Z^T (Z theta - y) / s`.
    Mse,
    /// Softmax cross-entropy over class logits.
    SoftmaxCrossEntropy,
}

/// Feature quantization applied during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantizationConfig {
    None,
    /// Stochastic rounding on the fixed RFF grid.
    Rff { b: u8, double_sampling: bool },
    /// Per-feature uniform grids fit on the training features (Nystrom).
    PerFeature { b: u8 },
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub batch_size: usize,
    pub max_decays: usize,
    /// Relative heldout improvement below which the LR is halved.
    pub improvement_threshold: f64,
    pub loss: Loss,
    pub quantization: QuantizationConfig,
    /// Optional L2 penalty weight (scaled by 1/n_train in the update).
    pub l2_reg: f64,
    /// Safety cap on epochs in case the decay protocol never fires.
    pub max_epochs: usize,
}

impl TrainConfig {
    pub fn new(initial_lr: f64, loss: Loss) -> Self {
        TrainConfig {
            initial_lr,
            batch_size: 250,
            max_decays: 10,
            improvement_threshold: 0.01,
            loss,
            quantization: QuantizationConfig::None,
            l2_reg: 0.0,
            max_epochs: 500,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub heldout_loss: f64,
    pub heldout_metric: f64,
    pub lr: f64,
    pub decays: usize,
    pub reverted: bool,
}

/// Per-epoch training history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn final_epoch(&self) -> usize {
        self.epochs.last().map(|r| r.epoch).unwrap_or(0)
    }

    pub fn decay_count(&self) -> usize {
        self.epochs.last().map(|r| r.decays).unwrap_or(0)
    }

    /// One JSON object per line, one line per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.epochs {
            out.push_str(&serde_json::to_string(rec).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<TrainLog> {
        let mut epochs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: EpochRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            epochs.push(rec);
        }
        Ok(TrainLog { epochs })
    }
}

/// Decision taken by the early-stopping protocol after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    /// Heldout loss improved by more than the threshold.
    pub improved: bool,
    /// Learning rate should be halved.
    pub decayed: bool,
    /// Model should revert to the best snapshot.
    pub revert: bool,
    /// Loss is a new best (snapshot the model).
    pub new_best: bool,
    /// Decay budget exhausted; stop training.
    pub stop: bool,
}

/// LR-halving early-stopping state machine, driven by heldout losses.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    best: f64,
    decays: usize,
    max_decays: usize,
    threshold: f64,
}

impl EarlyStopping {
    pub fn new(threshold: f64, max_decays: usize) -> Self {
        EarlyStopping {
            best: f64::INFINITY,
            decays: 0,
            max_decays,
            threshold,
        }
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feed the epoch-end heldout loss. Ties and sub-threshold improvements
    /// trigger a decay; anything worse than the best also triggers a revert.
    pub fn observe(&mut self, loss: f64) -> StopDecision {
        let improved = loss < (1.0 - self.threshold) * self.best;
        let new_best = loss < self.best;
        let revert = loss > self.best;
        if new_best {
            self.best = loss;
        }
        let decayed = !improved;
        if decayed {
            self.decays += 1;
        }
        StopDecision {
            improved,
            decayed,
            revert,
            new_best,
            stop: self.decays >= self.max_decays,
        }
    }
}

/// Targets for one batch: value matrix plus class indices when applicable.
#[derive(Debug, Clone)]
pub struct BatchTargets {
    /// `s x c`: label values (regression) or one-hot rows (classification).
    pub y: DenseMatrix,
    pub class_idx: Option<Vec<usize>>,
}

impl BatchTargets {
    pub fn from_labels(labels: &Labels) -> BatchTargets {
        match labels {
            Labels::Real(v) => BatchTargets {
                y: DenseMatrix::from_fn(v.len(), 1, |i, _| v[i]),
                class_idx: None,
            },
            Labels::Class { idx, count } => {
                let mut y = DenseMatrix::zeros(idx.len(), *count);
                for (i, &c) in idx.iter().enumerate() {
                    y[(i, c)] = 1.0;
                }
                BatchTargets {
                    y,
                    class_idx: Some(idx.clone()),
                }
            }
        }
    }
}

fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut p = logits.clone();
    for i in 0..p.nrows() {
        let mut row_max = f64::NEG_INFINITY;
        for j in 0..p.ncols() {
            row_max = row_max.max(p[(i, j)]);
        }
        let mut sum = 0.0;
        for j in 0..p.ncols() {
            let e = (p[(i, j)] - row_max).exp();
            p[(i, j)] = e;
            sum += e;
        }
        for j in 0..p.ncols() {
            p[(i, j)] /= sum;
        }
    }
    p
}

/// Training objective value on one batch (the quantity `gradient` differentiates).
pub fn loss_value(
    model: &LinearModel,
    features: &DenseMatrix,
    targets: &BatchTargets,
    loss: Loss,
) -> f64 {
    let s = features.nrows() as f64;
    let logits = features * &model.theta;
    match loss {
        Loss::Mse => {
            let r = &logits - &targets.y;
            r.iter().map(|v| v * v).sum::<f64>() / (2.0 * s)
        }
        Loss::SoftmaxCrossEntropy => {
            let idx = targets
                .class_idx
                .as_ref()
                .expect("cross-entropy needs class targets");
            let mut total = 0.0;
            for i in 0..logits.nrows() {
                let mut row_max = f64::NEG_INFINITY;
                for j in 0..logits.ncols() {
                    row_max = row_max.max(logits[(i, j)]);
                }
                let log_sum: f64 = (0..logits.ncols())
                    .map(|j| (logits[(i, j)] - row_max).exp())
                    .sum::<f64>()
                    .ln();
                total -= logits[(i, idx[i])] - row_max - log_sum;
            }
            total / s
        }
    }
}

fn gradient_pair(
    model: &LinearModel,
    forward: &DenseMatrix,
    backward: &DenseMatrix,
    targets: &BatchTargets,
    loss: Loss,
) -> DenseMatrix {
    let s = forward.nrows() as f64;
    let logits = forward * &model.theta;
    let residual = match loss {
        Loss::Mse => &logits - &targets.y,
        Loss::SoftmaxCrossEntropy => softmax_rows(&logits) - &targets.y,
    };
    backward.transpose() * residual / s
}

/// Mean gradient of the configured loss over one batch.
pub fn gradient(
    model: &LinearModel,
    features: &DenseMatrix,
    targets: &BatchTargets,
    loss: Loss,
) -> DenseMatrix {
    gradient_pair(model, features, features, targets, loss)
}

/// Feature source bundling a map with its quantization mode; pure given the
/// seed and the (epoch, batch, lane) stream position.
pub struct FeaturePipeline<'a> {
    map: &'a FeatureMap,
    seed: u64,
    rff_bits: Option<(u8, bool)>,
    per_feature: Option<NystromQuantizer>,
}

impl<'a> FeaturePipeline<'a> {
    /// Build a pipeline. Per-feature quantization scans the training set once
    /// to record feature ranges.
    pub fn new(
        map: &'a FeatureMap,
        quantization: &QuantizationConfig,
        train: &Dataset,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let (rff_bits, per_feature) = match quantization {
            QuantizationConfig::None => (None, None),
            QuantizationConfig::Rff { b, double_sampling } => {
                if !map.is_rff_type() {
                    return Err(Error::InvalidParam(
                        "RFF-grid quantization requires an RFF-type map; use per-feature \
                         quantization for Nystrom features"
                            .into(),
                    ));
                }
                (Some((*b, *double_sampling)), None)
            }
            QuantizationConfig::PerFeature { b } => {
                if !crate::quantize::ALLOWED_BITS.contains(b) {
                    return Err(Error::InvalidParam(format!(
                        "precision must be one of {:?}, got {b}",
                        crate::quantize::ALLOWED_BITS
                    )));
                }
                // One pass over the training set to record feature ranges.
                let mut lo: Vec<f64> = Vec::new();
                let mut hi: Vec<f64> = Vec::new();
                let n = train.n();
                let mut start = 0;
                while start < n {
                    let end = (start + batch_size.max(1)).min(n);
                    let idx: Vec<usize> = (start..end).collect();
                    let z = map.apply(train.gather(&idx).x())?;
                    if lo.is_empty() {
                        lo = vec![f64::INFINITY; z.ncols()];
                        hi = vec![f64::NEG_INFINITY; z.ncols()];
                    }
                    for i in 0..z.nrows() {
                        for j in 0..z.ncols() {
                            lo[j] = lo[j].min(z[(i, j)]);
                            hi[j] = hi[j].max(z[(i, j)]);
                        }
                    }
                    start = end;
                }
                (None, Some(NystromQuantizer { lo, hi, b: *b }))
            }
        };
        Ok(FeaturePipeline {
            map,
            seed,
            rff_bits,
            per_feature,
        })
    }

    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    /// Features for one batch on one stream lane.
    pub fn features(&self, x: &DenseMatrix, key: StreamKey) -> Result<DenseMatrix> {
        let z = self.map.apply(x)?;
        match (&self.rff_bits, &self.per_feature) {
            (Some((b, _)), _) => {
                let packed = quantize_stochastic(&z, *b, self.seed, &key)?;
                Ok(dequantize(&packed))
            }
            (None, Some(q)) => {
                let packed = q.quantize(&z, self.seed, &key)?;
                q.dequantize(&packed)
            }
            (None, None) => Ok(z),
        }
    }

    /// Forward features plus, under double sampling, an independently
    /// quantized copy for the gradient.
    fn forward_backward(
        &self,
        x: &DenseMatrix,
        key: StreamKey,
    ) -> Result<(DenseMatrix, Option<DenseMatrix>)> {
        let fwd = self.features(x, key.with_lane(Lane::Forward))?;
        match self.rff_bits {
            Some((_, true)) => {
                let bwd = self.features(x, key.with_lane(Lane::Backward))?;
                Ok((fwd, Some(bwd)))
            }
            _ => Ok((fwd, None)),
        }
    }
}

/// Task metric and surrogate loss of a model over a dataset.
///
/// The task metric is MSE for regression and the argmax misclassification
/// fraction for classification; the surrogate is MSE or mean cross-entropy.
/// Quantization (when configured in the pipeline) runs on the `Eval` lane of
/// the given epoch, batch by batch.
pub fn evaluate(
    model: &LinearModel,
    pipeline: &FeaturePipeline,
    ds: &Dataset,
    batch_size: usize,
    epoch: u32,
) -> Result<(f64, f64)> {
    let n = ds.n();
    if n == 0 {
        return Err(Error::InvalidData("cannot evaluate on an empty dataset".into()));
    }
    let mut sq_err = 0.0;
    let mut errors = 0usize;
    let mut ce = 0.0;
    let mut start = 0;
    let mut batch = 0u32;
    while start < n {
        let end = (start + batch_size.max(1)).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let part = ds.gather(&idx);
        let key = StreamKey::new(epoch, batch).with_lane(Lane::Eval);
        let z = pipeline.features(part.x(), key)?;
        let logits = &z * &model.theta;
        match part.labels() {
            Labels::Real(y) => {
                for (i, yi) in y.iter().enumerate() {
                    let e = logits[(i, 0)] - yi;
                    sq_err += e * e;
                }
            }
            Labels::Class { idx: classes, .. } => {
                let p = softmax_rows(&logits);
                for (i, &c) in classes.iter().enumerate() {
                    let mut best = 0;
                    for j in 1..logits.ncols() {
                        if logits[(i, j)] > logits[(i, best)] {
                            best = j;
                        }
                    }
                    if best != c {
                        errors += 1;
                    }
                    ce -= p[(i, c)].max(1e-300).ln();
                }
            }
        }
        start = end;
        batch += 1;
    }
    let nf = n as f64;
    match ds.labels() {
        Labels::Real(_) => Ok((sq_err / nf, sq_err / nf)),
        Labels::Class { .. } => Ok((errors as f64 / nf, ce / nf)),
    }
}

fn shuffle_rng(seed: u64, epoch: u32) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mixed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(epoch as u64) ^ 0x53_48_55_46_46_4C_45_00u64;
    rand_chacha::ChaCha8Rng::seed_from_u64(mixed)
}

fn check_task_loss(train: &Dataset, loss: Loss) -> Result<()> {
    match (train.labels(), loss) {
        (Labels::Real(_), Loss::Mse) => Ok(()),
        (Labels::Class { .. }, Loss::SoftmaxCrossEntropy) => Ok(()),
        (Labels::Real(_), Loss::SoftmaxCrossEntropy) => Err(Error::InvalidParam(
            "cross-entropy loss requires classification labels".into(),
        )),
        (Labels::Class { .. }, Loss::Mse) => Err(Error::InvalidParam(
            "squared-error loss requires regression labels".into(),
        )),
    }
}

/// One shuffled epoch of mini-batch SGD updates, in place.
pub fn sgd_epoch(
    model: &mut LinearModel,
    pipeline: &FeaturePipeline,
    train: &Dataset,
    config: &TrainConfig,
    lr: f64,
    seed: u64,
    epoch: u32,
) -> Result<()> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..train.n()).collect();
    order.shuffle(&mut shuffle_rng(seed, epoch));
    let n_train = train.n() as f64;
    for (bi, chunk) in order.chunks(config.batch_size.max(1)).enumerate() {
        let part = train.gather(chunk);
        let key = StreamKey::new(epoch, bi as u32);
        let (fwd, bwd) = pipeline.forward_backward(part.x(), key)?;
        let targets = BatchTargets::from_labels(part.labels());
        let mut grad = gradient_pair(
            model,
            &fwd,
            bwd.as_ref().unwrap_or(&fwd),
            &targets,
            config.loss,
        );
        if config.l2_reg > 0.0 {
            grad += &model.theta * (config.l2_reg / n_train);
        }
        model.theta -= grad * lr;
    }
    Ok(())
}

/// Train a zero-initialized linear model with mini-batch SGD and the
/// LR-halving early-stopping protocol; returns the best model by heldout
/// surrogate loss together with the per-epoch log.
pub fn train_sgd(
    map: &FeatureMap,
    train: &Dataset,
    heldout: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<(LinearModel, TrainLog)> {
    if train.d() != heldout.d() {
        return Err(Error::DimensionMismatch(format!(
            "train and heldout widths differ: {} vs {}",
            train.d(),
            heldout.d()
        )));
    }
    check_task_loss(train, config.loss)?;
    check_task_loss(heldout, config.loss)?;
    let pipeline = FeaturePipeline::new(map, &config.quantization, train, config.batch_size, seed)?;
    let mut model = LinearModel::zeros(pipeline.dim(), train.output_dim());
    let mut best_model = model.clone();
    let mut stopper = EarlyStopping::new(config.improvement_threshold, config.max_decays);
    let mut lr = config.initial_lr;
    let mut log = TrainLog::default();

    for epoch in 1..=config.max_epochs {
        sgd_epoch(&mut model, &pipeline, train, config, lr, seed, epoch as u32)?;
        let (metric, loss) = evaluate(&model, &pipeline, heldout, config.batch_size, epoch as u32)?;
        if !loss.is_finite() || model.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch, lr });
        }
        let decision = stopper.observe(loss);
        if decision.new_best {
            best_model = model.clone();
        }
        if decision.revert {
            model = best_model.clone();
        }
        log.epochs.push(EpochRecord {
            epoch,
            heldout_loss: loss,
            heldout_metric: metric,
            lr,
            decays: stopper.decays(),
            reverted: decision.revert,
        });
        if decision.decayed {
            lr *= 0.5;
        }
        if decision.stop {
            break;
        }
    }
    Ok((best_model, log))
}
