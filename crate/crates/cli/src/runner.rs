//! Dataset setup, cell enumeration, and the subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lprff_core::data::{self, synthetic, Dataset, Labels};
use lprff_core::features::{
    feature_gram, sample_circulant_rff, sample_nystrom, sample_rff, FeatureMap, Parametrization,
};
use lprff_core::kernel::{gram_self, sym_eig, GaussianKernel, SymEig};
use lprff_core::memory::{footprint, footprint_strict, ApproxMethod, MemoryFootprint};
use lprff_core::metrics::{delta1_rank_floor, error_norms, spearman_rho, DeltaSweep};
use lprff_core::quantize::{delta_b_sq, dequantize, quantize_stochastic, StreamKey};
use lprff_core::theory::{
    approx_risk_bound, min_features_for_target, risk_from_eig, sandwich_probability, DeltaTarget,
};
use lprff_core::trainer::{
    evaluate, train_sgd, FeaturePipeline, Loss, QuantizationConfig, TrainConfig,
};
use lprff_core::{DenseMatrix, Vector};

use crate::config::Config;
use crate::CliError;

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

// --- data setup ---------------------------------------------------------------

struct Workbench {
    label: String,
    train: Dataset,
    heldout: Dataset,
    test: Option<Dataset>,
    kernel: GaussianKernel,
    classification: bool,
}

impl Workbench {
    /// Output-count convention of the accounting model: regression and binary
    /// classification count as one output.
    fn c_mem(&self) -> u64 {
        match self.train.labels() {
            Labels::Real(_) => 1,
            Labels::Class { count, .. } if *count == 2 => 1,
            Labels::Class { count, .. } => *count as u64,
        }
    }

    fn loss(&self, requested: &str) -> Result<Loss, CliError> {
        match (requested, self.classification) {
            ("auto", false) | ("mse", false) => Ok(Loss::Mse),
            ("auto", true) | ("softmax", true) => Ok(Loss::SoftmaxCrossEntropy),
            ("mse", true) => Err(CliError::Config(
                "train.loss = mse is incompatible with a classification task".into(),
            )),
            ("softmax", false) => Err(CliError::Config(
                "train.loss = softmax is incompatible with a regression task".into(),
            )),
            _ => Err(CliError::Config(format!("unknown loss `{requested}`"))),
        }
    }
}

fn load_file(path: &str, format: Option<&str>) -> Result<Dataset, CliError> {
    let fmt = match format {
        Some(f) => f.to_string(),
        None => {
            if path.ends_with(".csv") {
                "csv".to_string()
            } else {
                "libsvm".to_string()
            }
        }
    };
    let load = match fmt.as_str() {
        "csv" => data::load_csv,
        "libsvm" => data::load_libsvm,
        other => return Err(CliError::Config(format!("unknown dataset format `{other}`"))),
    };
    load(path).map_err(config_err)
}

/// Map raw real labels onto class indices using the training file's sorted
/// distinct values, so train and test agree on the encoding.
fn classify_with_dictionary(ds: Dataset, dict: &[f64]) -> Result<Dataset, CliError> {
    let values = match ds.labels() {
        Labels::Class { .. } => return Ok(ds),
        Labels::Real(v) => v.clone(),
    };
    let idx = values
        .iter()
        .map(|v| {
            dict.binary_search_by(|d| d.partial_cmp(v).unwrap())
                .map_err(|_| CliError::Config(format!("label value {v} absent from the training set")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::new(
        ds.x().clone(),
        Labels::Class {
            idx,
            count: dict.len(),
        },
    )
    .map_err(config_err)
}

fn label_dictionary(ds: &Dataset) -> Result<Vec<f64>, CliError> {
    match ds.labels() {
        Labels::Class { .. } => Ok(Vec::new()),
        Labels::Real(v) => {
            let mut dict = v.clone();
            dict.sort_by(|a, b| a.partial_cmp(b).unwrap());
            dict.dedup();
            if dict.len() < 2 {
                return Err(CliError::Config(
                    "classification task needs at least two distinct labels".into(),
                ));
            }
            Ok(dict)
        }
    }
}

fn setup_data(config: &Config) -> Result<Workbench, CliError> {
    let kernel = GaussianKernel::new(config.kernel.gamma).map_err(config_err)?;
    let classification = config.dataset.task == "classification";

    let (label, raw, test_raw) = if let Some(sy) = &config.dataset.synthetic {
        let ds = match sy.kind.as_str() {
            "radial-classification" => {
                if !classification {
                    return Err(CliError::Config(
                        "radial-classification generates class labels; set task = classification"
                            .into(),
                    ));
                }
                synthetic::radial_two_class(sy.n, sy.d, sy.seed)
            }
            "smooth-regression" => {
                if classification {
                    return Err(CliError::Config(
                        "smooth-regression generates real labels; set task = regression".into(),
                    ));
                }
                synthetic::smooth_regression(sy.n, sy.d, sy.noise_sd, sy.seed)
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown synthetic dataset kind `{other}`"
                )))
            }
        };
        (format!("synthetic:{}", sy.kind), ds, None)
    } else {
        let path = config.dataset.train.as_ref().expect("validated");
        let mut ds = load_file(path, config.dataset.format.as_deref())?;
        let mut test = match &config.dataset.test {
            Some(p) => Some(load_file(p, config.dataset.format.as_deref())?),
            None => None,
        };
        if classification {
            let dict = label_dictionary(&ds)?;
            if !dict.is_empty() {
                ds = classify_with_dictionary(ds, &dict)?;
                test = test.map(|t| classify_with_dictionary(t, &dict)).transpose()?;
            }
        }
        (path.clone(), ds, test)
    };

    let (train, heldout) = data::split_heldout(
        &raw,
        config.dataset.heldout_fraction,
        config.dataset.split_seed,
    )
    .map_err(config_err)?;

    let (train, heldout, test) = if config.dataset.normalize {
        let mut refs: Vec<&Dataset> = vec![&heldout];
        if let Some(t) = &test_raw {
            refs.push(t);
        }
        let (mut out, _) = data::normalize(&train, &refs).map_err(config_err)?;
        let test = if test_raw.is_some() { Some(out.remove(2)) } else { None };
        let heldout = out.remove(1);
        let train = out.remove(0);
        (train, heldout, test)
    } else {
        (train, heldout, test_raw)
    };

    Ok(Workbench {
        label,
        train,
        heldout,
        test,
        kernel,
        classification,
    })
}

// --- cells --------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct Cell {
    method: ApproxMethod,
    m: usize,
    b: Option<u8>,
    seed: u64,
}

impl Cell {
    fn id(&self) -> String {
        format!(
            "{}_m{}_{}_seed{}",
            self.method.as_str(),
            self.m,
            self.b.map_or("fp".to_string(), |b| format!("b{b}")),
            self.seed
        )
    }

    fn b_field(&self) -> String {
        self.b.map_or("fp".to_string(), |b| b.to_string())
    }
}

fn enumerate_cells(config: &Config) -> Result<Vec<Cell>, CliError> {
    let mut cells = Vec::new();
    for name in &config.experiment.methods {
        let method: ApproxMethod = name.parse().map_err(config_err)?;
        let bs: Vec<Option<u8>> = if method == ApproxMethod::LpRff {
            config.experiment.b_grid.iter().map(|b| Some(*b)).collect()
        } else {
            vec![None]
        };
        for &m in &config.experiment.m_grid {
            for &b in &bs {
                for &seed in &config.experiment.seeds {
                    cells.push(Cell { method, m, b, seed });
                }
            }
        }
    }
    Ok(cells)
}

fn sample_map(
    cell: &Cell,
    kernel: &GaussianKernel,
    train: &Dataset,
) -> Result<FeatureMap, CliError> {
    match cell.method {
        ApproxMethod::Rff => sample_rff(kernel, cell.m, train.d(), cell.seed, Parametrization::Cos)
            .map(FeatureMap::Rff)
            .map_err(runtime),
        ApproxMethod::CirculantRff | ApproxMethod::LpRff => {
            sample_circulant_rff(kernel, cell.m, train.d(), cell.seed)
                .map(FeatureMap::CirculantRff)
                .map_err(runtime)
        }
        ApproxMethod::Nystrom => sample_nystrom(train.x(), kernel, cell.m, cell.seed, None)
            .map(FeatureMap::Nystrom)
            .map_err(runtime),
    }
}

fn cell_footprint(cell: &Cell, d: u64, s: u64, c: u64) -> Result<MemoryFootprint, CliError> {
    footprint(cell.method, cell.m as u64, d, s, c, cell.b).map_err(runtime)
}

// --- output helpers -------------------------------------------------------------

struct CsvFile {
    file: fs::File,
}

impl CsvFile {
    fn create(path: &Path, header: &[&str]) -> Result<CsvFile, CliError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Config(format!("cannot create {}: {e}", parent.display())))?;
        }
        let mut file = fs::File::create(path)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))?;
        writeln!(file, "{}", header.join(",")).map_err(runtime)?;
        Ok(CsvFile { file })
    }

    fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        writeln!(self.file, "{}", fields.join(",")).map_err(runtime)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| runtime(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| runtime(format!("cannot rename to {}: {e}", path.display())))
}

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

// --- lambda grids ---------------------------------------------------------------

/// Regularization grid: explicit values, or percentiles of the descending
/// eigenvalue list (percentile 0 = largest eigenvalue). Non-positive
/// percentile eigenvalues are clamped to a tiny positive multiple of the top.
fn lambda_grid(config: &Config, eigs: &[f64]) -> Vec<(f64, String)> {
    if !config.metrics.lambdas.is_empty() {
        return config
            .metrics
            .lambdas
            .iter()
            .map(|&l| (l, String::new()))
            .collect();
    }
    let n = eigs.len();
    let top = eigs[0].max(1e-300);
    config
        .metrics
        .lambda_percentiles
        .iter()
        .map(|&p| {
            let idx = ((p / 100.0) * (n - 1) as f64).round().max(0.0) as usize;
            let raw = eigs[idx.min(n - 1)];
            let lambda = if raw > 1e-12 * top { raw } else { 1e-12 * top };
            (lambda, format!("{p}"))
        })
        .collect()
}

// --- feature matrices for measurement --------------------------------------------

/// Features of `x` under the cell's method, quantized for lp cells.
fn measured_features(
    cell: &Cell,
    map: &FeatureMap,
    x: &DenseMatrix,
) -> Result<DenseMatrix, CliError> {
    let z = map.apply(x).map_err(runtime)?;
    match cell.b {
        Some(b) => {
            let packed =
                quantize_stochastic(&z, b, cell.seed, &StreamKey::new(0, 0)).map_err(runtime)?;
            Ok(dequantize(&packed))
        }
        None => Ok(z),
    }
}

fn nominal_rank(cell: &Cell, map: &FeatureMap, n: usize) -> usize {
    match map {
        FeatureMap::Nystrom(m) => m.rank(),
        _ => cell.m.min(n),
    }
}

// --- train ----------------------------------------------------------------------

struct TrainOutcome {
    lr: f64,
    epochs: usize,
    decays: usize,
    heldout_loss: f64,
    heldout_metric: f64,
    test_metric: Option<f64>,
}

fn train_cell(
    cell: &Cell,
    config: &Config,
    bench: &Workbench,
    lr: f64,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, CliError> {
    let map = sample_map(cell, &bench.kernel, &bench.train)?;
    let loss = bench.loss(&config.train.loss)?;
    let mut tc = TrainConfig::new(lr, loss);
    tc.batch_size = config.train.batch_size;
    tc.max_decays = config.train.max_decays;
    tc.improvement_threshold = config.train.improvement_threshold;
    tc.l2_reg = config.train.l2_reg;
    tc.max_epochs = config.train.max_epochs;
    if let Some(b) = cell.b {
        tc.quantization = QuantizationConfig::Rff {
            b,
            double_sampling: config.train.double_sampling,
        };
    }
    let (model, log) =
        train_sgd(&map, &bench.train, &bench.heldout, &tc, cell.seed).map_err(runtime)?;
    let best = log
        .epochs
        .iter()
        .min_by(|a, b| a.heldout_loss.partial_cmp(&b.heldout_loss).unwrap())
        .ok_or_else(|| CliError::Runtime("training produced no epochs".into()))?;

    let test_metric = match &bench.test {
        Some(test) => {
            let pipeline =
                FeaturePipeline::new(&map, &tc.quantization, &bench.train, tc.batch_size, cell.seed)
                    .map_err(runtime)?;
            let (metric, _) =
                evaluate(&model, &pipeline, test, tc.batch_size, 0).map_err(runtime)?;
            Some(metric)
        }
        None => None,
    };

    if let Some(dir) = out_dir {
        let cell_dir = dir.join("runs").join(cell.id());
        fs::create_dir_all(&cell_dir)
            .map_err(|e| runtime(format!("cannot create {}: {e}", cell_dir.display())))?;
        write_atomic(&cell_dir.join("log.jsonl"), log.to_jsonl().as_bytes())?;
        write_atomic(&cell_dir.join("model.bin"), &model.to_bytes())?;
        if config.train.save_maps {
            write_atomic(&cell_dir.join("map.bin"), &map.to_bytes(cell.seed))?;
        }
    }

    Ok(TrainOutcome {
        lr,
        epochs: log.final_epoch(),
        decays: log.decay_count(),
        heldout_loss: best.heldout_loss,
        heldout_metric: best.heldout_metric,
        test_metric,
    })
}

/// Pick the initial learning rate: a single-entry grid is used as-is,
/// otherwise each candidate is tried on the tuning configuration (landmark
/// method at the largest feature count when available).
fn select_lr(config: &Config, bench: &Workbench) -> Result<f64, CliError> {
    if config.train.lr_grid.len() == 1 {
        return Ok(config.train.lr_grid[0]);
    }
    let methods = &config.experiment.methods;
    let method: ApproxMethod = if methods.iter().any(|m| m == "nystrom") {
        ApproxMethod::Nystrom
    } else {
        methods[0].parse().map_err(config_err)?
    };
    let mut m = *config.experiment.m_grid.iter().max().unwrap();
    if method == ApproxMethod::Nystrom {
        m = m.min(bench.train.n());
    }
    let b = if method == ApproxMethod::LpRff {
        Some(*config.experiment.b_grid.iter().max().unwrap())
    } else {
        None
    };
    let cell = Cell {
        method,
        m,
        b,
        seed: config.experiment.seeds[0],
    };
    let mut best = (f64::INFINITY, config.train.lr_grid[0]);
    for &lr in &config.train.lr_grid {
        match train_cell(&cell, config, bench, lr, None) {
            Ok(outcome) if outcome.heldout_loss < best.0 => best = (outcome.heldout_loss, lr),
            Ok(_) => {}
            // A diverging candidate just loses the tuning round.
            Err(CliError::Runtime(_)) => {}
            Err(e) => return Err(e),
        }
    }
    println!("selected initial learning rate {} on {}", best.1, cell.id());
    Ok(best.1)
}

const TRAIN_HEADER: &[&str] = &[
    "dataset",
    "task",
    "method",
    "m",
    "b",
    "seed",
    "lr",
    "epochs",
    "decays",
    "heldout_loss",
    "heldout_metric",
    "test_metric",
    "feature_gen_bits",
    "batch_bits",
    "params_bits",
    "total_bits",
    "version",
    "config_hash",
    "timestamp",
];

fn train_row(
    cell: &Cell,
    bench: &Workbench,
    outcome: &TrainOutcome,
    fp: &MemoryFootprint,
    hash: &str,
) -> Vec<String> {
    vec![
        bench.label.clone(),
        if bench.classification {
            "classification".into()
        } else {
            "regression".into()
        },
        cell.method.as_str().into(),
        cell.m.to_string(),
        cell.b_field(),
        cell.seed.to_string(),
        fmt_f(outcome.lr),
        outcome.epochs.to_string(),
        outcome.decays.to_string(),
        fmt_f(outcome.heldout_loss),
        fmt_f(outcome.heldout_metric),
        outcome.test_metric.map(fmt_f).unwrap_or_default(),
        fp.feature_gen_bits.to_string(),
        fp.batch_bits.to_string(),
        fp.params_bits.to_string(),
        fp.total_bits.to_string(),
        VERSION.into(),
        hash.into(),
        timestamp().to_string(),
    ]
}

pub fn run_train(config: &Config, hash: &str) -> Result<(), CliError> {
    let bench = setup_data(config)?;
    let out_dir = PathBuf::from(&config.experiment.output_dir);
    let cells = enumerate_cells(config)?;
    let lr = select_lr(config, &bench)?;
    let mut csv = CsvFile::create(&out_dir.join("results.csv"), TRAIN_HEADER)?;
    let s = config.train.batch_size as u64;
    let c = bench.c_mem();
    for cell in &cells {
        let fp = cell_footprint(cell, bench.train.d() as u64, s, c)?;
        let outcome = train_cell(cell, config, &bench, lr, Some(&out_dir))?;
        csv.row(&train_row(cell, &bench, &outcome, &fp, hash))?;
        println!(
            "{}: heldout metric {:.6}, {} epochs, {} bits",
            cell.id(),
            outcome.heldout_metric,
            outcome.epochs,
            fp.total_bits
        );
    }
    Ok(())
}

// --- metrics ----------------------------------------------------------------------

const METRICS_HEADER: &[&str] = &[
    "method",
    "m",
    "b",
    "seed",
    "lambda",
    "lambda_percentile",
    "n_eval",
    "frob_sq",
    "spectral",
    "delta1",
    "delta2",
    "delta",
    "inv_one_minus_delta1",
    "max_inv_delta2",
    "rank_floor",
    "db2_over_lambda",
    "version",
    "config_hash",
    "timestamp",
];

fn inv_one_minus(d1: f64) -> f64 {
    if d1 >= 1.0 {
        f64::INFINITY
    } else {
        1.0 / (1.0 - d1)
    }
}

struct EvalKernel {
    eval: Dataset,
    k: DenseMatrix,
    keig: SymEig,
}

fn eval_kernel(config: &Config, bench: &Workbench, cap: usize) -> Result<EvalKernel, CliError> {
    let eval = bench
        .heldout
        .subsample(cap, config.experiment.subsample_seed);
    let k = gram_self(&bench.kernel, eval.x()).map_err(runtime)?;
    let keig = sym_eig(&k).map_err(runtime)?;
    Ok(EvalKernel { eval, k, keig })
}

pub fn run_metrics(config: &Config, hash: &str) -> Result<(), CliError> {
    let bench = setup_data(config)?;
    let out_dir = PathBuf::from(&config.experiment.output_dir);
    let cells = enumerate_cells(config)?;
    let ek = eval_kernel(config, &bench, config.experiment.heldout_subsample_cap)?;
    let lambdas = lambda_grid(config, &ek.keig.values);
    let mut csv = CsvFile::create(&out_dir.join("metrics.csv"), METRICS_HEADER)?;
    for cell in &cells {
        let map = sample_map(cell, &bench.kernel, &bench.train)?;
        let z = measured_features(cell, &map, ek.eval.x())?;
        let kt = feature_gram(&z);
        let norms = error_norms(&ek.k, &kt).map_err(runtime)?;
        let sweep = DeltaSweep::new(&ek.keig, &kt).map_err(runtime)?;
        let rank = nominal_rank(cell, &map, ek.eval.n());
        for (lambda, percentile) in &lambdas {
            let deltas = sweep.deltas(*lambda).map_err(runtime)?;
            let floor = delta1_rank_floor(&ek.keig.values, rank, *lambda);
            let db2_col = match cell.b {
                Some(b) => fmt_f(delta_b_sq(b).map_err(runtime)? / lambda),
                None => String::new(),
            };
            csv.row(&[
                cell.method.as_str().into(),
                cell.m.to_string(),
                cell.b_field(),
                cell.seed.to_string(),
                fmt_f(*lambda),
                percentile.clone(),
                ek.eval.n().to_string(),
                fmt_f(norms.frob_sq),
                fmt_f(norms.spectral),
                fmt_f(deltas.delta1),
                fmt_f(deltas.delta2),
                fmt_f(deltas.delta),
                fmt_f(inv_one_minus(deltas.delta1)),
                fmt_f(inv_one_minus(deltas.delta1).max(deltas.delta2)),
                fmt_f(floor),
                db2_col,
                VERSION.into(),
                hash.into(),
                timestamp().to_string(),
            ])?;
        }
        println!("{}: metrics written for {} lambda values", cell.id(), lambdas.len());
    }
    Ok(())
}

// --- theory -----------------------------------------------------------------------

const THEORY_HEADER: &[&str] = &[
    "method",
    "m",
    "b",
    "seed",
    "lambda",
    "delta1",
    "delta2",
    "risk",
    "risk_hat",
    "bias_sq",
    "variance_term",
    "risk_hat_exact",
    "risk_bound",
    "sandwich_prob",
    "a_trace",
    "m_min_delta1",
    "m_min_delta2",
    "inv_one_minus_delta1",
    "max_inv_delta2",
    "frob_sq",
    "spectral",
    "flags",
    "version",
    "config_hash",
    "timestamp",
];

#[derive(Clone)]
struct TheoryRow {
    cell: Cell,
    lambda: f64,
    delta1: f64,
    delta2: f64,
    risk: f64,
    risk_hat: f64,
    bias_sq: f64,
    variance_term: f64,
    risk_hat_exact: f64,
    risk_bound: f64,
    sandwich_prob: Option<(f64, f64)>,
    m_mins: (Option<u64>, Option<u64>),
    frob_sq: f64,
    spectral: f64,
    flags: Vec<String>,
}

fn theory_column(row: &TheoryRow, name: &str) -> Option<f64> {
    let v = match name {
        "lambda" => row.lambda,
        "delta1" => row.delta1,
        "delta2" => row.delta2,
        "delta" => row.delta1.max(row.delta2),
        "risk" => row.risk,
        "risk_hat" => row.risk_hat,
        "bias_sq" => row.bias_sq,
        "variance_term" => row.variance_term,
        "risk_bound" => row.risk_bound,
        "frob_sq" => row.frob_sq,
        "spectral" => row.spectral,
        "inv_one_minus_delta1" => inv_one_minus(row.delta1),
        "max_inv_delta2" => inv_one_minus(row.delta1).max(row.delta2),
        "m" => row.cell.m as f64,
        _ => return None,
    };
    v.is_finite().then_some(v)
}

/// Regression targets for the fixed-design evaluation: real labels as-is,
/// two-class labels as -1/+1.
fn fixed_design_labels(ds: &Dataset) -> Result<Vector, CliError> {
    match ds.labels() {
        Labels::Real(v) => Ok(Vector::from_vec(v.clone())),
        Labels::Class { idx, count: 2 } => Ok(Vector::from_fn(idx.len(), |i, _| {
            if idx[i] == 1 {
                1.0
            } else {
                -1.0
            }
        })),
        Labels::Class { .. } => Err(CliError::Config(
            "the fixed-design evaluator needs regression or binary labels".into(),
        )),
    }
}

pub fn run_theory(config: &Config, hash: &str) -> Result<(), CliError> {
    let bench = setup_data(config)?;
    let out_dir = PathBuf::from(&config.experiment.output_dir);
    let cells = enumerate_cells(config)?;
    let cap = config
        .experiment
        .heldout_subsample_cap
        .min(config.theory.n_cap);
    let ek = eval_kernel(config, &bench, cap)?;
    if ek.eval.n() > 2048 {
        return Err(CliError::Config(format!(
            "the fixed-design evaluator is limited to 2048 points, got {} (reduce theory.n_cap)",
            ek.eval.n()
        )));
    }
    let y_bar = fixed_design_labels(&ek.eval)?;
    let lambdas = lambda_grid(config, &ek.keig.values);
    let sigma_sq = config.theory.sigma_sq;

    let mut csv = CsvFile::create(&out_dir.join("theory.csv"), THEORY_HEADER)?;
    let mut rows: Vec<TheoryRow> = Vec::new();
    for cell in &cells {
        let map = sample_map(cell, &bench.kernel, &bench.train)?;
        let z = measured_features(cell, &map, ek.eval.x())?;
        let kt = feature_gram(&z);
        let norms = error_norms(&ek.k, &kt).map_err(runtime)?;
        let sweep = DeltaSweep::new(&ek.keig, &kt).map_err(runtime)?;
        let kt_eig = sym_eig(&kt).map_err(runtime)?;
        let rank = nominal_rank(cell, &map, ek.eval.n());
        for (lambda, _) in &lambdas {
            let mut flags = Vec::new();
            let deltas = sweep.deltas(*lambda).map_err(runtime)?;
            let approx = risk_from_eig(&kt_eig, &y_bar, sigma_sq, *lambda).map_err(runtime)?;
            let exact = risk_from_eig(&ek.keig, &y_bar, sigma_sq, *lambda).map_err(runtime)?;
            let bound = approx_risk_bound(exact.risk_hat, &deltas, rank, ek.eval.n(), sigma_sq);

            let mut sandwich = None;
            let mut m_mins = (None, None);
            if let Some(b) = cell.b {
                if cell.method == ApproxMethod::LpRff {
                    flags.push("circulant-projection-non-iid-columns".to_string());
                }
                match sandwich_probability(
                    &ek.keig.values,
                    *lambda,
                    b,
                    cell.m,
                    config.theory.delta1_targets[0],
                    config.theory.delta2_targets[0],
                ) {
                    Ok(sb) => sandwich = Some((sb.prob, sb.a_trace)),
                    Err(e) => flags.push(format!("bound-precondition-violated({e})")),
                }
                m_mins.0 = min_features_for_target(
                    &ek.keig.values,
                    *lambda,
                    b,
                    DeltaTarget::Delta1(config.theory.delta1_targets[0]),
                    config.theory.rho_fail,
                )
                .ok();
                m_mins.1 = min_features_for_target(
                    &ek.keig.values,
                    *lambda,
                    b,
                    DeltaTarget::Delta2(config.theory.delta2_targets[0]),
                    config.theory.rho_fail,
                )
                .ok();
            }
            rows.push(TheoryRow {
                cell: *cell,
                lambda: *lambda,
                delta1: deltas.delta1,
                delta2: deltas.delta2,
                risk: approx.risk,
                risk_hat: approx.risk_hat,
                bias_sq: approx.bias_sq,
                variance_term: approx.variance_term,
                risk_hat_exact: exact.risk_hat,
                risk_bound: bound,
                sandwich_prob: sandwich,
                m_mins,
                frob_sq: norms.frob_sq,
                spectral: norms.spectral,
                flags,
            });
        }
        println!("{}: theory rows for {} lambda values", cell.id(), lambdas.len());
    }

    for row in &rows {
        csv.row(&[
            row.cell.method.as_str().into(),
            row.cell.m.to_string(),
            row.cell.b_field(),
            row.cell.seed.to_string(),
            fmt_f(row.lambda),
            fmt_f(row.delta1),
            fmt_f(row.delta2),
            fmt_f(row.risk),
            fmt_f(row.risk_hat),
            fmt_f(row.bias_sq),
            fmt_f(row.variance_term),
            fmt_f(row.risk_hat_exact),
            fmt_f(row.risk_bound),
            row.sandwich_prob.map(|(p, _)| fmt_f(p)).unwrap_or_default(),
            row.sandwich_prob.map(|(_, a)| fmt_f(a)).unwrap_or_default(),
            row.m_mins.0.map(|v| v.to_string()).unwrap_or_default(),
            row.m_mins.1.map(|v| v.to_string()).unwrap_or_default(),
            fmt_f(inv_one_minus(row.delta1)),
            fmt_f(inv_one_minus(row.delta1).max(row.delta2)),
            fmt_f(row.frob_sq),
            fmt_f(row.spectral),
            row.flags.join("|"),
            VERSION.into(),
            hash.into(),
            timestamp().to_string(),
        ])?;
    }

    // Empirical sandwich frequencies across seeds, per configured target.
    let mut sandwich_csv = CsvFile::create(
        &out_dir.join("sandwich.csv"),
        &[
            "method",
            "m",
            "b",
            "lambda",
            "delta1_target",
            "delta2_target",
            "bound_prob",
            "empirical_freq",
            "n_seeds",
        ],
    )?;
    let mut groups: BTreeMap<(String, usize, String, u64), Vec<&TheoryRow>> = BTreeMap::new();
    for row in &rows {
        groups
            .entry((
                row.cell.method.as_str().to_string(),
                row.cell.m,
                row.cell.b_field(),
                row.lambda.to_bits(),
            ))
            .or_default()
            .push(row);
    }
    for ((method, m, b, lambda_bits), group) in &groups {
        for &t1 in &config.theory.delta1_targets {
            for &t2 in &config.theory.delta2_targets {
                let hold = group
                    .iter()
                    .filter(|r| r.delta1 <= t1 && r.delta2 <= t2)
                    .count();
                let bound = group
                    .iter()
                    .find_map(|r| r.sandwich_prob.map(|(p, _)| p));
                sandwich_csv.row(&[
                    method.clone(),
                    m.to_string(),
                    b.clone(),
                    fmt_f(f64::from_bits(*lambda_bits)),
                    fmt_f(t1),
                    fmt_f(t2),
                    bound.map(fmt_f).unwrap_or_default(),
                    fmt_f(hold as f64 / group.len() as f64),
                    group.len().to_string(),
                ])?;
            }
        }
    }

    // Rank correlations over unaveraged rows, one summary row per lambda so
    // regularization-driven risk variation does not confound the comparison.
    let mut summary = CsvFile::create(
        &out_dir.join("theory_summary.csv"),
        &["x", "y", "lambda", "rho", "n_rows"],
    )?;
    let mut lambda_values: Vec<u64> = rows.iter().map(|r| r.lambda.to_bits()).collect();
    lambda_values.sort_unstable();
    lambda_values.dedup();
    for [x_name, y_name] in &config.theory.rho_pairs {
        for &lambda_bits in &lambda_values {
            let pairs: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.lambda.to_bits() == lambda_bits)
                .filter_map(|r| Some((theory_column(r, x_name)?, theory_column(r, y_name)?)))
                .collect();
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let lambda = f64::from_bits(lambda_bits);
            match spearman_rho(&xs, &ys) {
                Ok(rho) => {
                    summary.row(&[
                        x_name.clone(),
                        y_name.clone(),
                        fmt_f(lambda),
                        fmt_f(rho),
                        xs.len().to_string(),
                    ])?;
                    println!(
                        "rho({x_name}, {y_name}) = {rho:.4} at lambda {lambda:.3e} over {} rows",
                        xs.len()
                    );
                }
                Err(e) => {
                    println!("rho({x_name}, {y_name}) at lambda {lambda:.3e} unavailable: {e}")
                }
            }
        }
    }
    Ok(())
}

// --- memory -----------------------------------------------------------------------

pub fn run_memory(config: &Config, hash: &str) -> Result<(), CliError> {
    let out_dir = PathBuf::from(&config.experiment.output_dir);
    let d = if config.memory.d > 0 {
        config.memory.d
    } else if config.dataset.synthetic.is_some() || config.dataset.train.is_some() {
        setup_data(config)?.train.d() as u64
    } else {
        return Err(CliError::Config(
            "memory.d must be set when no dataset is configured".into(),
        ));
    };
    let (s, c) = (config.memory.s, config.memory.c);
    let mut csv = CsvFile::create(
        &out_dir.join("memory.csv"),
        &[
            "method",
            "m",
            "d",
            "s",
            "c",
            "b",
            "feature_gen_bits",
            "batch_bits",
            "params_bits",
            "total_bits",
            "strict_total_bits",
            "version",
            "config_hash",
        ],
    )?;
    println!("method,m,b,total_bits,strict_total_bits");
    for cell in enumerate_cells(config)? {
        if cell.seed != config.experiment.seeds[0] {
            continue; // footprints are seed-independent
        }
        let f = footprint(cell.method, cell.m as u64, d, s, c, cell.b).map_err(config_err)?;
        let strict =
            footprint_strict(cell.method, cell.m as u64, d, s, c, cell.b).map_err(config_err)?;
        csv.row(&[
            cell.method.as_str().into(),
            cell.m.to_string(),
            d.to_string(),
            s.to_string(),
            c.to_string(),
            cell.b_field(),
            f.feature_gen_bits.to_string(),
            f.batch_bits.to_string(),
            f.params_bits.to_string(),
            f.total_bits.to_string(),
            strict.total_bits.to_string(),
            VERSION.into(),
            hash.into(),
        ])?;
        println!(
            "{},{},{},{},{}",
            cell.method.as_str(),
            cell.m,
            cell.b_field(),
            f.total_bits,
            strict.total_bits
        );
    }
    Ok(())
}

// --- sweep ------------------------------------------------------------------------

const SWEEP_HEADER: &[&str] = &[
    "dataset",
    "task",
    "method",
    "m",
    "b",
    "seed",
    "lr",
    "epochs",
    "heldout_loss",
    "heldout_metric",
    "test_metric",
    "total_bits",
    "lambda",
    "lambda_percentile",
    "frob_sq",
    "spectral",
    "delta1",
    "delta2",
    "delta",
    "inv_one_minus_delta1",
    "max_inv_delta2",
    "rank_floor",
    "version",
    "config_hash",
    "timestamp",
];

pub fn run_sweep(config: &Config, hash: &str) -> Result<(), CliError> {
    let bench = setup_data(config)?;
    let out_dir = PathBuf::from(&config.experiment.output_dir);
    let cells = enumerate_cells(config)?;
    let lr = select_lr(config, &bench)?;
    let ek = eval_kernel(config, &bench, config.experiment.heldout_subsample_cap)?;
    let lambdas = lambda_grid(config, &ek.keig.values);
    let s = config.train.batch_size as u64;
    let c = bench.c_mem();

    let mut csv = CsvFile::create(&out_dir.join("sweep.csv"), SWEEP_HEADER)?;
    // (metric-name -> xs, performance ys) for the correlation summary.
    let mut perf: Vec<f64> = Vec::new();
    let mut metric_cols: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for name in [
        "inv_one_minus_delta1",
        "max_inv_delta2",
        "delta",
        "frob_sq",
        "spectral",
    ] {
        metric_cols.insert(name, Vec::new());
    }

    for cell in &cells {
        let fp = cell_footprint(cell, bench.train.d() as u64, s, c)?;
        let outcome = train_cell(cell, config, &bench, lr, Some(&out_dir))?;
        let map = sample_map(cell, &bench.kernel, &bench.train)?;
        let z = measured_features(cell, &map, ek.eval.x())?;
        let kt = feature_gram(&z);
        let norms = error_norms(&ek.k, &kt).map_err(runtime)?;
        let sweep = DeltaSweep::new(&ek.keig, &kt).map_err(runtime)?;
        let rank = nominal_rank(cell, &map, ek.eval.n());
        for (i, (lambda, percentile)) in lambdas.iter().enumerate() {
            let deltas = sweep.deltas(*lambda).map_err(runtime)?;
            let inv = inv_one_minus(deltas.delta1);
            csv.row(&[
                bench.label.clone(),
                if bench.classification {
                    "classification".into()
                } else {
                    "regression".into()
                },
                cell.method.as_str().into(),
                cell.m.to_string(),
                cell.b_field(),
                cell.seed.to_string(),
                fmt_f(outcome.lr),
                outcome.epochs.to_string(),
                fmt_f(outcome.heldout_loss),
                fmt_f(outcome.heldout_metric),
                outcome.test_metric.map(fmt_f).unwrap_or_default(),
                fp.total_bits.to_string(),
                fmt_f(*lambda),
                percentile.clone(),
                fmt_f(norms.frob_sq),
                fmt_f(norms.spectral),
                fmt_f(deltas.delta1),
                fmt_f(deltas.delta2),
                fmt_f(deltas.delta),
                fmt_f(inv),
                fmt_f(inv.max(deltas.delta2)),
                fmt_f(delta1_rank_floor(&ek.keig.values, rank, *lambda)),
                VERSION.into(),
                hash.into(),
                timestamp().to_string(),
            ])?;
            // The correlation summary uses the first lambda of the grid so
            // each run contributes one unaveraged point per metric.
            if i == 0 && inv.is_finite() {
                perf.push(outcome.heldout_metric);
                metric_cols.get_mut("inv_one_minus_delta1").unwrap().push(inv);
                metric_cols
                    .get_mut("max_inv_delta2")
                    .unwrap()
                    .push(inv.max(deltas.delta2));
                metric_cols
                    .get_mut("delta")
                    .unwrap()
                    .push(deltas.delta);
                metric_cols.get_mut("frob_sq").unwrap().push(norms.frob_sq);
                metric_cols.get_mut("spectral").unwrap().push(norms.spectral);
            }
        }
        println!("{}: trained and measured", cell.id());
    }

    let mut summary = CsvFile::create(
        &out_dir.join("sweep_summary.csv"),
        &["x", "y", "rho", "n_rows"],
    )?;
    for (name, xs) in &metric_cols {
        if xs.len() != perf.len() || xs.len() < 2 {
            continue;
        }
        match spearman_rho(xs, &perf) {
            Ok(rho) => {
                summary.row(&[
                    (*name).into(),
                    "heldout_metric".into(),
                    fmt_f(rho),
                    xs.len().to_string(),
                ])?;
                println!("rho({name}, heldout_metric) = {rho:.4}");
            }
            Err(e) => println!("rho({name}, heldout_metric) unavailable: {e}"),
        }
    }
    Ok(())
}
