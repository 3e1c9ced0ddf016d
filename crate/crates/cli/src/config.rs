//! TOML experiment configuration with command-line overrides.

use std::path::Path;

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub dataset: DatasetConfig,
    pub kernel: KernelConfig,
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub theory: TheorySection,
    #[serde(default)]
    pub memory: MemorySection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Training file (LIBSVM or CSV); alternative to `synthetic`.
    pub train: Option<String>,
    /// Optional test file evaluated after training.
    pub test: Option<String>,
    /// "libsvm" or "csv"; inferred from the extension when omitted.
    pub format: Option<String>,
    /// "regression" or "classification".
    pub task: String,
    #[serde(default = "default_heldout_fraction")]
    pub heldout_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_true")]
    pub normalize: bool,
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    /// "radial-classification" or "smooth-regression".
    pub kind: String,
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Gaussian kernel inverse squared bandwidth `1/(2 sigma^2)`.
    pub gamma: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Any of: nystrom, rff, circulant_rff, lp_rff.
    pub methods: Vec<String>,
    pub m_grid: Vec<usize>,
    /// Precisions for lp_rff cells.
    #[serde(default)]
    pub b_grid: Vec<u8>,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    #[serde(default = "default_subsample_cap")]
    pub heldout_subsample_cap: usize,
    #[serde(default)]
    pub subsample_seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr_grid: Vec<f64>,
    pub batch_size: usize,
    pub max_decays: usize,
    pub improvement_threshold: f64,
    /// "auto" (by task), "mse", or "softmax".
    pub loss: String,
    pub double_sampling: bool,
    pub l2_reg: f64,
    pub max_epochs: usize,
    pub save_maps: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr_grid: vec![0.5],
            batch_size: 250,
            max_decays: 10,
            improvement_threshold: 0.01,
            loss: "auto".into(),
            double_sampling: false,
            l2_reg: 0.0,
            max_epochs: 500,
            save_maps: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    /// Explicit regularization values; when empty, `lambda_percentiles` of the
    /// exact kernel spectrum are used instead.
    pub lambdas: Vec<f64>,
    /// Percentiles of the descending eigenvalue list (0 = largest).
    pub lambda_percentiles: Vec<f64>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            lambdas: Vec::new(),
            lambda_percentiles: vec![0.0, 25.0, 50.0, 75.0, 99.0],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheorySection {
    /// Label-noise variance plugged into the risk formulas.
    pub sigma_sq: f64,
    /// Failure probability for the feature-count bound.
    pub rho_fail: f64,
    pub delta1_targets: Vec<f64>,
    pub delta2_targets: Vec<f64>,
    /// Hard cap on the evaluation set size (dense eigensolves).
    pub n_cap: usize,
    /// Column pairs for the rank-correlation summary.
    pub rho_pairs: Vec<[String; 2]>,
}

impl Default for TheorySection {
    fn default() -> Self {
        TheorySection {
            sigma_sq: 1.0,
            rho_fail: 0.05,
            delta1_targets: vec![0.5],
            delta2_targets: vec![1.0],
            n_cap: 2048,
            rho_pairs: vec![
                ["inv_one_minus_delta1".into(), "risk".into()],
                ["frob_sq".into(), "risk".into()],
            ],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemorySection {
    /// Input dimension for the standalone accounting table.
    pub d: u64,
    pub s: u64,
    pub c: u64,
}

impl Default for MemorySection {
    fn default() -> Self {
        MemorySection { d: 0, s: 250, c: 1 }
    }
}

fn default_heldout_fraction() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}
fn default_noise_sd() -> f64 {
    0.1
}
fn default_subsample_cap() -> usize {
    20_000
}

/// Parse an `--override key.path=value` argument into (path, parsed value).
fn parse_override(raw: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (path, value) = raw.split_once('=').ok_or_else(|| {
        CliError::Config(format!("override `{raw}` is not of the form key=value"))
    })?;
    let segments: Vec<String> = path.split('.').map(str::to_string).collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Config(format!("override `{raw}` has an empty key segment")));
    }
    // Try the value as a TOML literal first (numbers, arrays, booleans),
    // falling back to a plain string.
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((segments, parsed))
}

fn apply_override(root: &mut toml::Value, path: &[String], value: toml::Value) -> Result<(), CliError> {
    let mut node = root;
    for seg in &path[..path.len() - 1] {
        node = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override path `{seg}` crosses a non-table")))?
            .entry(seg.clone())
            .or_insert(toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| CliError::Config("override path ends inside a non-table".into()))?
        .insert(path.last().unwrap().clone(), value);
    Ok(())
}

/// FNV-1a over a canonical (key-sorted) rendering of the merged config.
fn stable_hash(value: &toml::Value, state: &mut u64) {
    fn feed(state: &mut u64, bytes: &[u8]) {
        for b in bytes {
            *state ^= *b as u64;
            *state = state.wrapping_mul(0x100_0000_01b3);
        }
    }
    match value {
        toml::Value::Table(t) => {
            let mut keys: Vec<&String> = t.keys().collect();
            keys.sort();
            for k in keys {
                feed(state, k.as_bytes());
                feed(state, b"=");
                stable_hash(&t[k], state);
                feed(state, b";");
            }
        }
        toml::Value::Array(items) => {
            feed(state, b"[");
            for item in items {
                stable_hash(item, state);
                feed(state, b",");
            }
            feed(state, b"]");
        }
        other => feed(state, other.to_string().as_bytes()),
    }
}

/// Load a config file, apply overrides, validate, and hash.
pub fn load(path: &Path, overrides: &[String]) -> Result<(Config, String), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("config {} is not valid TOML: {e}", path.display())))?;
    let mut value = toml::Value::Table(table);
    for raw in overrides {
        let (segments, parsed) = parse_override(raw)?;
        apply_override(&mut value, &segments, parsed)?;
    }
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    stable_hash(&value, &mut h);
    let hash = format!("{h:016x}");
    let config: Config = value
        .try_into()
        .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
    validate(&config)?;
    Ok((config, hash))
}

fn validate(config: &Config) -> Result<(), CliError> {
    let exp = &config.experiment;
    if exp.methods.is_empty() {
        return Err(CliError::Config("experiment.methods must not be empty".into()));
    }
    if exp.m_grid.is_empty() {
        return Err(CliError::Config("experiment.m_grid must not be empty".into()));
    }
    if exp.seeds.is_empty() {
        return Err(CliError::Config("experiment.seeds must not be empty".into()));
    }
    if exp.methods.iter().any(|m| m == "lp_rff") && exp.b_grid.is_empty() {
        return Err(CliError::Config(
            "experiment.b_grid must not be empty when lp_rff is among the methods".into(),
        ));
    }
    for m in &exp.methods {
        m.parse::<lprff_core::memory::ApproxMethod>()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match config.dataset.task.as_str() {
        "regression" | "classification" => {}
        other => {
            return Err(CliError::Config(format!(
                "dataset.task must be regression or classification, got `{other}`"
            )))
        }
    }
    if config.dataset.train.is_none() && config.dataset.synthetic.is_none() {
        return Err(CliError::Config(
            "dataset needs either a train path or a synthetic block".into(),
        ));
    }
    if config.train.lr_grid.is_empty() {
        return Err(CliError::Config("train.lr_grid must not be empty".into()));
    }
    match config.train.loss.as_str() {
        "auto" | "mse" | "softmax" => {}
        other => {
            return Err(CliError::Config(format!(
                "train.loss must be auto, mse, or softmax, got `{other}`"
            )))
        }
    }
    Ok(())
}
