//! Artifact plumbing: exit-code classification, output-root resolution,
//! atomic file writes, content hashing, and the JSON record types that
//! tie a run's files together.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use maniflow::data::{ManifoldKind, ManifoldSpec};
use maniflow::ode::Scheme;
use maniflow::Real;

/// Environment variable that re-roots all relative output paths.
pub const OUT_ROOT_ENV: &str = "MANIFLOW_OUT";

/// Failure classified by exit code: 2 config, 3 training, 4 sampling.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Training(String),
    Sampling(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Training(_) => 3,
            Failure::Sampling(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Training(m) | Failure::Sampling(m) => m,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self {
            Failure::Config(_) => "config error",
            Failure::Training(_) => "training error",
            Failure::Sampling(_) => "sampling error",
        };
        write!(f, "{kind}: {}", self.message())
    }
}

/// Everything that is not a runtime blow-up is a configuration problem.
pub fn config_err(err: impl fmt::Display) -> Failure {
    Failure::Config(err.to_string())
}

pub type CliResult<T> = Result<T, Failure>;

/// Resolves a user-supplied path against the output root: absolute paths
/// pass through, relative ones land under `$MANIFLOW_OUT` when set.
pub fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

/// Writes bytes atomically: a temp file in the destination directory is
/// renamed over the target so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(config_err)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(config_err)?;
    fs::rename(&tmp, path).map_err(config_err)?;
    Ok(())
}

/// Appends one line to a CSV, writing `header` first when the file is new.
pub fn append_csv_row(path: &Path, header: &str, row: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(config_err)?;
    }
    let existing = fs::read_to_string(path).unwrap_or_default();
    let mut text = String::new();
    if existing.is_empty() {
        text.push_str(header);
        text.push('\n');
    } else {
        text.push_str(&existing);
    }
    text.push_str(row);
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(config_err)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Sidecar written next to a generated CSV: the full target description
/// plus the row count, enough to re-create or evaluate the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateSidecar {
    pub spec: ManifoldSpec<Real>,
    pub n: usize,
}

/// Sidecar written next to a sampled CSV: provenance plus the exact
/// integration grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub checkpoint_path: String,
    pub checkpoint_sha256: String,
    pub seed: u64,
    pub n: usize,
    pub scheme: Scheme,
    pub steps: usize,
    pub t_lower: f64,
    pub nodes: Vec<f64>,
}

/// One table row in the published layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub d: usize,
    pub big_d: usize,
    pub w1_mean: f64,
    pub w1_sd: Option<f64>,
    pub dist_mean: f64,
    pub dist_sd: Option<f64>,
}

pub const METRIC_CSV_HEADER: &str = "d,D,w1_mean,w1_sd,dist_mean,dist_sd";

impl MetricRow {
    pub fn to_csv_row(&self) -> String {
        let opt = |v: &Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{:.6},{},{:.6},{}",
            self.d,
            self.big_d,
            self.w1_mean,
            opt(&self.w1_sd),
            self.dist_mean,
            opt(&self.dist_sd)
        )
    }
}

/// Intrinsic and ambient dimension of a target family.
pub fn spec_dims(spec: &ManifoldSpec<Real>) -> (usize, usize) {
    match &spec.kind {
        ManifoldKind::Sphere { d, ambient_dim, .. } => (*d, *ambient_dim),
        ManifoldKind::Torus { d, ambient_dim, .. } => (*d, *ambient_dim),
        ManifoldKind::Floral { .. } => (1, 2),
    }
}

/// Record of one training run: configuration echo, derived seeds, artifact
/// paths with the checkpoint's content hash, and wall-clock timings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool_version: String,
    pub seed: u64,
    pub derived_seeds: BTreeMap<String, u64>,
    pub config_toml: String,
    pub config_hash: String,
    pub checkpoint_path: String,
    pub checkpoint_sha256: String,
    pub loss_csv_path: String,
    pub final_loss: Option<f64>,
    pub metric_rows: Vec<MetricRow>,
    pub timings_ms: BTreeMap<String, u128>,
}

pub fn tool_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}
