//! Command implementations. Each returns a typed result so the sweep
//! runner and the integration tests can reuse them without a subprocess.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use maniflow::data::ManifoldSpec;
use maniflow::error::Error;
use maniflow::flow::{gaussian_source, train, TrainConfig, VelocityModel};
use maniflow::linalg::Matrix;
use maniflow::metrics::{evaluate_cloud, CloudMetrics, MetricReport};
use maniflow::ode::{integrate_batch, quadratic_grid, Scheme};
use maniflow::oracle::{exact_velocity, probe_velocity_mse, AtomicTarget};
use maniflow::rng::derive_seed;
use maniflow::{Real, RealMatrix};
use serde::{Deserialize, Serialize};

use crate::artifact::{
    append_csv_row, atomic_write, config_err, sha256_file, spec_dims, tool_version, CliResult,
    Failure, GenerateSidecar, MetricRow, RunRecord, SampleSidecar, METRIC_CSV_HEADER,
};

/// Writes a matrix CSV atomically (temp file + rename).
pub fn write_matrix_atomic(m: &RealMatrix, path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(config_err)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    m.write_csv(&tmp).map_err(config_err)?;
    fs::rename(&tmp, path).map_err(config_err)?;
    Ok(())
}

fn read_matrix(path: &Path) -> CliResult<RealMatrix> {
    Matrix::read_csv(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// Sidecar path: `data.csv` gets `data.spec.json` beside it.
pub fn sidecar_path(out: &Path, kind: &str) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_os_string();
    let mut name = stem;
    name.push(format!(".{kind}.json"));
    out.with_file_name(name)
}

/// Draws `n` rows from the target description and writes the CSV plus a
/// sidecar carrying the full spec.
pub fn run_generate(spec: &ManifoldSpec<Real>, n: usize, out: &Path) -> CliResult<PathBuf> {
    let samples = spec.sample(n).map_err(config_err)?;
    write_matrix_atomic(&samples, out)?;
    let sidecar = GenerateSidecar {
        spec: spec.clone(),
        n,
    };
    let side_path = sidecar_path(out, "spec");
    let json = serde_json::to_vec_pretty(&sidecar).map_err(config_err)?;
    atomic_write(&side_path, &json)?;
    Ok(side_path)
}

/// Trains on an in-memory cloud and writes checkpoint, loss curve, and the
/// run record into `out_dir`. `config_text` is echoed into the record.
pub fn run_train(
    config: &TrainConfig,
    config_text: &str,
    data: &RealMatrix,
    out_dir: &Path,
) -> CliResult<(VelocityModel<Real>, RunRecord)> {
    let started = Instant::now();
    let (model, log) = train(config, data, gaussian_source).map_err(|e| match e {
        Error::NonFinite { .. } => Failure::Training(e.to_string()),
        other => config_err(other),
    })?;
    let train_ms = started.elapsed().as_millis();

    fs::create_dir_all(out_dir).map_err(config_err)?;
    let checkpoint_path = out_dir.join("checkpoint.json");
    let tmp = out_dir.join("checkpoint.json.tmp");
    model.save_json(&tmp).map_err(config_err)?;
    fs::rename(&tmp, &checkpoint_path).map_err(config_err)?;

    let loss_path = out_dir.join("loss.csv");
    let tmp = out_dir.join("loss.csv.tmp");
    log.write_loss_csv(&tmp).map_err(config_err)?;
    fs::rename(&tmp, &loss_path).map_err(config_err)?;

    let mut derived_seeds = BTreeMap::new();
    derived_seeds.insert("train".to_string(), derive_seed(config.seed, "train", 0));
    derived_seeds.insert(
        "source-pool".to_string(),
        derive_seed(config.seed, "source-pool", 0),
    );
    for k in 0..model.nets().len() {
        derived_seeds.insert(
            format!("net-{k}"),
            derive_seed(config.seed, "net", k as u64),
        );
    }

    let mut timings_ms = BTreeMap::new();
    timings_ms.insert("train".to_string(), train_ms);
    timings_ms.insert("total".to_string(), started.elapsed().as_millis());

    let record = RunRecord {
        tool_version: tool_version(),
        seed: config.seed,
        derived_seeds,
        config_toml: config_text.to_string(),
        config_hash: config.hash(),
        checkpoint_path: checkpoint_path.display().to_string(),
        checkpoint_sha256: sha256_file(&checkpoint_path)?,
        loss_csv_path: loss_path.display().to_string(),
        final_loss: log.final_loss,
        metric_rows: Vec::new(),
        timings_ms,
    };
    write_run_record(&record, out_dir)?;
    Ok((model, record))
}

pub fn write_run_record(record: &RunRecord, out_dir: &Path) -> CliResult<()> {
    let json = serde_json::to_vec_pretty(record).map_err(config_err)?;
    atomic_write(&out_dir.join("run.json"), &json)
}

/// CLI wrapper: reads the config and data files, then trains.
pub fn cmd_train(config_path: &Path, data_path: &Path, out_dir: &Path) -> CliResult<RunRecord> {
    let config_text = fs::read_to_string(config_path)
        .map_err(|e| Failure::Config(format!("{}: {e}", config_path.display())))?;
    let config = TrainConfig::from_toml_str(&config_text).map_err(config_err)?;
    let data = read_matrix(data_path)?;
    run_train(&config, &config_text, &data, out_dir).map(|(_, record)| record)
}

pub struct SampleParams {
    pub n: usize,
    pub scheme: Scheme,
    pub steps: usize,
    pub t_lower: Option<f64>,
    pub seed: u64,
}

/// Integrates seeded Gaussian draws through a loaded model and writes the
/// endpoint cloud plus a sidecar recording the exact grid.
pub fn run_sample(
    model: &VelocityModel<Real>,
    checkpoint_path: &Path,
    params: &SampleParams,
    out: &Path,
) -> CliResult<RealMatrix> {
    let t_lower = params
        .t_lower
        .unwrap_or_else(|| maniflow::recipes::quadratic_t_lower(params.steps));
    let grid = quadratic_grid(params.steps, t_lower)
        .map_err(config_err)?
        .with_scheme(params.scheme);
    let sources = maniflow::data::sample_source(
        model.dim(),
        params.n,
        derive_seed(params.seed, "sample-source", 0),
    );
    let endpoints = integrate_batch(|xs, t| model.velocity_batch(xs, t), &sources, &grid)
        .map_err(|e| match e {
            Error::NonFinite { .. } => Failure::Sampling(e.to_string()),
            other => config_err(other),
        })?;
    write_matrix_atomic(&endpoints, out)?;
    let sidecar = SampleSidecar {
        checkpoint_path: checkpoint_path.display().to_string(),
        checkpoint_sha256: sha256_file(checkpoint_path)?,
        seed: params.seed,
        n: params.n,
        scheme: params.scheme,
        steps: params.steps,
        t_lower,
        nodes: grid.nodes().to_vec(),
    };
    let json = serde_json::to_vec_pretty(&sidecar).map_err(config_err)?;
    atomic_write(&sidecar_path(out, "sample"), &json)?;
    Ok(endpoints)
}

pub fn cmd_sample(checkpoint: &Path, params: &SampleParams, out: &Path) -> CliResult<()> {
    let model = VelocityModel::load_json(checkpoint)
        .map_err(|e| Failure::Config(format!("{}: {e}", checkpoint.display())))?;
    run_sample(&model, checkpoint, params, out).map(|_| ())
}

/// Loads a target description from a TOML spec, a generate sidecar, or a
/// bare spec JSON.
pub fn load_spec(path: &Path) -> CliResult<ManifoldSpec<Real>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let spec: ManifoldSpec<Real> = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(config_err)?
    } else if let Ok(sidecar) = serde_json::from_str::<GenerateSidecar>(&text) {
        sidecar.spec
    } else {
        serde_json::from_str(&text).map_err(config_err)?
    };
    spec.validate().map_err(config_err)?;
    Ok(spec)
}

/// Full evaluation artifact: dimensions, per-run metrics, aggregate report,
/// and input provenance.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub d: usize,
    pub big_d: usize,
    pub report: MetricReport<Real>,
    pub per_run: Vec<CloudMetrics<Real>>,
    pub samples: Vec<String>,
    pub reference: String,
}

/// Evaluates one or more generated clouds against a reference cloud and
/// the manifold spec; writes a report JSON and appends a table row.
pub fn run_eval(
    clouds: &[(String, RealMatrix)],
    reference: &RealMatrix,
    spec: &ManifoldSpec<Real>,
    reference_name: &str,
    n_proj: usize,
    seed: u64,
    report_path: &Path,
    table_path: Option<&Path>,
) -> CliResult<MetricRow> {
    let mut runs = Vec::with_capacity(clouds.len());
    let mut seeds = Vec::with_capacity(clouds.len());
    for (k, (_, cloud)) in clouds.iter().enumerate() {
        let run_seed = derive_seed(seed, "eval-run", k as u64);
        runs.push(evaluate_cloud(cloud, reference, spec, n_proj, run_seed).map_err(config_err)?);
        seeds.push(run_seed);
    }
    let report = MetricReport::from_runs(&runs, n_proj, seeds).map_err(config_err)?;
    let (d, big_d) = spec_dims(spec);
    let row = MetricRow {
        d,
        big_d,
        w1_mean: report.w1_slice_std.mean,
        w1_sd: report.w1_slice_std.sd,
        dist_mean: report.dist_manifold.mean,
        dist_sd: report.dist_manifold.sd,
    };
    let artifact = EvalReport {
        d,
        big_d,
        report,
        per_run: runs,
        samples: clouds.iter().map(|(name, _)| name.clone()).collect(),
        reference: reference_name.to_string(),
    };
    let json = serde_json::to_vec_pretty(&artifact).map_err(config_err)?;
    atomic_write(report_path, &json)?;
    if let Some(table) = table_path {
        append_csv_row(table, METRIC_CSV_HEADER, &row.to_csv_row())?;
    }
    Ok(row)
}

pub fn cmd_eval(
    samples: &[PathBuf],
    reference: &Path,
    spec_path: &Path,
    n_proj: usize,
    seed: u64,
    report_path: &Path,
    table_path: Option<&Path>,
) -> CliResult<MetricRow> {
    let spec = load_spec(spec_path)?;
    let reference_cloud = read_matrix(reference)?;
    let mut clouds = Vec::with_capacity(samples.len());
    for path in samples {
        clouds.push((path.display().to_string(), read_matrix(path)?));
    }
    run_eval(
        &clouds,
        &reference_cloud,
        &spec,
        &reference.display().to_string(),
        n_proj,
        seed,
        report_path,
        table_path,
    )
}

/// Velocity field choice for the oracle probe.
pub enum FieldChoice {
    Exact,
    Zero,
    Checkpoint(PathBuf),
}

impl FieldChoice {
    pub fn parse(text: &str) -> FieldChoice {
        match text {
            "exact" => FieldChoice::Exact,
            "zero" => FieldChoice::Zero,
            other => FieldChoice::Checkpoint(PathBuf::from(other)),
        }
    }
}

/// Parses `lo:hi,lo:hi` into slab bounds.
pub fn parse_slabs(text: &str) -> CliResult<Vec<(Real, Real)>> {
    let mut slabs = Vec::new();
    for part in text.split(',') {
        let (lo, hi) = part
            .split_once(':')
            .ok_or_else(|| Failure::Config(format!("slab {part:?} is not lo:hi")))?;
        let lo: Real = lo
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("slab bound {lo:?} is not a number")))?;
        let hi: Real = hi
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("slab bound {hi:?} is not a number")))?;
        slabs.push((lo, hi));
    }
    if slabs.is_empty() {
        return Err(Failure::Config("slab list is empty".to_string()));
    }
    Ok(slabs)
}

/// Monte Carlo velocity error of a chosen field against the exact
/// conditional velocity of a uniform atomic target, per slab.
pub fn cmd_oracle(
    target_path: &Path,
    field: FieldChoice,
    slabs: &[(Real, Real)],
    n_mc: usize,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    let atoms = read_matrix(target_path)?;
    let target = AtomicTarget::uniform(atoms).map_err(config_err)?;
    let probe = match field {
        FieldChoice::Exact => {
            // Probe times stay below 1, where the exact field is defined.
            let wrapper =
                |x: &[Real], t: Real| exact_velocity(&target, x, t).expect("probe time < 1");
            probe_velocity_mse(wrapper, &target, slabs, n_mc, seed)
        }
        FieldChoice::Zero => {
            probe_velocity_mse(|x: &[Real], _t| vec![0.0; x.len()], &target, slabs, n_mc, seed)
        }
        FieldChoice::Checkpoint(path) => {
            let model = VelocityModel::load_json(&path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            probe_velocity_mse(|x: &[Real], t| model.velocity(x, t), &target, slabs, n_mc, seed)
        }
    }
    .map_err(config_err)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(config_err)?;
    }
    let mut tmp = out.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    probe.write_csv(&tmp).map_err(config_err)?;
    fs::rename(&tmp, out).map_err(config_err)?;
    Ok(())
}

/// Reads labeled clouds and writes the scatter SVG.
pub fn cmd_svg(inputs: &[(String, PathBuf)], out: &Path) -> CliResult<()> {
    let mut layers = Vec::with_capacity(inputs.len());
    for (label, path) in inputs {
        layers.push((label.clone(), read_matrix(path)?));
    }
    let svg = crate::svg::render_scatter(&layers)?;
    atomic_write(out, svg.as_bytes())
}
