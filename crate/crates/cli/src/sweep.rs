//! Experiment sweeps: a grid of (d, D) cells, each trained and evaluated
//! over several independent runs, aggregated into one table.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use maniflow::data::ManifoldSpec;
use maniflow::flow::TrainConfig;
use maniflow::metrics::MetricReport;
use maniflow::ode::Scheme;
use maniflow::recipes;
use maniflow::rng::derive_seed;
use maniflow::Real;
use serde::{Deserialize, Serialize};

use crate::artifact::{
    append_csv_row, atomic_write, config_err, CliResult, Failure, GenerateSidecar, MetricRow,
    METRIC_CSV_HEADER,
};
use crate::ops::{run_eval, run_sample, run_train, write_matrix_atomic, SampleParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Sphere,
    Torus,
    Floral,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Family::Sphere => "sphere",
            Family::Torus => "torus",
            Family::Floral => "floral",
        };
        f.write_str(name)
    }
}

fn default_runs() -> usize {
    5
}

fn default_n() -> usize {
    recipes::DEFAULT_N_SAMPLES
}

fn default_n_proj() -> usize {
    maniflow::metrics::DEFAULT_N_PROJECTIONS
}

/// Declarative sweep: a target family, the (d, D) grid, per-cell run
/// count, and optional overrides of the family's training preset.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub family: Family,
    /// Intrinsic dimensions; ignored for the floral family (a curve).
    #[serde(default)]
    pub d: Vec<usize>,
    /// Ambient dimension = multiplier * d per cell.
    #[serde(default)]
    pub ambient_multipliers: Vec<usize>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_n")]
    pub n_train: usize,
    #[serde(default = "default_n")]
    pub n_eval: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_n_proj")]
    pub n_projections: usize,
    /// Sampler steps; defaults to the family preset.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Sampler scheme; defaults to the family preset.
    #[serde(default)]
    pub scheme: Option<Scheme>,
    /// Partial training-config table merged over the family preset.
    #[serde(default)]
    pub train: Option<toml::Value>,
}

/// One failed cell or run, recorded without stopping the sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub run: Option<usize>,
    pub exit_code: u8,
    pub message: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells_ok: Vec<String>,
    pub failures: Vec<CellFailure>,
    pub rows: Vec<MetricRow>,
}

/// Overlays the `train` table from the sweep file onto a family preset.
/// Unknown keys are rejected by the config's own parser.
pub fn merge_train_config(
    base: &TrainConfig,
    overrides: Option<&toml::Value>,
) -> CliResult<TrainConfig> {
    let Some(over) = overrides else {
        return Ok(base.clone());
    };
    // String round trip drops None fields, which Value::try_from rejects.
    let base_text = toml::to_string(base).map_err(config_err)?;
    let mut merged: toml::Value = toml::from_str(&base_text).map_err(config_err)?;
    let (toml::Value::Table(base_table), toml::Value::Table(over_table)) = (&mut merged, over)
    else {
        return Err(Failure::Config(
            "train overrides must be a TOML table".to_string(),
        ));
    };
    for (key, value) in over_table {
        base_table.insert(key.clone(), value.clone());
    }
    let text = toml::to_string(&merged).map_err(config_err)?;
    let config = TrainConfig::from_toml_str(&text).map_err(config_err)?;
    Ok(config)
}

fn cells_of(spec: &SweepSpec) -> CliResult<Vec<(usize, usize)>> {
    match spec.family {
        Family::Floral => Ok(vec![(1, 2)]),
        _ => {
            if spec.d.is_empty() || spec.ambient_multipliers.is_empty() {
                return Err(Failure::Config(
                    "sweep needs nonempty d and ambient_multipliers".to_string(),
                ));
            }
            let mut cells = Vec::new();
            for &d in &spec.d {
                for &m in &spec.ambient_multipliers {
                    cells.push((d, m * d));
                }
            }
            Ok(cells)
        }
    }
}

fn family_spec(
    family: Family,
    d: usize,
    big_d: usize,
    seed: u64,
) -> maniflow::error::Result<ManifoldSpec<Real>> {
    match family {
        Family::Sphere => recipes::sphere_spec(d, big_d, seed),
        Family::Torus => recipes::torus_spec(d, big_d, seed),
        Family::Floral => recipes::floral_spec(seed),
    }
}

fn family_train_config(family: Family, seed: u64) -> TrainConfig {
    match family {
        Family::Sphere => recipes::sphere_train_config(seed),
        Family::Torus => recipes::torus_train_config(seed),
        Family::Floral => recipes::floral_train_config(seed),
    }
}

fn family_sampler(family: Family) -> (usize, Scheme) {
    match family {
        Family::Sphere | Family::Torus => (recipes::SPHERE_ODE_STEPS, Scheme::Euler),
        Family::Floral => (recipes::FLORAL_ODE_STEPS, Scheme::Rk4),
    }
}

/// Runs every cell, aggregating one table row per cell. Failed cells are
/// recorded and skipped; the summary lists both outcomes.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path) -> CliResult<SweepSummary> {
    let cells = cells_of(spec)?;
    if spec.runs == 0 {
        return Err(Failure::Config("sweep needs runs >= 1".to_string()));
    }
    let (default_steps, default_scheme) = family_sampler(spec.family);
    let steps = spec.steps.unwrap_or(default_steps);
    let scheme = spec.scheme.unwrap_or(default_scheme);
    let mut summary = SweepSummary {
        cells_ok: Vec::new(),
        failures: Vec::new(),
        rows: Vec::new(),
    };
    let aggregate_path = out_dir.join("aggregate.csv");

    for (d, big_d) in cells {
        let cell = format!("{}_d{d}_D{big_d}", spec.family);
        match run_cell(spec, d, big_d, &cell, steps, scheme, out_dir) {
            Ok(row) => {
                append_csv_row(&aggregate_path, METRIC_CSV_HEADER, &row.to_csv_row())?;
                summary.rows.push(row);
                summary.cells_ok.push(cell);
            }
            Err((run, failure)) => {
                summary.failures.push(CellFailure {
                    cell,
                    run,
                    exit_code: failure.exit_code(),
                    message: failure.message().to_string(),
                });
            }
        }
    }
    let json = serde_json::to_vec_pretty(&summary).map_err(config_err)?;
    atomic_write(&out_dir.join("summary.json"), &json)?;
    Ok(summary)
}

type CellError = (Option<usize>, Failure);

fn run_cell(
    spec: &SweepSpec,
    d: usize,
    big_d: usize,
    cell: &str,
    steps: usize,
    scheme: Scheme,
    out_dir: &Path,
) -> Result<MetricRow, CellError> {
    let cell_dir = out_dir.join(cell);
    let setup = |f: Failure| (None, f);

    // The cell's manifold (including any rotation) is fixed once; runs
    // vary only the sampling and training seeds.
    let cell_seed = derive_seed(spec.master_seed, cell, 0);
    let target = family_spec(spec.family, d, big_d, cell_seed)
        .map_err(|e| setup(config_err(e)))?;
    fs::create_dir_all(&cell_dir).map_err(|e| setup(config_err(e)))?;
    let sidecar = GenerateSidecar {
        spec: target.clone(),
        n: spec.n_train,
    };
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| setup(config_err(e)))?;
    atomic_write(&cell_dir.join("spec.json"), &json).map_err(setup)?;

    let reference = ManifoldSpec {
        seed: derive_seed(spec.master_seed, &format!("{cell}-reference"), 0),
        ..target.clone()
    }
    .sample(spec.n_eval)
    .map_err(|e| setup(config_err(e)))?;
    write_matrix_atomic(&reference, &cell_dir.join("reference.csv")).map_err(setup)?;

    let base_config = family_train_config(spec.family, 0);
    let base_config =
        merge_train_config(&base_config, spec.train.as_ref()).map_err(setup)?;

    let mut clouds = Vec::with_capacity(spec.runs);
    for r in 0..spec.runs {
        let at_run = |f: Failure| (Some(r), f);
        let run_dir = cell_dir.join(format!("run{r}"));
        let data = ManifoldSpec {
            seed: derive_seed(spec.master_seed, &format!("{cell}-data"), r as u64),
            ..target.clone()
        }
        .sample(spec.n_train)
        .map_err(|e| at_run(config_err(e)))?;
        write_matrix_atomic(&data, &run_dir.join("data.csv")).map_err(at_run)?;

        let mut config = base_config.clone();
        config.seed = derive_seed(spec.master_seed, &format!("{cell}-train"), r as u64);
        config.validate().map_err(|e| at_run(config_err(e)))?;
        let config_text = toml::to_string(&config).map_err(|e| at_run(config_err(e)))?;
        let (model, mut record) =
            run_train(&config, &config_text, &data, &run_dir).map_err(at_run)?;

        let params = SampleParams {
            n: spec.n_eval,
            scheme,
            steps,
            t_lower: None,
            seed: derive_seed(spec.master_seed, &format!("{cell}-sample"), r as u64),
        };
        let samples_path = run_dir.join("samples.csv");
        let endpoints = run_sample(&model, &run_dir.join("checkpoint.json"), &params, &samples_path)
            .map_err(at_run)?;

        let row = run_eval(
            &[(samples_path.display().to_string(), endpoints)],
            &reference,
            &target,
            &cell_dir.join("reference.csv").display().to_string(),
            spec.n_projections,
            derive_seed(spec.master_seed, &format!("{cell}-eval"), r as u64),
            &run_dir.join("eval.json"),
            None,
        )
        .map_err(at_run)?;
        record.metric_rows = vec![row];
        crate::ops::write_run_record(&record, &run_dir).map_err(at_run)?;

        let eval_text = fs::read_to_string(run_dir.join("eval.json"))
            .map_err(|e| at_run(config_err(e)))?;
        let eval: crate::ops::EvalReport =
            serde_json::from_str(&eval_text).map_err(|e| at_run(config_err(e)))?;
        clouds.push(eval.per_run[0].clone());
    }

    let seeds: Vec<u64> = (0..spec.runs)
        .map(|r| derive_seed(spec.master_seed, &format!("{cell}-train"), r as u64))
        .collect();
    let report = MetricReport::from_runs(&clouds, spec.n_projections, seeds)
        .map_err(|e| setup(config_err(e)))?;
    let row = MetricRow {
        d,
        big_d,
        w1_mean: report.w1_slice_std.mean,
        w1_sd: report.w1_slice_std.sd,
        dist_mean: report.dist_manifold.mean,
        dist_sd: report.dist_manifold.sd,
    };
    let json = serde_json::to_vec_pretty(&report).map_err(|e| setup(config_err(e)))?;
    atomic_write(&cell_dir.join("report.json"), &json).map_err(setup)?;
    Ok(row)
}
