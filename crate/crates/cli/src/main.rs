//! `maniflow`: train flow-matching models on synthetic manifold targets,
//! sample them through a neural ODE, and evaluate the results.

mod artifact;
mod ops;
mod svg;
mod sweep;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use maniflow::data::ManifoldSpec;
use maniflow::ode::Scheme;
use maniflow::recipes;
use maniflow::Real;

use artifact::{config_err, resolve_out, CliResult, Failure};
use ops::{FieldChoice, SampleParams};

#[derive(Parser)]
#[command(name = "maniflow", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw samples from a built-in or user-described target.
    Generate {
        /// Built-in family: sphere, torus, or floral.
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// Intrinsic dimension for the sphere/torus presets.
        #[arg(long, default_value_t = 2)]
        d: usize,
        /// Ambient dimension for the sphere/torus presets; default 2d.
        #[arg(long)]
        ambient_dim: Option<usize>,
        /// Target description file (TOML, or JSON sidecar) instead of a preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = recipes::DEFAULT_N_SAMPLES)]
        n: usize,
        /// Sampling seed; overrides the seed in a spec file when given.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV; a .spec.json sidecar is written beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a velocity field on a CSV cloud.
    Train {
        /// Training config TOML.
        #[arg(long)]
        config: PathBuf,
        /// Target samples CSV.
        #[arg(long)]
        data: PathBuf,
        /// Directory for checkpoint.json, loss.csv, run.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Integrate Gaussian draws through a trained model.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = recipes::DEFAULT_N_SAMPLES)]
        n: usize,
        /// Integration scheme: euler or rk4.
        #[arg(long, default_value = "euler")]
        scheme: String,
        /// Step count of the quadratic time grid.
        #[arg(long, default_value_t = recipes::SPHERE_ODE_STEPS)]
        steps: usize,
        /// Gap to t = 1 where integration stops; default 1/steps^2.
        #[arg(long)]
        t_lower: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; a .sample.json sidecar is written beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare generated clouds against a reference cloud and its manifold.
    Eval {
        /// Generated-sample CSVs; repeat for multiple runs.
        #[arg(long, required = true)]
        samples: Vec<PathBuf>,
        /// Held-out target samples CSV.
        #[arg(long)]
        reference: PathBuf,
        /// Target description (TOML or JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = maniflow::metrics::DEFAULT_N_PROJECTIONS)]
        n_proj: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report JSON path.
        #[arg(long)]
        report: PathBuf,
        /// Optional CSV table to append the aggregate row to.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Velocity error of a field against the exact field of an atom cloud.
    Oracle {
        /// Atom cloud CSV defining the target.
        #[arg(long)]
        target: PathBuf,
        /// Field to probe: "exact", "zero", or a checkpoint path.
        #[arg(long, default_value = "exact")]
        field: String,
        /// Time slabs as lo:hi pairs, comma separated.
        #[arg(long)]
        slabs: String,
        /// Monte Carlo draws per slab.
        #[arg(long, default_value_t = 10000)]
        n_mc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render 2D point clouds as a scatter SVG.
    Svg {
        /// Point-cloud CSVs; repeat for overlaid layers.
        #[arg(long, required = true)]
        points: Vec<PathBuf>,
        /// Legend labels, one per cloud; defaults to file stems.
        #[arg(long)]
        label: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a (d, D) grid of train/sample/eval cells from a sweep TOML.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_scheme(text: &str) -> CliResult<Scheme> {
    match text {
        "euler" => Ok(Scheme::Euler),
        "rk4" => Ok(Scheme::Rk4),
        other => Err(Failure::Config(format!(
            "unknown scheme {other:?} (expected euler or rk4)"
        ))),
    }
}

fn preset_spec(
    name: &str,
    d: usize,
    ambient_dim: Option<usize>,
    seed: u64,
) -> CliResult<ManifoldSpec<Real>> {
    let spec = match name {
        "sphere" => recipes::sphere_spec(d, ambient_dim.unwrap_or(2 * d), seed),
        "torus" => recipes::torus_spec(d, ambient_dim.unwrap_or(2 * d), seed),
        "floral" => recipes::floral_spec(seed),
        other => {
            return Err(Failure::Config(format!(
                "unknown preset {other:?} (expected sphere, torus, or floral)"
            )))
        }
    };
    spec.map_err(config_err)
}

fn run(cmd: Cmd) -> CliResult<()> {
    match cmd {
        Cmd::Generate {
            preset,
            d,
            ambient_dim,
            spec,
            n,
            seed,
            out,
        } => {
            let target = match (preset, spec) {
                (Some(name), None) => preset_spec(&name, d, ambient_dim, seed.unwrap_or(0))?,
                (None, Some(path)) => {
                    let mut target = ops::load_spec(&path)?;
                    if let Some(seed) = seed {
                        target.seed = seed;
                    }
                    target
                }
                _ => {
                    return Err(Failure::Config(
                        "exactly one of --preset or --spec is required".to_string(),
                    ))
                }
            };
            let out = resolve_out(&out);
            let sidecar = ops::run_generate(&target, n, &out)?;
            println!("wrote {} and {}", out.display(), sidecar.display());
            Ok(())
        }
        Cmd::Train {
            config,
            data,
            out_dir,
        } => {
            let out_dir = resolve_out(&out_dir);
            let record = ops::cmd_train(&config, &data, &out_dir)?;
            match record.final_loss {
                Some(loss) => println!("trained: final loss {loss:.6}"),
                None => println!("trained"),
            }
            println!("wrote {}", record.checkpoint_path);
            Ok(())
        }
        Cmd::Sample {
            checkpoint,
            n,
            scheme,
            steps,
            t_lower,
            seed,
            out,
        } => {
            let params = SampleParams {
                n,
                scheme: parse_scheme(&scheme)?,
                steps,
                t_lower,
                seed,
            };
            let out = resolve_out(&out);
            ops::cmd_sample(&checkpoint, &params, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Eval {
            samples,
            reference,
            spec,
            n_proj,
            seed,
            report,
            table,
        } => {
            let report = resolve_out(&report);
            let table = table.map(|t| resolve_out(&t));
            let row = ops::cmd_eval(
                &samples,
                &reference,
                &spec,
                n_proj,
                seed,
                &report,
                table.as_deref(),
            )?;
            println!("{}", artifact::METRIC_CSV_HEADER);
            println!("{}", row.to_csv_row());
            Ok(())
        }
        Cmd::Oracle {
            target,
            field,
            slabs,
            n_mc,
            seed,
            out,
        } => {
            let slabs = ops::parse_slabs(&slabs)?;
            let out = resolve_out(&out);
            ops::cmd_oracle(&target, FieldChoice::parse(&field), &slabs, n_mc, seed, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Svg { points, label, out } => {
            if !label.is_empty() && label.len() != points.len() {
                return Err(Failure::Config(format!(
                    "{} labels for {} point files",
                    label.len(),
                    points.len()
                )));
            }
            let mut inputs = Vec::with_capacity(points.len());
            for (k, path) in points.iter().enumerate() {
                let name = match label.get(k) {
                    Some(text) => text.clone(),
                    None => path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| format!("cloud {k}")),
                };
                inputs.push((name, path.clone()));
            }
            let out = resolve_out(&out);
            ops::cmd_svg(&inputs, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Sweep { config } => {
            let text = fs::read_to_string(&config)
                .map_err(|e| Failure::Config(format!("{}: {e}", config.display())))?;
            let spec: sweep::SweepSpec = toml::from_str(&text).map_err(config_err)?;
            let out_dir = resolve_out(&spec.out_dir);
            let summary = sweep::run_sweep(&spec, &out_dir)?;
            for cell in &summary.cells_ok {
                println!("cell {cell}: ok");
            }
            for failure in &summary.failures {
                match failure.run {
                    Some(r) => eprintln!(
                        "cell {} run {r}: {} (exit {})",
                        failure.cell, failure.message, failure.exit_code
                    ),
                    None => eprintln!(
                        "cell {}: {} (exit {})",
                        failure.cell, failure.message, failure.exit_code
                    ),
                }
            }
            println!("wrote {}", out_dir.join("aggregate.csv").display());
            match summary.failures.first() {
                None => Ok(()),
                Some(first) => Err(match first.exit_code {
                    3 => Failure::Training(format!("{} cell(s) failed", summary.failures.len())),
                    4 => Failure::Sampling(format!("{} cell(s) failed", summary.failures.len())),
                    _ => Failure::Config(format!("{} cell(s) failed", summary.failures.len())),
                }),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
