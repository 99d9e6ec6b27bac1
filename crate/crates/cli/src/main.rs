//! Command-line harness: simulate datasets, run the estimator comparison,
//! dump prox diagnostics, and rebuild reports from traces.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver failure in all
//! replicates, 4 I/O error.

mod config;
mod report;
mod run;
mod svg;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use lqem::lq_scalar_prox;
use lqem::sim::simulate;

use config::{ExperimentConfig, Profile};
use report::{build_report, rebuild_report_from_traces, write_report, write_zero_series};
use run::{dataset_path, read_trace_csv, run_experiment, trace_path, write_trace_csv};

#[derive(Debug)]
pub enum AppError {
    Config(String),
    Solver(String),
    Io(String),
}

impl AppError {
    pub fn config(msg: impl Into<String>) -> Self {
        AppError::Config(msg.into())
    }
    pub fn io(msg: impl Into<String>) -> Self {
        AppError::Io(msg.into())
    }
    pub fn from_config_err(e: lqem::Error) -> Self {
        AppError::Config(e.to_string())
    }

    fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Solver(_) => 3,
            AppError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "configuration error: {m}"),
            AppError::Solver(m) => write!(f, "solver error: {m}"),
            AppError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "lqem",
    about = "Sparse estimation in latent-variable regressions: simulate, estimate, report",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one dataset JSON per replicate under <out>/datasets/.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured estimator on every replicate; write traces,
    /// report.json/report.csv, and per-zero-coordinate series.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replicate-level parallelism.
        #[arg(long)]
        jobs: Option<usize>,
        /// Grid accuracy profile override.
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        /// Also render simple SVG line charts next to the series CSVs.
        #[arg(long)]
        svg: bool,
    },
    /// Tabulate the scalar lq proximal operator over a z range.
    ProxTable {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        lam: f64,
        #[arg(long, allow_negative_numbers = true)]
        z_min: f64,
        #[arg(long, allow_negative_numbers = true)]
        z_max: f64,
        #[arg(long)]
        step: f64,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild report.json/report.csv from trace CSVs already on disk.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path, out: Option<PathBuf>) -> Result<ExperimentConfig, AppError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    Ok(cfg)
}

fn cmd_simulate(config: PathBuf, out: Option<PathBuf>) -> Result<(), AppError> {
    let cfg = load_config(&config, out)?;
    let dir = cfg.output_dir.join("datasets");
    std::fs::create_dir_all(&dir).map_err(|e| AppError::io(e.to_string()))?;
    for i in 0..cfg.replicates {
        let sim_cfg = cfg
            .sim
            .clone()
            .with_seed(cfg.sim.seed.wrapping_add(i as u64));
        let ds = simulate(&sim_cfg).map_err(|e| AppError::config(e.to_string()))?;
        ds.write_json(&dataset_path(&cfg.output_dir, i))
            .map_err(|e| AppError::io(e.to_string()))?;
    }
    println!(
        "wrote {} dataset(s) under {}",
        cfg.replicates,
        dir.display()
    );
    Ok(())
}

fn cmd_estimate(
    config: PathBuf,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    profile: Option<Profile>,
    render_svg: bool,
) -> Result<(), AppError> {
    let mut cfg = load_config(&config, out)?;
    if let Some(p) = profile {
        cfg.profile = p;
    }
    let jobs = jobs.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });

    let results = run_experiment(&cfg, jobs)?;

    let total = cfg.replicates * cfg.methods.len();
    let failed: usize = results
        .iter()
        .flat_map(|r| r.outcomes.iter())
        .filter(|o| o.trace.is_err())
        .count();
    for r in &results {
        for o in &r.outcomes {
            if let Err(e) = &o.trace {
                eprintln!("replicate {} / {}: {e}", r.replicate, o.label);
            }
        }
    }
    if failed == total {
        return Err(AppError::Solver(
            "every replicate failed for every method".into(),
        ));
    }

    for r in &results {
        for o in &r.outcomes {
            if let Ok(trace) = &o.trace {
                write_trace_csv(
                    &trace_path(&cfg.output_dir, &o.label, r.replicate),
                    trace,
                    cfg.sim.p,
                )?;
            }
        }
    }

    let report = build_report(&cfg, &results);
    write_report(&report, &cfg.output_dir)?;

    // Figs-style series for the first replicate.
    let first_traces: Vec<Option<Vec<run::TraceRow>>> = cfg
        .methods
        .iter()
        .map(|m| {
            let path = trace_path(&cfg.output_dir, &m.label, 0);
            if path.exists() {
                read_trace_csv(&path).ok()
            } else {
                None
            }
        })
        .collect();
    let series_paths = write_zero_series(&cfg, &first_traces, &cfg.output_dir)?;

    if render_svg {
        for (&j, csv_path) in cfg.sim.true_zero_indices().iter().zip(&series_paths) {
            let series: Vec<svg::Series<'_>> = cfg
                .methods
                .iter()
                .enumerate()
                .map(|(m_idx, m)| svg::Series {
                    name: &m.label,
                    points: first_traces[m_idx]
                        .as_ref()
                        .map(|rows| {
                            rows.iter()
                                .map(|row| (row.iter as f64, row.theta[j]))
                                .collect()
                        })
                        .unwrap_or_default(),
                })
                .collect();
            let chart = svg::line_chart(&format!("zero coordinate theta_{}", j + 1), &series);
            let svg_path = csv_path.with_extension("svg");
            std::fs::write(&svg_path, chart).map_err(|e| AppError::io(e.to_string()))?;
        }
    }

    println!(
        "ran {} method(s) x {} replicate(s) with {jobs} job(s); {failed} failure(s); report at {}",
        cfg.methods.len(),
        cfg.replicates,
        cfg.output_dir.join("report.json").display()
    );
    Ok(())
}

fn cmd_prox_table(
    q: f64,
    lam: f64,
    z_min: f64,
    z_max: f64,
    step: f64,
    out: Option<PathBuf>,
) -> Result<(), AppError> {
    if !(step > 0.0) || z_max < z_min {
        return Err(AppError::config(format!(
            "need step > 0 and z_max >= z_min, got step = {step}, range [{z_min}, {z_max}]"
        )));
    }
    let count = ((z_max - z_min) / step).floor() as usize + 1;
    let mut text = String::from("z,prox\n");
    for i in 0..count {
        let z = z_min + i as f64 * step;
        let prox = lq_scalar_prox(z, lam, q).map_err(|e| AppError::config(e.to_string()))?;
        text.push_str(&format!("{z},{prox}\n"));
    }
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| AppError::io(e.to_string()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_report(config: PathBuf, out: Option<PathBuf>) -> Result<(), AppError> {
    let cfg = load_config(&config, out)?;
    let report = rebuild_report_from_traces(&cfg)?;
    if report.rows.iter().all(|r| r.replicates_ok == 0) {
        return Err(AppError::io(format!(
            "no readable traces under {}",
            cfg.output_dir.join("traces").display()
        )));
    }
    write_report(&report, &cfg.output_dir)?;
    println!(
        "report rebuilt at {}",
        cfg.output_dir.join("report.json").display()
    );
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out } => cmd_simulate(config, out),
        Command::Estimate {
            config,
            out,
            jobs,
            profile,
            svg,
        } => cmd_estimate(config, out, jobs, profile, svg),
        Command::ProxTable {
            q,
            lam,
            z_min,
            z_max,
            step,
            out,
        } => cmd_prox_table(q, lam, z_min, z_max, step, out),
        Command::Report { config, out } => cmd_report(config, out),
    };
    if let Err(e) = result {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
