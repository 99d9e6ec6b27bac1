//! Replicate orchestration and trace CSV I/O.
//!
//! Replicates run concurrently up to the requested job count; each replicate
//! owns its dataset, smoother, and solver state. Results are collected in
//! replicate order and written sequentially, so outputs are byte-identical
//! for any job count.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use lqem::sim::{simulate, Dataset};
use lqem::solvers::{ridge_init, run_estimator_on, EmTrace, SmootherSource};

use crate::config::ExperimentConfig;
use crate::AppError;

pub struct MethodOutcome {
    pub label: String,
    pub trace: Result<EmTrace, String>,
}

pub struct ReplicateResult {
    pub replicate: usize,
    pub outcomes: Vec<MethodOutcome>,
}

pub fn dataset_path(output_dir: &Path, replicate: usize) -> PathBuf {
    output_dir
        .join("datasets")
        .join(format!("replicate_{replicate:04}.json"))
}

pub fn trace_path(output_dir: &Path, label: &str, replicate: usize) -> PathBuf {
    output_dir
        .join("traces")
        .join(label)
        .join(format!("replicate_{replicate:04}.csv"))
}

/// Dataset for a replicate: loaded from disk when `simulate` already wrote
/// it, regenerated from the configuration otherwise (both are bit-identical).
fn replicate_dataset(cfg: &ExperimentConfig, replicate: usize) -> Result<Dataset, String> {
    let seed = cfg.sim.seed.wrapping_add(replicate as u64);
    let path = dataset_path(&cfg.output_dir, replicate);
    if path.exists() {
        Dataset::read_json(&path).map_err(|e| format!("dataset {}: {e}", path.display()))
    } else {
        simulate(&cfg.sim.clone().with_seed(seed)).map_err(|e| e.to_string())
    }
}

fn run_replicate(cfg: &ExperimentConfig, replicate: usize) -> ReplicateResult {
    let all_failed = |err: String| ReplicateResult {
        replicate,
        outcomes: cfg
            .methods
            .iter()
            .map(|m| MethodOutcome {
                label: m.label.clone(),
                trace: Err(err.clone()),
            })
            .collect(),
    };

    let dataset = match replicate_dataset(cfg, replicate) {
        Ok(d) => d,
        Err(e) => return all_failed(e),
    };
    let spec = match dataset.problem() {
        Ok(s) => s,
        Err(e) => return all_failed(e.to_string()),
    };
    let src = match SmootherSource::new(&spec, &cfg.profile.grid()) {
        Ok(s) => s,
        Err(e) => return all_failed(e.to_string()),
    };
    // Shared deterministic initial estimate for every method.
    let init = match ridge_init(&src, 1.0) {
        Ok(i) => i,
        Err(e) => return all_failed(e.to_string()),
    };

    let outcomes = cfg
        .methods
        .iter()
        .map(|m| {
            let trace = match cfg.solver_options(m) {
                Ok(opts) => run_estimator_on(&src, &init, &opts).map_err(|f| f.to_string()),
                Err(e) => Err(e.to_string()),
            };
            MethodOutcome {
                label: m.label.clone(),
                trace,
            }
        })
        .collect();

    ReplicateResult {
        replicate,
        outcomes,
    }
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    jobs: usize,
) -> Result<Vec<ReplicateResult>, AppError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| AppError::io(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|i| run_replicate(cfg, i))
            .collect()
    }))
}

/// One parsed trace row; floats round-trip exactly through the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub obj: f64,
    pub theta: Vec<f64>,
    pub locked_mask: String,
}

pub fn write_trace_csv(path: &Path, trace: &EmTrace, p: usize) -> Result<(), AppError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| AppError::io(e.to_string()))?;
    }
    let mut out = String::new();
    out.push_str("iter,obj");
    for j in 1..=p {
        out.push_str(&format!(",theta_{j}"));
    }
    out.push_str(",locked_mask\n");
    for (i, est) in trace.iterates.iter().enumerate() {
        out.push_str(&format!("{},{}", i + 1, trace.objectives[i]));
        for v in est.theta().iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push(',');
        out.push_str(&est.locked_mask_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| AppError::io(e.to_string()))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>, AppError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| AppError::io(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| AppError::io(e.to_string()))?
        .clone();
    let cols = headers.len();
    if cols < 4 {
        return Err(AppError::io(format!(
            "{}: malformed trace header",
            path.display()
        )));
    }
    let p = cols - 3;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| AppError::io(e.to_string()))?;
        let iter: usize = record[0]
            .parse()
            .map_err(|e| AppError::io(format!("bad iter field: {e}")))?;
        let obj: f64 = record[1]
            .parse()
            .map_err(|e| AppError::io(format!("bad obj field: {e}")))?;
        let mut theta = Vec::with_capacity(p);
        for j in 0..p {
            theta.push(
                record[2 + j]
                    .parse::<f64>()
                    .map_err(|e| AppError::io(format!("bad theta field: {e}")))?,
            );
        }
        rows.push(TraceRow {
            iter,
            obj,
            theta,
            locked_mask: record[cols - 1].to_string(),
        });
    }
    Ok(rows)
}
