//! Aggregation of replicate outcomes into the report and the plot-ready
//! per-zero-coordinate series files.

use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use lqem::estimate_mse;
use lqem::solvers::Method;

use crate::config::ExperimentConfig;
use crate::run::{read_trace_csv, trace_path, MethodOutcome, ReplicateResult, TraceRow};
use crate::AppError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub method: Method,
    pub q: Option<f64>,
    pub tau: Option<f64>,
    pub median_mse: Option<f64>,
    /// Fraction of successful replicates with every true zero locked or below
    /// the zero threshold.
    pub zero_recovery_rate: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub replicates_ok: usize,
    pub replicates_failed: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FailureRecord {
    pub label: String,
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub replicates: usize,
    pub true_zero_indices: Vec<usize>,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<FailureRecord>,
}

/// Final state of one run, however it was obtained (in memory or re-parsed).
struct RunSummary {
    theta: Vec<f64>,
    locked_mask: String,
    iterations: usize,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

fn summarize_rows(
    cfg: &ExperimentConfig,
    per_method: Vec<Vec<Result<RunSummary, (usize, String)>>>,
) -> Report {
    let theta_true = Array1::from_vec(cfg.sim.theta_true.clone());
    let zero_idx = cfg.sim.true_zero_indices();
    let mut rows = Vec::new();
    let mut failures = Vec::new();

    for (m_idx, method) in cfg.methods.iter().enumerate() {
        let eps = cfg.recovery_eps(method);
        let mut mses = Vec::new();
        let mut recovered = 0usize;
        let mut iter_sum = 0usize;
        let mut ok = 0usize;
        let mut failed = 0usize;
        for outcome in &per_method[m_idx] {
            match outcome {
                Ok(summary) => {
                    ok += 1;
                    iter_sum += summary.iterations;
                    let theta = Array1::from_vec(summary.theta.clone());
                    mses.push(estimate_mse(theta.view(), theta_true.view()).unwrap());
                    let all_zero = zero_idx.iter().all(|&j| {
                        let locked = summary.locked_mask.as_bytes().get(j) == Some(&b'1');
                        locked || summary.theta[j].abs() <= eps
                    });
                    if all_zero {
                        recovered += 1;
                    }
                }
                Err((replicate, error)) => {
                    failed += 1;
                    failures.push(FailureRecord {
                        label: method.label.clone(),
                        replicate: *replicate,
                        error: error.clone(),
                    });
                }
            }
        }
        let (q, tau) = match &method.penalty {
            Some(p) => (p.q, p.tau),
            None => (None, None),
        };
        rows.push(ReportRow {
            label: method.label.clone(),
            method: method.method,
            q,
            tau,
            median_mse: median(&mut mses),
            zero_recovery_rate: if ok > 0 {
                Some(recovered as f64 / ok as f64)
            } else {
                None
            },
            mean_iterations: if ok > 0 {
                Some(iter_sum as f64 / ok as f64)
            } else {
                None
            },
            replicates_ok: ok,
            replicates_failed: failed,
        });
    }

    Report {
        replicates: cfg.replicates,
        true_zero_indices: zero_idx,
        rows,
        failures,
    }
}

/// Build the report from in-memory results.
pub fn build_report(cfg: &ExperimentConfig, results: &[ReplicateResult]) -> Report {
    let per_method: Vec<Vec<Result<RunSummary, (usize, String)>>> = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(m_idx, _)| {
            results
                .iter()
                .map(|r| {
                    let outcome: &MethodOutcome = &r.outcomes[m_idx];
                    match &outcome.trace {
                        Ok(trace) => {
                            let last = trace
                                .final_estimate()
                                .expect("non-empty trace for successful run");
                            Ok(RunSummary {
                                theta: last.theta().to_vec(),
                                locked_mask: last.locked_mask_string(),
                                iterations: trace.iterations(),
                            })
                        }
                        Err(e) => Err((r.replicate, e.clone())),
                    }
                })
                .collect()
        })
        .collect();
    summarize_rows(cfg, per_method)
}

/// Rebuild the report from trace CSVs on disk; numerically identical to the
/// in-memory report because the CSVs carry full-precision values.
pub fn rebuild_report_from_traces(cfg: &ExperimentConfig) -> Result<Report, AppError> {
    let per_method: Vec<Vec<Result<RunSummary, (usize, String)>>> = cfg
        .methods
        .iter()
        .map(|method| {
            (0..cfg.replicates)
                .map(|i| {
                    let path = trace_path(&cfg.output_dir, &method.label, i);
                    if !path.exists() {
                        return Ok(Err((i, format!("missing trace {}", path.display()))));
                    }
                    let rows = read_trace_csv(&path)?;
                    match rows.last() {
                        Some(last) => Ok(Ok(RunSummary {
                            theta: last.theta.clone(),
                            locked_mask: last.locked_mask.clone(),
                            iterations: rows.len(),
                        })),
                        None => Ok(Err((i, format!("empty trace {}", path.display())))),
                    }
                })
                .collect::<Result<Vec<_>, AppError>>()
        })
        .collect::<Result<Vec<_>, AppError>>()?;
    Ok(summarize_rows(cfg, per_method))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_report(report: &Report, output_dir: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(output_dir).map_err(|e| AppError::io(e.to_string()))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| AppError::io(e.to_string()))?;
    std::fs::write(output_dir.join("report.json"), json + "\n")
        .map_err(|e| AppError::io(e.to_string()))?;

    let mut csv_text = String::from(
        "label,method,q,tau,median_mse,zero_recovery_rate,mean_iterations,replicates_ok,replicates_failed\n",
    );
    for row in &report.rows {
        csv_text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.label,
            row.method.label(),
            opt(row.q),
            opt(row.tau),
            opt(row.median_mse),
            opt(row.zero_recovery_rate),
            opt(row.mean_iterations),
            row.replicates_ok,
            row.replicates_failed,
        ));
    }
    std::fs::write(output_dir.join("report.csv"), csv_text).map_err(|e| AppError::io(e.to_string()))
}

/// Per-zero-coordinate convergence series from the first replicate: one CSV
/// per true-zero index with a column per method, padded by carrying the last
/// value so every column spans the longest run.
pub fn write_zero_series(
    cfg: &ExperimentConfig,
    traces: &[Option<Vec<TraceRow>>],
    output_dir: &Path,
) -> Result<Vec<std::path::PathBuf>, AppError> {
    let series_dir = output_dir.join("series");
    std::fs::create_dir_all(&series_dir).map_err(|e| AppError::io(e.to_string()))?;
    let max_len = traces.iter().flatten().map(|t| t.len()).max().unwrap_or(0);
    let mut written = Vec::new();
    for &j in &cfg.sim.true_zero_indices() {
        let mut text = String::from("iter");
        for m in &cfg.methods {
            text.push_str(&format!(",{}", m.label));
        }
        text.push('\n');
        for i in 0..max_len {
            text.push_str(&format!("{}", i + 1));
            for rows in traces.iter() {
                match rows {
                    Some(rows) if !rows.is_empty() => {
                        let row = &rows[i.min(rows.len() - 1)];
                        text.push_str(&format!(",{}", row.theta[j]));
                    }
                    _ => text.push(','),
                }
            }
            text.push('\n');
        }
        let path = series_dir.join(format!("zero_coord_{j}.csv"));
        std::fs::write(&path, text).map_err(|e| AppError::io(e.to_string()))?;
        written.push(path);
    }
    Ok(written)
}
