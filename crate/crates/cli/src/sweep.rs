//! Multi-seed replicas and their summary table.

use std::fmt::Write as _;

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::Serialize;
use sifb::sifb::{RunStatus, CSV_SCHEMA_LINE};

use crate::experiment::{Experiment, RunResult};

pub const SWEEP_HEADER: &str = "seed_index,seed,status,iterations,final_fp_residual,final_dist_to_ref";

/// One replica's terminal state. `status` is `error` when the run could
/// not start.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub seed_index: usize,
    pub seed: u64,
    pub status: String,
    pub iterations: usize,
    pub final_fp_residual: f64,
    pub final_dist_to_ref: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepAggregate {
    pub replicas: usize,
    pub converged: usize,
    pub fraction_converged: f64,
    pub median_iterations: f64,
    /// Largest final residual; non-finite residuals count as infinite.
    pub max_final_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub aggregate: SweepAggregate,
    /// `seed_index: message` for replicas that did not converge.
    pub failures: Vec<String>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl SweepAggregate {
    pub fn from_rows(rows: &[SweepRow]) -> Self {
        let converged = rows.iter().filter(|r| r.status == RunStatus::Converged.as_str()).count();
        let max_final_residual = rows
            .iter()
            .map(|r| {
                if r.final_fp_residual.is_finite() {
                    r.final_fp_residual
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max);
        Self {
            replicas: rows.len(),
            converged,
            fraction_converged: if rows.is_empty() {
                0.0
            } else {
                converged as f64 / rows.len() as f64
            },
            median_iterations: median(rows.iter().map(|r| r.iterations as f64).collect()),
            max_final_residual,
        }
    }
}

impl SweepSummary {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_SCHEMA_LINE}\n{SWEEP_HEADER}\n");
        for r in &self.rows {
            let dist = r.final_dist_to_ref.map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.seed_index, r.seed, r.status, r.iterations, r.final_fp_residual, dist
            );
        }
        out
    }
}

/// Reads the rows back from [`SweepSummary::to_csv`] output.
pub fn parse_sweep_csv(text: &str) -> anyhow::Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_SCHEMA_LINE) {
        bail!("missing {CSV_SCHEMA_LINE} line");
    }
    if lines.next() != Some(SWEEP_HEADER) {
        bail!("unexpected sweep header");
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                bail!("row {i}: expected 6 fields, found {}", f.len());
            }
            Ok(SweepRow {
                seed_index: f[0].parse().with_context(|| format!("row {i}"))?,
                seed: f[1].parse().with_context(|| format!("row {i}"))?,
                status: f[2].to_string(),
                iterations: f[3].parse().with_context(|| format!("row {i}"))?,
                final_fp_residual: f[4].parse().with_context(|| format!("row {i}"))?,
                final_dist_to_ref: if f[5].is_empty() {
                    None
                } else {
                    Some(f[5].parse().with_context(|| format!("row {i}"))?)
                },
            })
        })
        .collect()
}

/// Runs one replica per seed on a pool of `jobs` threads. Results come
/// back in seed order.
pub fn run_replicas(exp: &Experiment, seeds: &[u64], jobs: usize) -> anyhow::Result<Vec<anyhow::Result<RunResult>>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(|| seeds.par_iter().map(|&s| exp.run(s)).collect()))
}

pub fn summarize(seeds: &[u64], results: &[anyhow::Result<RunResult>]) -> SweepSummary {
    let mut rows = Vec::with_capacity(seeds.len());
    let mut failures = Vec::new();
    for (i, (&seed, res)) in seeds.iter().zip(results).enumerate() {
        match res {
            Ok(r) => {
                let s = &r.summary;
                if s.status != RunStatus::Converged {
                    failures.push(format!(
                        "{i}: {} after {} iterations, residual {:e}",
                        s.status.as_str(),
                        s.iterations,
                        s.final_fp_residual
                    ));
                }
                rows.push(SweepRow {
                    seed_index: i,
                    seed,
                    status: s.status.as_str().into(),
                    iterations: s.iterations,
                    final_fp_residual: s.final_fp_residual,
                    final_dist_to_ref: s.final_dist_to_ref,
                });
            }
            Err(e) => {
                failures.push(format!("{i}: {e:#}"));
                rows.push(SweepRow {
                    seed_index: i,
                    seed,
                    status: "error".into(),
                    iterations: 0,
                    final_fp_residual: f64::NAN,
                    final_dist_to_ref: None,
                });
            }
        }
    }
    SweepSummary {
        aggregate: SweepAggregate::from_rows(&rows),
        rows,
        failures,
    }
}
