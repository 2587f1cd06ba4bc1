//! The four subcommands. Each returns the process exit code.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use sifb::sifb::RunStatus;

use crate::config::{load_config, to_toml, Algorithm, ExperimentConfig};
use crate::experiment::{constants, validate, Experiment, RunResult};
use crate::sweep::{parse_sweep_csv, run_replicas, summarize, SweepAggregate};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUN: u8 = 2;

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load(path: &Path) -> Result<ExperimentConfig, u8> {
    load_config(path).map_err(|e| {
        eprintln!("error: {e:#}");
        EXIT_VALIDATION
    })
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn gate(cfg: &ExperimentConfig, base: &Path) -> Result<(), u8> {
    let report = validate(cfg, base);
    if report.ok() {
        Ok(())
    } else {
        eprint!("{report}");
        eprintln!("error: validation failed");
        Err(EXIT_VALIDATION)
    }
}

fn build(cfg: &ExperimentConfig, base: &Path) -> Result<Experiment, u8> {
    Experiment::build(cfg, base).map_err(|e| {
        eprintln!("error: {e:#}");
        EXIT_VALIDATION
    })
}

pub fn cmd_validate(path: &Path) -> u8 {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let report = validate(&cfg, &config_dir(path));
    print!("{report}");
    if report.ok() {
        EXIT_OK
    } else {
        EXIT_VALIDATION
    }
}

pub fn cmd_constants(path: &Path) -> u8 {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let base = config_dir(path);
    if cfg.algorithm == Algorithm::Sifb {
        return match cfg.problem.demo().and_then(|d| {
            let d = d.ok_or_else(|| anyhow::anyhow!("algorithm sifb needs a demo problem"))?;
            Ok(d.sifb_instance()?)
        }) {
            Ok(inst) => {
                println!("{}", serde_json::json!({ "beta": inst.beta() }));
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                EXIT_VALIDATION
            }
        };
    }
    match constants(&cfg, &base) {
        Ok(k) => {
            println!("{}", serde_json::to_string_pretty(&k).expect("constants serialize"));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_VALIDATION
        }
    }
}

fn write_run(dir: &Path, cfg: &ExperimentConfig, base: &Path, result: &RunResult) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write(&dir.join("trace.csv"), &result.output.trace.to_csv())?;
    write(&dir.join("summary.json"), &serde_json::to_string_pretty(&result.summary)?)?;
    let resolved = cfg.resolved(base, result.summary.seed, dir)?;
    write(&dir.join("resolved_config.toml"), &to_toml(&resolved)?)?;
    Ok(())
}

pub fn cmd_run(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> u8 {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let base = config_dir(path);
    if let Err(code) = gate(&cfg, &base) {
        return code;
    }
    let exp = match build(&cfg, &base) {
        Ok(e) => e,
        Err(code) => return code,
    };
    let seed = seed.unwrap_or_else(|| cfg.seeds.resolve().first().copied().unwrap_or(0));
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    let result = match exp.run(seed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_RUN;
        }
    };
    if let Err(e) = write_run(&dir, &cfg, &base, &result) {
        eprintln!("error: {e:#}");
        return EXIT_RUN;
    }
    let s = &result.summary;
    println!(
        "{} after {} iterations, fp_residual {:e}, written to {}",
        s.status.as_str(),
        s.iterations,
        s.final_fp_residual,
        dir.display()
    );
    if s.status == RunStatus::Converged {
        EXIT_OK
    } else {
        EXIT_RUN
    }
}

pub fn cmd_sweep(path: &Path, count: Option<usize>, jobs: Option<usize>, out: Option<PathBuf>) -> u8 {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let base = config_dir(path);
    let seeds = match count {
        Some(0) => {
            eprintln!("error: --seeds must be at least 1");
            return EXIT_VALIDATION;
        }
        Some(n) => sifb::stochastic::replica_seeds(cfg.seeds.master(), n),
        None => cfg.seeds.resolve(),
    };
    if seeds.is_empty() {
        eprintln!("error: the config lists no seeds");
        return EXIT_VALIDATION;
    }
    if let Err(code) = gate(&cfg, &base) {
        return code;
    }
    let exp = match build(&cfg, &base) {
        Ok(e) => e,
        Err(code) => return code,
    };
    let jobs = jobs
        .filter(|&j| j > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let results = match run_replicas(&exp, &seeds, jobs) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_RUN;
        }
    };
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    let summary = summarize(&seeds, &results);
    let written = (|| -> anyhow::Result<()> {
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for (i, r) in results.iter().enumerate() {
            if let Ok(r) = r {
                write_run(&dir.join(format!("seed_{i:03}")), &cfg, &base, r)?;
            }
        }
        let csv = summary.to_csv();
        let csv_path = dir.join("sweep_summary.csv");
        write(&csv_path, &csv)?;
        let again = SweepAggregate::from_rows(&parse_sweep_csv(&fs::read_to_string(&csv_path)?)?);
        anyhow::ensure!(
            format!("{again:?}") == format!("{:?}", summary.aggregate),
            "aggregate differs from recomputation over {}",
            csv_path.display()
        );
        write(&dir.join("sweep_summary.json"), &serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    })();
    if let Err(e) = written {
        eprintln!("error: {e:#}");
        return EXIT_RUN;
    }
    let a = &summary.aggregate;
    println!(
        "{}/{} converged (fraction {}), median iterations {}, max final residual {:e}",
        a.converged, a.replicas, a.fraction_converged, a.median_iterations, a.max_final_residual
    );
    for f in &summary.failures {
        eprintln!("seed {f}");
    }
    if a.converged == a.replicas {
        EXIT_OK
    } else {
        EXIT_RUN
    }
}
