//! Turning a config into a solvable instance, checking its hypotheses, and
//! running it.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::Serialize;
use sifb::primal_dual::{
    assemble_class1, assemble_class2, compute_constants, extract_primal_dual, ConstantsReport, PrimalDualProblem,
};
use sifb::problems::{reference_oracle, DemoProblem};
use sifb::sifb::{run, ProblemInstance, RunOutput, RunStatus};
use sifb::spaces::BlockVector;
use sifb::stochastic::{SUMMABLE_INERTIA, SUMMABLE_VARIANCE};

use crate::config::{Algorithm, ExperimentConfig};

/// Tolerance handed to the reference oracles.
pub const ORACLE_TOL: f64 = 1e-12;
/// Random pairs in the validation audit.
pub const AUDIT_TRIALS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Reported but not required by the chosen algorithm.
    Info,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub verdict: Verdict,
    pub name: String,
    pub value: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub rows: Vec<CheckRow>,
}

impl ValidationReport {
    fn push(&mut self, ok: bool, name: impl Into<String>, value: impl Into<String>) {
        self.rows.push(CheckRow {
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            name: name.into(),
            value: value.into(),
        });
    }

    fn info(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.rows.push(CheckRow {
            verdict: Verdict::Info,
            name: name.into(),
            value: value.into(),
        });
    }

    pub fn ok(&self) -> bool {
        self.rows.iter().all(|r| r.verdict != Verdict::Fail)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
        for r in &self.rows {
            let tag = match r.verdict {
                Verdict::Pass => "PASS",
                Verdict::Fail => "FAIL",
                Verdict::Info => "INFO",
            };
            writeln!(f, "{tag}  {:width$}  {}", r.name, r.value)?;
        }
        Ok(())
    }
}

/// A config turned into a runnable instance.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub demo: Option<DemoProblem>,
    pub primal_dual: Option<PrimalDualProblem>,
    pub instance: ProblemInstance,
    /// Reference point in the instance's space, when an oracle exists.
    pub reference: Option<BlockVector>,
    /// Primal part of the reference.
    pub primal_reference: Option<BlockVector>,
}

fn primal_dual_of(cfg: &ExperimentConfig, demo: Option<&DemoProblem>, base: &Path) -> anyhow::Result<PrimalDualProblem> {
    match (demo, &cfg.problem) {
        (Some(d), _) => match cfg.problem.lasso_form() {
            Some(form) => Ok(d.lasso_primal_dual(form)?),
            None => Ok(d.primal_dual_problem()?),
        },
        (None, crate::config::ProblemSpec::Custom(c)) => c.build(base),
        (None, _) => Err(anyhow!("demo problem failed to build")),
    }
}

fn fmt_f(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6e}")
    }
}

impl Experiment {
    /// Builds the instance without checking schedules or solver bounds.
    pub fn build(cfg: &ExperimentConfig, base: &Path) -> anyhow::Result<Experiment> {
        let missing = cfg.missing_files(base);
        if !missing.is_empty() {
            return Err(anyhow!("missing referenced files: {missing:?}"));
        }
        let demo = cfg.problem.demo()?;
        let (pd, instance) = match cfg.algorithm {
            Algorithm::Sifb => {
                let d = demo
                    .as_ref()
                    .ok_or_else(|| anyhow!("algorithm sifb needs a demo problem; use pd_class1 or pd_class2"))?;
                (None, d.sifb_instance()?)
            }
            Algorithm::PdClass1 => {
                let pd = primal_dual_of(cfg, demo.as_ref(), base)?;
                let inst = assemble_class1(&pd)?;
                (Some(pd), inst)
            }
            Algorithm::PdClass2 => {
                let pd = primal_dual_of(cfg, demo.as_ref(), base)?;
                let inst = assemble_class2(&pd)?;
                (Some(pd), inst)
            }
        };
        let instance = instance.with_noise(cfg.noise.clone(), cfg.oracle.clone())?;
        let (reference, primal_reference) = match &demo {
            Some(d) => {
                let x = reference_oracle(d, ORACLE_TOL).context("reference oracle")?;
                let full = if pd.is_some() {
                    BlockVector::concat(&x, &d.dual_reference(&x, cfg.problem.lasso_form())?)
                } else {
                    x.clone()
                };
                (Some(full), Some(x))
            }
            None => (None, None),
        };
        Ok(Experiment {
            config: cfg.clone(),
            demo,
            primal_dual: pd,
            instance,
            reference,
            primal_reference,
        })
    }

    /// Primal part of an iterate.
    pub fn primal_part(&self, x: &BlockVector) -> anyhow::Result<BlockVector> {
        Ok(match &self.primal_dual {
            Some(pd) => extract_primal_dual(x, pd)?.0,
            None => x.clone(),
        })
    }
}

/// Checks every hypothesis the chosen algorithm relies on and records the
/// computed value of each.
pub fn validate(cfg: &ExperimentConfig, base: &Path) -> ValidationReport {
    let mut rep = ValidationReport::default();

    let missing = cfg.missing_files(base);
    if missing.is_empty() {
        rep.push(true, "referenced files exist", "");
    } else {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        rep.push(false, "referenced files exist", format!("missing {}", list.join(", ")));
        return rep;
    }

    match cfg.noise.validate() {
        Ok(()) => {
            let limit = cfg.noise.variance_series_limit();
            rep.push(
                cfg.noise.summable_variance(),
                SUMMABLE_VARIANCE,
                format!("sum sigma_n^2 = {}", fmt_f(limit)),
            );
        }
        Err(e) => rep.push(false, "noise schedule parameters", e.to_string()),
    }
    match cfg.inertia.validate() {
        Ok(()) => rep.push(
            cfg.inertia.summable(),
            SUMMABLE_INERTIA,
            format!("sum alpha_n = {}", fmt_f(cfg.inertia.series_limit())),
        ),
        Err(e) => rep.push(false, "inertia schedule parameters", e.to_string()),
    }

    let demo = match cfg.problem.demo() {
        Ok(d) => d,
        Err(e) => {
            rep.push(false, "problem construction", format!("{e:#}"));
            return rep;
        }
    };

    let instance = match cfg.algorithm {
        Algorithm::Sifb => {
            let Some(d) = demo.as_ref() else {
                rep.push(false, "problem construction", "algorithm sifb needs a demo problem");
                return rep;
            };
            match d.sifb_instance() {
                Ok(inst) => inst,
                Err(e) => {
                    rep.push(false, "problem construction", e.to_string());
                    return rep;
                }
            }
        }
        Algorithm::PdClass1 | Algorithm::PdClass2 => {
            let pd = match primal_dual_of(cfg, demo.as_ref(), base) {
                Ok(pd) => pd,
                Err(e) => {
                    rep.push(false, "problem construction", format!("{e:#}"));
                    return rep;
                }
            };
            let c = match pd.metric_norm() {
                Ok(c) => c,
                Err(e) => {
                    rep.push(false, "coupling norm estimate", e.to_string());
                    return rep;
                }
            };
            rep.push(c < 1.0, "metric-norm hypothesis |sqrt(W) L sqrt(V)| < 1", format!("c = {}", fmt_f(c)));
            if c >= 1.0 {
                return rep;
            }
            let k = match compute_constants(&pd) {
                Ok(k) => k,
                Err(e) => {
                    rep.push(false, "constants", e.to_string());
                    return rep;
                }
            };
            rep.info("nu0 (smooth primal part, metric V)", fmt_f(k.nu0));
            rep.info("mu0 (smooth dual part, metric W)", fmt_f(k.mu0));
            rep.info(
                "xi_hat",
                k.xi_hat.map_or("any (c = 0 or no smooth part)".into(), fmt_f),
            );
            let class1 = ("class I: beta_hat > 1/2", format!("beta_hat = {}", fmt_f(k.beta_hat)));
            let class2 = ("class II: 2 beta > 1", format!("beta = {}", fmt_f(k.beta)));
            if cfg.algorithm == Algorithm::PdClass1 {
                rep.push(k.feasible_class1, class1.0, class1.1);
                rep.info(class2.0, class2.1);
            } else {
                rep.info(class1.0, class1.1);
                rep.push(pd.a().is_zero(), "class II: every A_i = 0", "");
                rep.push(k.feasible_class2, class2.0, class2.1);
            }
            let assembled = if cfg.algorithm == Algorithm::PdClass1 {
                assemble_class1(&pd)
            } else {
                assemble_class2(&pd)
            };
            match assembled {
                Ok(inst) => inst,
                Err(e) => {
                    rep.push(false, "assembly", e.to_string());
                    return rep;
                }
            }
        }
    };

    match instance.check_cocoercivity(AUDIT_TRIALS, 0) {
        Ok(audit) => rep.push(
            audit.pass,
            format!("cocoercivity audit ({AUDIT_TRIALS} pairs)"),
            format!("beta = {}, min slack = {:.3e}", fmt_f(instance.beta()), audit.min_slack),
        ),
        Err(e) => rep.push(false, "cocoercivity audit", e.to_string()),
    }

    let instance = match instance.with_noise(cfg.noise.clone(), cfg.oracle.clone()) {
        Ok(i) => {
            rep.push(true, "oracle mode", format!("{:?}", cfg.oracle));
            i
        }
        Err(e) => {
            rep.push(false, "oracle mode", e.to_string());
            return rep;
        }
    };
    let solver = cfg.solver_config();
    match solver.validate(&instance) {
        Ok(()) => rep.push(
            true,
            "step, relaxation and inertia bounds",
            format!(
                "gamma = {}, beta = {}, sup alpha_n = {}",
                fmt_f(solver.step_size(&instance)),
                fmt_f(instance.beta()),
                fmt_f(solver.inertia.sup())
            ),
        ),
        Err(e) => rep.push(false, "step, relaxation and inertia bounds", e.to_string()),
    }
    rep
}

/// Constants of the primal-dual form of the config's problem.
pub fn constants(cfg: &ExperimentConfig, base: &Path) -> anyhow::Result<ConstantsReport> {
    let demo = cfg.problem.demo()?;
    let pd = primal_dual_of(cfg, demo.as_ref(), base)?;
    Ok(compute_constants(&pd)?)
}

/// Everything recorded about one run besides the trace itself.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub algorithm: &'static str,
    pub seed: u64,
    pub status: RunStatus,
    pub iterations: usize,
    pub final_fp_residual: f64,
    pub final_dist_to_ref: Option<f64>,
    pub primal_dist_to_ref: Option<f64>,
    pub objective: Option<f64>,
    pub reference_objective: Option<f64>,
    pub max_step_norm: f64,
    pub step_bound_flag: bool,
    pub diverged_at: Option<usize>,
    pub wall_time_s: f64,
    /// Final primal iterate, flattened.
    pub solution: Vec<f64>,
}

pub struct RunResult {
    pub output: RunOutput,
    pub summary: RunSummary,
}

fn distance(a: &BlockVector, b: &BlockVector) -> f64 {
    let mut d = a.clone();
    d.axpy(-1.0, b);
    d.norm()
}

impl Experiment {
    pub fn run(&self, seed: u64) -> anyhow::Result<RunResult> {
        let start = Instant::now();
        let output = run(&self.instance, &self.config.solver_config(), self.reference.as_ref(), seed)?;
        let wall_time_s = start.elapsed().as_secs_f64();
        let primal = self.primal_part(&output.x)?;
        let t = &output.trace;
        let summary = RunSummary {
            algorithm: self.config.algorithm.as_str(),
            seed,
            status: t.status,
            iterations: t.iterations,
            final_fp_residual: t.final_fp_residual,
            final_dist_to_ref: t.final_dist_to_ref,
            primal_dist_to_ref: self.primal_reference.as_ref().map(|r| distance(&primal, r)),
            objective: self.demo.as_ref().map(|d| d.objective(&primal)),
            reference_objective: self
                .demo
                .as_ref()
                .zip(self.primal_reference.as_ref())
                .map(|(d, r)| d.objective(r)),
            max_step_norm: t.max_step_norm,
            step_bound_flag: t.step_bound_flag,
            diverged_at: t.diverged_at,
            wall_time_s,
            solution: primal.flatten().iter().copied().collect(),
        };
        Ok(RunResult { output, summary })
    }
}
