//! Stochastic inertial forward-backward iteration.
//!
//! ```text
//! w_n     = x_n + alpha_n (x_n - x_{n-1})
//! z_n     = w_n - gamma_n U r_n            r_n ~ B w_n
//! p_n     = J_{gamma_n U A}(z_n)
//! x_{n+1} = x_n + lambda_n (p_n - x_n)
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::operators::{audit_cocoercivity, check_cocoercivity, CocoerciveMap, CocoercivityReport, MonotoneBlock};
use crate::primal_dual::PrimalDualStep;
use crate::spaces::{check_dims, BlockVector, Preconditioner};
use crate::stochastic::{validate_schedules, InertiaSchedule, NoiseSchedule, OracleMode, StochasticOracle};

/// Iterates with a norm above this are declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;
/// Step norms this many times the first nonzero one raise the boundedness flag.
pub const STEP_GROWTH_FLAG: f64 = 1e6;

/// The backward half of a step: everything after the oracle draw.
#[derive(Clone, Debug)]
pub enum BackwardStep {
    /// `J_{gamma U A}(w - gamma U r)`
    Plain { operator: MonotoneBlock, metric: Preconditioner },
    /// Primal-dual iteration in a product-space metric, evaluated through
    /// its explicit per-block sequence at unit step.
    PrimalDual(PrimalDualStep),
}

impl BackwardStep {
    fn apply(&self, gamma: f64, w: &BlockVector, r: &BlockVector) -> BlockVector {
        match self {
            BackwardStep::Plain { operator, metric } => {
                let mut z = w.clone();
                z.axpy(-gamma, &metric.apply(r));
                operator.resolvent(gamma, metric, &z)
            }
            BackwardStep::PrimalDual(step) => step.apply(w, r),
        }
    }
}

/// An instance of the inclusion `0 in A x + B x` ready for the solver.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    backward: BackwardStep,
    forward: CocoerciveMap,
    beta: f64,
    fixed_gamma: Option<f64>,
    x0: BlockVector,
    noise: NoiseSchedule,
    oracle_mode: OracleMode,
}

const CONSTRUCTION_AUDIT_TRIALS: usize = 16;

impl ProblemInstance {
    /// `A` and `B` in the metric `U`, with `B`'s constant taken relative to
    /// `U` from `forward.beta()`. The constant is audited on a few random
    /// pairs before the instance is accepted.
    pub fn new(operator: MonotoneBlock, forward: CocoerciveMap, metric: Preconditioner, x0: BlockVector) -> Result<Self> {
        let dims = forward.dims().to_vec();
        check_dims(&dims, &x0)?;
        operator.validate(&dims, &metric)?;
        let beta = forward.beta();
        if !(beta > 0.0) {
            return config(format!("cocoercivity constant must be positive, got {beta}"));
        }
        let audit = check_cocoercivity(&forward, &metric, CONSTRUCTION_AUDIT_TRIALS, 0);
        if !audit.pass {
            return config(format!(
                "forward map fails cocoercivity with constant {beta:e} (slack {:e})",
                audit.min_slack
            ));
        }
        Ok(Self {
            backward: BackwardStep::Plain { operator, metric },
            forward,
            beta,
            fixed_gamma: None,
            x0,
            noise: NoiseSchedule::Zero,
            oracle_mode: OracleMode::Additive,
        })
    }

    pub(crate) fn from_primal_dual(step: PrimalDualStep, forward: CocoerciveMap, beta: f64, x0: BlockVector) -> Self {
        Self {
            backward: BackwardStep::PrimalDual(step),
            forward,
            beta,
            fixed_gamma: Some(1.0),
            x0,
            noise: NoiseSchedule::Zero,
            oracle_mode: OracleMode::Additive,
        }
    }

    pub fn with_noise(mut self, noise: NoiseSchedule, mode: OracleMode) -> Result<Self> {
        noise.validate()?;
        if matches!(mode, OracleMode::Minibatch { .. }) && !self.forward.is_finite_sum() {
            return config("minibatch sampling needs a finite-sum forward map");
        }
        self.noise = noise;
        self.oracle_mode = mode;
        Ok(self)
    }

    pub fn with_x0(mut self, x0: BlockVector) -> Result<Self> {
        check_dims(self.forward.dims(), &x0)?;
        self.x0 = x0;
        Ok(self)
    }

    pub fn backward(&self) -> &BackwardStep {
        &self.backward
    }

    pub fn forward(&self) -> &CocoerciveMap {
        &self.forward
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn fixed_gamma(&self) -> Option<f64> {
        self.fixed_gamma
    }

    pub fn x0(&self) -> &BlockVector {
        &self.x0
    }

    pub fn noise(&self) -> &NoiseSchedule {
        &self.noise
    }

    pub fn oracle_mode(&self) -> &OracleMode {
        &self.oracle_mode
    }

    pub fn dims(&self) -> &[usize] {
        self.forward.dims()
    }

    /// Fresh oracle for one run.
    pub fn oracle(&self, seed: u64) -> Result<StochasticOracle> {
        StochasticOracle::new(self.forward.clone(), self.noise.clone(), self.oracle_mode.clone(), seed)
    }

    /// Step size used by the residual: the fixed step if the instance has
    /// one, otherwise `beta` (1 when `beta` is infinite).
    pub fn reference_gamma(&self) -> f64 {
        self.fixed_gamma
            .unwrap_or(if self.beta.is_finite() { self.beta } else { 1.0 })
    }

    /// One noise-free forward-backward map at step `gamma`.
    pub fn forward_backward(&self, gamma: f64, x: &BlockVector) -> BlockVector {
        self.backward.apply(gamma, x, &self.forward.apply(x))
    }

    /// `|x - T x|` for the noise-free forward-backward map `T` at the
    /// reference step. Vanishes exactly on the solution set.
    pub fn fp_residual(&self, x: &BlockVector) -> f64 {
        let mut d = self.forward_backward(self.reference_gamma(), x);
        d.axpy(-1.0, x);
        d.norm()
    }

    /// Audits the advertised constant of the forward map in the metric of
    /// the backward step.
    pub fn check_cocoercivity(&self, trials: usize, seed: u64) -> Result<CocoercivityReport> {
        match &self.backward {
            BackwardStep::Plain { metric, .. } => Ok(check_cocoercivity(&self.forward, metric, trials, seed)),
            BackwardStep::PrimalDual(step) => {
                // probe the metric once so solve failures surface as errors
                step.apply_metric(&BlockVector::zeros(self.dims()))?;
                Ok(audit_cocoercivity(
                    self.dims(),
                    self.beta,
                    |x| self.forward.apply(x),
                    |g| step.apply_metric(g).expect("metric solve converged on probe"),
                    trials,
                    seed,
                ))
            }
        }
    }
}

fn default_epsilon() -> f64 {
    1e-6
}
fn default_relaxation() -> f64 {
    1.0
}
fn default_max_iter() -> usize {
    10_000
}
fn default_stop_tol() -> f64 {
    1e-8
}
fn default_record_every() -> usize {
    1
}

/// Step-size, relaxation and inertia parameters plus stopping rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Constant step; defaults to the instance's `beta` or fixed step.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_relaxation")]
    pub relaxation: f64,
    #[serde(default)]
    pub inertia: InertiaSchedule,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            gamma: None,
            relaxation: default_relaxation(),
            inertia: InertiaSchedule::Zero,
            max_iter: default_max_iter(),
            stop_tol: default_stop_tol(),
            record_every: default_record_every(),
        }
    }
}

impl SolverConfig {
    /// The step the solver will use on `prob`.
    pub fn step_size(&self, prob: &ProblemInstance) -> f64 {
        self.gamma.or(prob.fixed_gamma).unwrap_or(prob.reference_gamma())
    }

    /// Checks every bound the iteration relies on against `prob`.
    pub fn validate(&self, prob: &ProblemInstance) -> Result<()> {
        let beta = prob.beta;
        let eps = self.epsilon;
        if !(eps > 0.0 && eps < beta.min(1.0)) {
            return config(format!("epsilon must lie in ]0, min(1, beta)[ with beta = {beta:e}, got {eps:e}"));
        }
        if let (Some(g), Some(fixed)) = (self.gamma, prob.fixed_gamma) {
            if g != fixed {
                return config(format!("this instance runs at step {fixed}, got gamma = {g}"));
            }
        }
        let gamma = self.step_size(prob);
        if !(gamma >= eps && gamma <= (2.0 - eps) * beta) {
            return config(format!(
                "step {gamma:e} outside [epsilon, (2 - epsilon) beta] = [{eps:e}, {:e}]",
                (2.0 - eps) * beta
            ));
        }
        if !(self.relaxation >= eps && self.relaxation <= 1.0) {
            return config(format!("relaxation {} outside [epsilon, 1]", self.relaxation));
        }
        self.inertia.validate()?;
        let sup_alpha = self.inertia.sup();
        if !(sup_alpha <= 1.0 - eps) {
            return config(format!("inertia reaches {sup_alpha}, above 1 - epsilon"));
        }
        if self.max_iter == 0 {
            return config("max_iter must be at least 1");
        }
        if !(self.stop_tol >= 0.0) {
            return config(format!("stop_tol must be nonnegative, got {}", self.stop_tol));
        }
        if self.record_every == 0 {
            return config("record_every must be at least 1");
        }
        Ok(())
    }
}

/// `x_n` and `x_{n-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct IterState {
    pub x: BlockVector,
    pub x_prev: BlockVector,
}

impl IterState {
    /// `x_{-1} = x_0`.
    pub fn start(x0: &BlockVector) -> Self {
        Self {
            x: x0.clone(),
            x_prev: x0.clone(),
        }
    }
}

/// One iteration, drawing exactly one oracle sample.
pub fn step(
    state: &IterState,
    n: usize,
    cfg: &SolverConfig,
    prob: &ProblemInstance,
    oracle: &mut StochasticOracle,
) -> IterState {
    let alpha = cfg.inertia.alpha(n);
    let mut w = state.x.clone();
    if alpha != 0.0 {
        let mut diff = state.x.clone();
        diff.axpy(-1.0, &state.x_prev);
        w.axpy(alpha, &diff);
    }
    let r = oracle.sample(n, &w);
    let p = prob.backward.apply(cfg.step_size(prob), &w, &r);
    let lambda = cfg.relaxation;
    let next = if lambda == 1.0 {
        p
    } else {
        let mut x = state.x.clone();
        x.scale_mut(1.0 - lambda);
        x.axpy(lambda, &p);
        x
    };
    IterState {
        x: next,
        x_prev: state.x.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub n: usize,
    pub fp_residual: f64,
    pub step_norm: f64,
    pub dist_to_ref: Option<f64>,
    pub sigma_n: f64,
    pub alpha_n: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIter,
    Diverged,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIter => "max_iter",
            RunStatus::Diverged => "diverged",
        }
    }
}

/// Per-iteration diagnostics of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub status: RunStatus,
    /// Number of steps taken.
    pub iterations: usize,
    pub final_fp_residual: f64,
    pub final_dist_to_ref: Option<f64>,
    pub max_step_norm: f64,
    /// Set when some step exceeded `STEP_GROWTH_FLAG` times the first
    /// nonzero step.
    pub step_bound_flag: bool,
    /// Iteration at which a non-finite or oversized iterate appeared.
    pub diverged_at: Option<usize>,
}

pub const CSV_SCHEMA_LINE: &str = "#schema=1";
pub const CSV_HEADER: &str = "n,fp_residual,step_norm,dist_to_ref,sigma_n,alpha_n";

impl RunTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_SCHEMA_LINE);
        out.push('\n');
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let dist = r.dist_to_ref.map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.n, r.fp_residual, r.step_norm, dist, r.sigma_n, r.alpha_n
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub x: BlockVector,
    pub trace: RunTrace,
}

fn distance(a: &BlockVector, b: &BlockVector) -> f64 {
    let mut d = a.clone();
    d.axpy(-1.0, b);
    d.norm()
}

/// Iterates from the instance's starting point until the noise-free
/// fixed-point residual drops to `stop_tol`, `max_iter` steps are taken, or
/// the iterates blow up.
pub fn run(prob: &ProblemInstance, cfg: &SolverConfig, reference: Option<&BlockVector>, seed: u64) -> Result<RunOutput> {
    let schedules = validate_schedules(&prob.noise, &cfg.inertia);
    if !schedules.ok {
        return config(format!("schedule violates {}", schedules.violations.join("; ")));
    }
    cfg.validate(prob)?;
    if let Some(r) = reference {
        check_dims(prob.dims(), r)?;
    }
    let mut oracle = prob.oracle(seed)?;
    let mut state = IterState::start(&prob.x0);
    let mut rows = Vec::new();
    let mut max_step: f64 = 0.0;
    let mut first_step: Option<f64> = None;
    let mut flag = false;
    let mut status = RunStatus::MaxIter;
    let mut diverged_at = None;
    let mut n = 0;
    let mut last_res;
    loop {
        let res = prob.fp_residual(&state.x);
        last_res = res;
        let step_norm = distance(&state.x, &state.x_prev);
        max_step = max_step.max(step_norm);
        if step_norm > 0.0 {
            match first_step {
                None => first_step = Some(step_norm),
                Some(s0) if step_norm > STEP_GROWTH_FLAG * s0 => flag = true,
                _ => {}
            }
        }
        let terminal = res <= cfg.stop_tol || n == cfg.max_iter;
        if n % cfg.record_every == 0 || terminal {
            rows.push(TraceRow {
                n,
                fp_residual: res,
                step_norm,
                dist_to_ref: reference.map(|r| distance(&state.x, r)),
                sigma_n: prob.noise.sigma(n),
                alpha_n: cfg.inertia.alpha(n),
            });
        }
        if res <= cfg.stop_tol {
            status = RunStatus::Converged;
            break;
        }
        if n == cfg.max_iter {
            break;
        }
        let next = step(&state, n, cfg, prob, &mut oracle);
        n += 1;
        if !next.x.is_finite() || next.x.norm() > DIVERGENCE_NORM {
            status = RunStatus::Diverged;
            diverged_at = Some(n);
            state = next;
            last_res = f64::NAN;
            break;
        }
        state = next;
    }
    let trace = RunTrace {
        rows,
        status,
        iterations: n,
        final_fp_residual: last_res,
        final_dist_to_ref: reference.map(|r| distance(&state.x, r)),
        max_step_norm: max_step,
        step_bound_flag: flag,
        diverged_at,
    };
    Ok(RunOutput { x: state.x, trace })
}
