//! Browser bindings for three small explorations of the solvers. Each
//! exported function takes plain numbers and returns a JSON string; the
//! work is done by ordinary Rust functions that are tested natively.

use serde::Serialize;
use sifb::primal_dual::{assemble_class1, assemble_class2, beta_xi, constants_from};
use sifb::problems::{build_coupled_system, build_lasso, reference_oracle};
use sifb::sifb::{run, RunOutput, SolverConfig};
use sifb::stochastic::{InertiaSchedule, NoiseSchedule, OracleMode};
use wasm_bindgen::prelude::*;

/// Largest number of iterations a page request may ask for.
pub const MAX_STEPS: usize = 20_000;

#[derive(Debug, Serialize)]
pub struct Trace {
    pub fp_residual: Vec<f64>,
    pub dist_to_ref: Vec<f64>,
    pub status: String,
    pub iterations: usize,
}

impl Trace {
    fn from_run(out: &RunOutput) -> Self {
        Self {
            fp_residual: out.trace.rows.iter().map(|r| r.fp_residual).collect(),
            dist_to_ref: out.trace.rows.iter().filter_map(|r| r.dist_to_ref).collect(),
            status: out.trace.status.as_str().to_string(),
            iterations: out.trace.iterations,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LassoSettings {
    pub lambda: f64,
    pub sigma0: f64,
    pub theta: f64,
    pub alpha0: f64,
    pub q: f64,
    pub steps: usize,
    pub seed: u64,
}

/// Stochastic inertial run on a 20 x 30 lasso with polynomial noise and
/// inertia. The residual is recorded every step; noisy runs stop at 1e-4,
/// noiseless ones at 1e-10.
pub fn lasso_trace(s: &LassoSettings) -> Result<Trace, String> {
    let demo = build_lasso(20, 30, s.lambda, 100.0, 1).map_err(|e| e.to_string())?;
    let noise = if s.sigma0 > 0.0 {
        NoiseSchedule::Polynomial {
            sigma0: s.sigma0,
            theta: s.theta,
        }
    } else {
        NoiseSchedule::Zero
    };
    let inst = demo
        .sifb_instance()
        .and_then(|i| i.with_noise(noise, OracleMode::Additive))
        .map_err(|e| e.to_string())?;
    let reference = reference_oracle(&demo, 1e-12).map_err(|e| e.to_string())?;
    let inertia = if s.alpha0 > 0.0 {
        InertiaSchedule::Polynomial { alpha0: s.alpha0, q: s.q }
    } else {
        InertiaSchedule::Zero
    };
    let cfg = SolverConfig {
        inertia,
        max_iter: s.steps.clamp(1, MAX_STEPS),
        stop_tol: if s.sigma0 > 0.0 { 1e-4 } else { 1e-10 },
        ..Default::default()
    };
    let out = run(&inst, &cfg, Some(&reference), s.seed).map_err(|e| e.to_string())?;
    Ok(Trace::from_run(&out))
}

#[derive(Debug, Serialize)]
pub struct BetaCurve {
    pub xi: Vec<f64>,
    pub beta_xi: Vec<f64>,
    pub xi_hat: Option<f64>,
    pub beta_hat: f64,
    pub beta: f64,
}

/// `beta_xi` on a log grid over `[1e-3, 1e3]` with the maximizer marked.
pub fn beta_curve(nu0: f64, mu0: f64, c: f64, points: usize) -> Result<BetaCurve, String> {
    if !(nu0 > 0.0 && mu0 > 0.0) {
        return Err("constants must be positive".into());
    }
    if !(0.0..1.0).contains(&c) {
        return Err(format!("coupling norm must lie in [0, 1), got {c}"));
    }
    let points = points.clamp(2, 2000);
    let xi: Vec<f64> = (0..points)
        .map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / (points - 1) as f64))
        .collect();
    let values = xi.iter().map(|&t| beta_xi(nu0, mu0, c, t)).collect();
    let k = constants_from(nu0, mu0, c);
    Ok(BetaCurve {
        xi,
        beta_xi: values,
        xi_hat: k.xi_hat,
        beta_hat: k.beta_hat,
        beta: k.beta,
    })
}

#[derive(Debug, Serialize)]
pub struct ClassComparison {
    pub class1: Trace,
    pub class2: Trace,
    pub beta_hat: f64,
    pub beta: f64,
}

/// Both primal-dual classes on the same box-constrained quadratic with
/// `blocks` blocks of size `block_dim`.
pub fn compare_classes(blocks: usize, block_dim: usize, seed: u64, steps: usize) -> Result<ClassComparison, String> {
    if blocks == 0 || blocks > 10 || block_dim == 0 || block_dim > 20 {
        return Err("use 1 to 10 blocks of size 1 to 20".into());
    }
    let demo = build_coupled_system(blocks, &vec![block_dim; blocks], seed).map_err(|e| e.to_string())?;
    let pd = demo.primal_dual_problem().map_err(|e| e.to_string())?;
    let primal = reference_oracle(&demo, 1e-12).map_err(|e| e.to_string())?;
    let dual = demo.dual_reference(&primal, None).map_err(|e| e.to_string())?;
    let reference = sifb::spaces::BlockVector::concat(&primal, &dual);
    let cfg = SolverConfig {
        max_iter: steps.clamp(1, MAX_STEPS),
        stop_tol: 1e-10,
        ..Default::default()
    };
    let trace = |inst: sifb::Result<sifb::sifb::ProblemInstance>| -> Result<Trace, String> {
        let inst = inst.map_err(|e| e.to_string())?;
        let out = run(&inst, &cfg, Some(&reference), 0).map_err(|e| e.to_string())?;
        Ok(Trace::from_run(&out))
    };
    let k = sifb::primal_dual::compute_constants(&pd).map_err(|e| e.to_string())?;
    Ok(ClassComparison {
        class1: trace(assemble_class1(&pd))?,
        class2: trace(assemble_class2(&pd))?,
        beta_hat: k.beta_hat,
        beta: k.beta,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = lassoTrace)]
#[allow(clippy::too_many_arguments)]
pub fn lasso_trace_js(
    lambda: f64,
    sigma0: f64,
    theta: f64,
    alpha0: f64,
    q: f64,
    steps: usize,
    seed: u32,
) -> Result<String, JsError> {
    to_js(lasso_trace(&LassoSettings {
        lambda,
        sigma0,
        theta,
        alpha0,
        q,
        steps,
        seed: seed as u64,
    }))
}

#[wasm_bindgen(js_name = betaCurve)]
pub fn beta_curve_js(nu0: f64, mu0: f64, c: f64, points: usize) -> Result<String, JsError> {
    to_js(beta_curve(nu0, mu0, c, points))
}

#[wasm_bindgen(js_name = compareClasses)]
pub fn compare_classes_js(blocks: usize, block_dim: usize, seed: u32, steps: usize) -> Result<String, JsError> {
    to_js(compare_classes(blocks, block_dim, seed as u64, steps))
}
