//! Structured primal-dual inclusions and their reduction to the
//! forward-backward iteration.
//!
//! Primal blocks `i` carry `(A_i, C_i, z_i, V_i)`, dual blocks `k` carry
//! `(B_k, D_k^{-1}, r_k, W_k)`, and `L` couples them. The primal problem is
//! `z_i in A_i x_i + sum_k L_{k,i}^* ((B_k [] D_k)(L_k x - r_k)) + C_i x`.
//!
//! Two assemblies are provided. Class I works for any `A_i` and runs in the
//! metric inverse to `(x, v) -> (V^{-1} x - L^* v, W^{-1} v - L x)`; class II
//! requires every `A_i = 0` and runs in `(V, (W^{-1} - L V L^*)^{-1})`.
//! Neither metric is ever formed: each step is the explicit per-block
//! sequence that the metric resolvent reduces to.

use serde::Serialize;

use crate::error::{config, Error, Result};
use crate::operators::{CocoerciveMap, MonotoneBlock, SAFETY_FACTOR};
use crate::sifb::ProblemInstance;
use crate::spaces::{
    check_dims, conjugate_gradient, estimate_weighted_norm, BlockLinearOperator, BlockVector, Preconditioner,
    DEFAULT_TOL,
};

/// Margin applied to the strict feasibility inequalities.
pub const FEASIBILITY_MARGIN: f64 = 1e-9;

const NORM_MAX_ITER: usize = 100_000;
const CG_TOL: f64 = 1e-13;
const CG_MAX_ITER: usize = 10_000;

/// Components of a primal-dual problem. Missing constants are computed
/// from the smooth parts in the metrics `V` and `W` and deflated by
/// [`SAFETY_FACTOR`].
#[derive(Clone, Debug)]
pub struct PrimalDualParts {
    pub a: MonotoneBlock,
    pub z: BlockVector,
    pub v: Preconditioner,
    pub c: CocoerciveMap,
    pub nu0: Option<f64>,
    pub b: MonotoneBlock,
    pub r: BlockVector,
    pub w: Preconditioner,
    pub d_inv: CocoerciveMap,
    pub mu0: Option<f64>,
    pub l: BlockLinearOperator,
}

#[derive(Clone, Debug)]
pub struct PrimalDualProblem {
    a: MonotoneBlock,
    z: BlockVector,
    v: Preconditioner,
    c: CocoerciveMap,
    nu0: f64,
    b: MonotoneBlock,
    r: BlockVector,
    w: Preconditioner,
    d_inv: CocoerciveMap,
    mu0: f64,
    l: BlockLinearOperator,
}

fn constant_or_audit(given: Option<f64>, map: &CocoerciveMap, metric: &Preconditioner) -> Result<f64> {
    match given {
        Some(c) if c > 0.0 => Ok(c),
        Some(c) => Err(Error::NotPositive { value: c }),
        None => Ok(map.beta_in_metric(metric)? / SAFETY_FACTOR),
    }
}

impl PrimalDualProblem {
    pub fn new(parts: PrimalDualParts) -> Result<Self> {
        let pd = parts.l.primal_dims().to_vec();
        let dd = parts.l.dual_dims().to_vec();
        check_dims(&pd, &parts.z)?;
        check_dims(&dd, &parts.r)?;
        parts.a.validate(&pd, &parts.v)?;
        parts.b.validate(&dd, &parts.w)?;
        if parts.c.dims() != pd.as_slice() {
            return config(format!("smooth primal map acts on {:?}, primal blocks are {pd:?}", parts.c.dims()));
        }
        if parts.d_inv.dims() != dd.as_slice() {
            return config(format!("smooth dual map acts on {:?}, dual blocks are {dd:?}", parts.d_inv.dims()));
        }
        let nu0 = constant_or_audit(parts.nu0, &parts.c, &parts.v)?;
        let mu0 = constant_or_audit(parts.mu0, &parts.d_inv, &parts.w)?;
        Ok(Self {
            a: parts.a,
            z: parts.z,
            v: parts.v,
            c: parts.c,
            nu0,
            b: parts.b,
            r: parts.r,
            w: parts.w,
            d_inv: parts.d_inv,
            mu0,
            l: parts.l,
        })
    }

    pub fn primal_dims(&self) -> &[usize] {
        self.l.primal_dims()
    }

    pub fn dual_dims(&self) -> &[usize] {
        self.l.dual_dims()
    }

    /// Number of primal blocks.
    pub fn m(&self) -> usize {
        self.primal_dims().len()
    }

    /// Number of dual blocks.
    pub fn s(&self) -> usize {
        self.dual_dims().len()
    }

    pub fn stacked_dims(&self) -> Vec<usize> {
        self.primal_dims().iter().chain(self.dual_dims()).copied().collect()
    }

    pub fn a(&self) -> &MonotoneBlock {
        &self.a
    }
    pub fn b(&self) -> &MonotoneBlock {
        &self.b
    }
    pub fn c(&self) -> &CocoerciveMap {
        &self.c
    }
    pub fn d_inv(&self) -> &CocoerciveMap {
        &self.d_inv
    }
    pub fn z(&self) -> &BlockVector {
        &self.z
    }
    pub fn r(&self) -> &BlockVector {
        &self.r
    }
    pub fn v(&self) -> &Preconditioner {
        &self.v
    }
    pub fn w(&self) -> &Preconditioner {
        &self.w
    }
    pub fn l(&self) -> &BlockLinearOperator {
        &self.l
    }
    pub fn nu0(&self) -> f64 {
        self.nu0
    }
    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    /// `|sqrt(W) L sqrt(V)|`.
    pub fn metric_norm(&self) -> Result<f64> {
        estimate_weighted_norm(&self.l, &self.v, &self.w, DEFAULT_TOL, NORM_MAX_ITER)
    }

    /// `(C x, D^{-1} v)` on the stacked space.
    pub fn forward_map(&self) -> CocoerciveMap {
        CocoerciveMap::product(vec![self.c.clone(), self.d_inv.clone()])
    }
}

/// Step-size constants of the two assemblies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConstantsReport {
    /// `|sqrt(W) L sqrt(V)|`
    pub c: f64,
    pub nu0: f64,
    pub mu0: f64,
    /// Maximizer of `beta_xi`; `None` where every `xi` is equivalent.
    pub xi_hat: Option<f64>,
    pub beta_hat: f64,
    pub beta: f64,
    pub feasible_class1: bool,
    pub feasible_class2: bool,
}

/// `(1 - c^2) min{nu0 / (1 + xi c), mu0 / (1 + c / xi)}`.
pub fn beta_xi(nu0: f64, mu0: f64, c: f64, xi: f64) -> f64 {
    let first = if nu0.is_infinite() { f64::INFINITY } else { nu0 / (1.0 + xi * c) };
    let second = if mu0.is_infinite() { f64::INFINITY } else { mu0 / (1.0 + c / xi) };
    (1.0 - c * c) * first.min(second)
}

/// Positive root of `mu0 c xi^2 + (mu0 - nu0) xi - nu0 c = 0`, where the
/// two terms of `beta_xi` balance.
fn balancing_xi(nu0: f64, mu0: f64, c: f64) -> f64 {
    let b = mu0 - nu0;
    let root = b.hypot(2.0 * c * (nu0 * mu0).sqrt());
    if b <= 0.0 {
        (root - b) / (2.0 * mu0 * c)
    } else {
        2.0 * nu0 * c / (root + b)
    }
}

/// Constants from `nu0`, `mu0` and `c`. Infinite constants (zero smooth
/// parts) and `c = 0` are handled by their limits.
pub fn constants_from(nu0: f64, mu0: f64, c: f64) -> ConstantsReport {
    let (xi_hat, beta_hat) = if c == 0.0 {
        (None, nu0.min(mu0))
    } else if nu0.is_infinite() && mu0.is_infinite() {
        (None, f64::INFINITY)
    } else if nu0.is_infinite() {
        (Some(f64::INFINITY), (1.0 - c * c) * mu0)
    } else if mu0.is_infinite() {
        (Some(0.0), (1.0 - c * c) * nu0)
    } else {
        let xi = balancing_xi(nu0, mu0, c);
        (Some(xi), beta_xi(nu0, mu0, c, xi))
    };
    let beta = nu0.min(mu0 * (1.0 - c * c));
    ConstantsReport {
        c,
        nu0,
        mu0,
        xi_hat,
        beta_hat,
        beta,
        feasible_class1: c < 1.0 && beta_hat > 0.5 + FEASIBILITY_MARGIN,
        feasible_class2: c < 1.0 && 2.0 * beta > 1.0 + FEASIBILITY_MARGIN,
    }
}

/// Constants of `prob`. Fails when the coupling is too strong for either
/// metric to be positive definite.
pub fn compute_constants(prob: &PrimalDualProblem) -> Result<ConstantsReport> {
    let c = prob.metric_norm()?;
    if c >= 1.0 {
        return Err(Error::Infeasible(format!(
            "metric-norm hypothesis |sqrt(W) L sqrt(V)| < 1 fails: c = {c}"
        )));
    }
    Ok(constants_from(prob.nu0, prob.mu0, c))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PdClass {
    One,
    Two,
}

/// Unit-step backward map of an assembled primal-dual instance.
#[derive(Clone, Debug)]
pub struct PrimalDualStep {
    prob: PrimalDualProblem,
    class: PdClass,
}

impl PrimalDualStep {
    pub fn class(&self) -> PdClass {
        self.class
    }

    pub fn problem(&self) -> &PrimalDualProblem {
        &self.prob
    }

    /// Dual half shared by both classes:
    /// `J_{W B^{-1}}(d + W (L y - b - r))`.
    fn dual_update(&self, d: &BlockVector, y: &BlockVector, b: &BlockVector) -> BlockVector {
        let p = &self.prob;
        let mut u = p.l.apply(y);
        u.axpy(-1.0, b);
        u.axpy(-1.0, &p.r);
        let arg = d + &p.w.apply(&u);
        p.b.inverse_resolvent(1.0, &p.w, &arg)
    }

    /// Maps the stacked extrapolated point `w = (c, d)` and forward estimate
    /// `r = (a, b)` to the stacked `(p, q)`.
    pub fn apply(&self, w: &BlockVector, r: &BlockVector) -> BlockVector {
        let p = &self.prob;
        let m = p.m();
        let (c, d) = w.split(m);
        let (a, b) = r.split(m);
        match self.class {
            PdClass::One => {
                let mut t = p.l.adjoint_apply(&d);
                t.axpy(1.0, &a);
                t.axpy(-1.0, &p.z);
                let mut arg = c.clone();
                arg.axpy(-1.0, &p.v.apply(&t));
                let primal = p.a.resolvent(1.0, &p.v, &arg);
                let mut y = primal.scaled(2.0);
                y.axpy(-1.0, &c);
                let dual = self.dual_update(&d, &y, &b);
                BlockVector::concat(&primal, &dual)
            }
            PdClass::Two => {
                let mut g = a.clone();
                g.axpy(-1.0, &p.z);
                let mut s = c.clone();
                s.axpy(-1.0, &p.v.apply(&g));
                let mut y = s.clone();
                y.axpy(-1.0, &p.v.apply(&p.l.adjoint_apply(&d)));
                let dual = self.dual_update(&d, &y, &b);
                let mut primal = s;
                primal.axpy(-1.0, &p.v.apply(&p.l.adjoint_apply(&dual)));
                BlockVector::concat(&primal, &dual)
            }
        }
    }

    /// Action of the metric the assembled iteration runs in.
    pub fn apply_metric(&self, g: &BlockVector) -> Result<BlockVector> {
        match self.class {
            PdClass::One => class1_metric(&self.prob, g),
            PdClass::Two => class2_metric(&self.prob, g),
        }
    }
}

/// Inverse of `(x, v) -> (V^{-1} x - L^* v, W^{-1} v - L x)` applied to
/// `g`, through conjugate gradient on the primal Schur complement
/// `V^{-1} - L^* W L`.
pub fn class1_metric(prob: &PrimalDualProblem, g: &BlockVector) -> Result<BlockVector> {
    check_dims(&prob.stacked_dims(), g)?;
    let (gx, gv) = g.split(prob.m());
    let mut rhs = gx.clone();
    rhs.axpy(1.0, &prob.l.adjoint_apply(&prob.w.apply(&gv)));
    let schur = |x: &BlockVector| {
        let mut y = prob.v.apply_inverse(x);
        y.axpy(-1.0, &prob.l.adjoint_apply(&prob.w.apply(&prob.l.apply(x))));
        y
    };
    let x = conjugate_gradient(schur, &rhs, CG_TOL, CG_MAX_ITER)?;
    let mut t = gv;
    t.axpy(1.0, &prob.l.apply(&x));
    let v = prob.w.apply(&t);
    Ok(BlockVector::concat(&x, &v))
}

/// `(V g_x, (W^{-1} - L V L^*)^{-1} g_v)`.
pub fn class2_metric(prob: &PrimalDualProblem, g: &BlockVector) -> Result<BlockVector> {
    check_dims(&prob.stacked_dims(), g)?;
    let (gx, gv) = g.split(prob.m());
    let op = |v: &BlockVector| {
        let mut y = prob.w.apply_inverse(v);
        y.axpy(-1.0, &prob.l.apply(&prob.v.apply(&prob.l.adjoint_apply(v))));
        y
    };
    let v = conjugate_gradient(op, &gv, CG_TOL, CG_MAX_ITER)?;
    Ok(BlockVector::concat(&prob.v.apply(&gx), &v))
}

/// Class I instance on the stacked space. Runs at unit step with constant
/// `beta_hat`.
pub fn assemble_class1(prob: &PrimalDualProblem) -> Result<ProblemInstance> {
    let k = compute_constants(prob)?;
    if !k.feasible_class1 {
        return Err(Error::Infeasible(format!(
            "class I needs beta_hat > 1/2, got beta_hat = {}",
            k.beta_hat
        )));
    }
    let step = PrimalDualStep {
        prob: prob.clone(),
        class: PdClass::One,
    };
    Ok(ProblemInstance::from_primal_dual(
        step,
        prob.forward_map(),
        k.beta_hat,
        BlockVector::zeros(&prob.stacked_dims()),
    ))
}

/// Class II instance on the stacked space. Requires every `A_i = 0`; runs at
/// unit step with constant `beta`.
pub fn assemble_class2(prob: &PrimalDualProblem) -> Result<ProblemInstance> {
    if !prob.a.is_zero() {
        return config("class II requires A_i = 0 for every primal block");
    }
    let k = compute_constants(prob)?;
    if !k.feasible_class2 {
        return Err(Error::Infeasible(format!("class II needs 2 beta > 1, got beta = {}", k.beta)));
    }
    let step = PrimalDualStep {
        prob: prob.clone(),
        class: PdClass::Two,
    };
    Ok(ProblemInstance::from_primal_dual(
        step,
        prob.forward_map(),
        k.beta,
        BlockVector::zeros(&prob.stacked_dims()),
    ))
}

/// Splits a stacked iterate into its primal and dual parts.
pub fn extract_primal_dual(x: &BlockVector, prob: &PrimalDualProblem) -> Result<(BlockVector, BlockVector)> {
    check_dims(&prob.stacked_dims(), x)?;
    Ok(x.split(prob.m()))
}

/// Violations of the coupled optimality system, per block. `None` marks a
/// block whose graph distance could not be evaluated.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualityReport {
    pub primal_blocks: Vec<Option<f64>>,
    pub dual_blocks: Vec<Option<f64>>,
    /// Largest checked primal violation.
    pub primal_inclusion_res: f64,
    /// Largest checked dual violation.
    pub dual_inclusion_res: f64,
    pub unchecked: Vec<String>,
}

/// Distances of `z - L^* v - C x` to `A x` and of `L x - r - D^{-1} v` to
/// `B^{-1} v`.
pub fn duality_residuals(primal: &BlockVector, dual: &BlockVector, prob: &PrimalDualProblem) -> Result<DualityReport> {
    check_dims(prob.primal_dims(), primal)?;
    check_dims(prob.dual_dims(), dual)?;
    let mut u = prob.z.clone();
    u.axpy(-1.0, &prob.l.adjoint_apply(dual));
    u.axpy(-1.0, &prob.c.apply(primal));
    let mut e = prob.l.apply(primal);
    e.axpy(-1.0, &prob.r);
    e.axpy(-1.0, &prob.d_inv.apply(dual));
    let primal_blocks = prob.a.graph_distance(primal, &u);
    let dual_blocks = prob.b.inverse_graph_distance(dual, &e);
    let mut unchecked = Vec::new();
    for (i, d) in primal_blocks.iter().enumerate() {
        if d.is_none() {
            unchecked.push(format!("primal block {i}"));
        }
    }
    for (k, d) in dual_blocks.iter().enumerate() {
        if d.is_none() {
            unchecked.push(format!("dual block {k}"));
        }
    }
    let worst = |v: &[Option<f64>]| v.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    Ok(DualityReport {
        primal_inclusion_res: worst(&primal_blocks),
        dual_inclusion_res: worst(&dual_blocks),
        primal_blocks,
        dual_blocks,
        unchecked,
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::operators::{Descriptor, ProxFunction};

    #[test]
    fn symmetric_constants() {
        for &c in &[0.1, 0.5, 0.9] {
            let k = constants_from(2.0, 2.0, c);
            assert_eq!(k.xi_hat, Some(1.0));
            assert!((k.beta_hat - 2.0 * (1.0 - c)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_coupling_limit() {
        let k = constants_from(3.0, 0.7, 0.0);
        assert_eq!(k.beta_hat, 0.7);
        assert_eq!(k.beta, 0.7);
        let k = constants_from(3.0, 0.7, 1e-9);
        assert!((k.beta_hat - 0.7).abs() < 1e-8);
    }

    #[test]
    fn infinite_limits() {
        let k = constants_from(f64::INFINITY, 2.0, 0.5);
        assert_eq!(k.beta_hat, 1.5);
        let k = constants_from(2.0, f64::INFINITY, 0.5);
        assert_eq!(k.beta_hat, 1.5);
        assert_eq!(k.beta, 2.0);
        let k = constants_from(f64::INFINITY, f64::INFINITY, 0.9);
        assert!(k.feasible_class1 && k.feasible_class2);
    }

    fn scalar_lasso_problem() -> PrimalDualProblem {
        // x in R: f = |.|, g = 1/2 (. - 2)^2, L = 1 ; minimizer x = 1
        PrimalDualProblem::new(PrimalDualParts {
            a: MonotoneBlock::uniform(Descriptor::Subdiff(ProxFunction::L1 { lambda: 1.0 }), 1),
            z: BlockVector::zeros(&[1]),
            v: Preconditioner::scalar(0.5, 1).unwrap(),
            c: CocoerciveMap::zero(&[1]),
            nu0: None,
            b: MonotoneBlock::uniform(
                Descriptor::Subdiff(ProxFunction::SquaredL2 {
                    lambda: 1.0,
                    center: Some(DVector::from_element(1, 2.0)),
                }),
                1,
            ),
            r: BlockVector::zeros(&[1]),
            w: Preconditioner::scalar(0.5, 1).unwrap(),
            d_inv: CocoerciveMap::zero(&[1]),
            mu0: None,
            l: BlockLinearOperator::single(DMatrix::identity(1, 1)),
        })
        .unwrap()
    }

    #[test]
    fn scalar_lasso_solution_has_zero_residuals() {
        let prob = scalar_lasso_problem();
        // dual v = x - 2 = -1 solves both inclusions
        let rep = duality_residuals(&BlockVector::single(vec![1.0]), &BlockVector::single(vec![-1.0]), &prob).unwrap();
        assert!(rep.primal_inclusion_res <= 1e-12 && rep.dual_inclusion_res <= 1e-12);
        let rep = duality_residuals(&BlockVector::single(vec![3.0]), &BlockVector::single(vec![0.5]), &prob).unwrap();
        assert!(rep.primal_inclusion_res.max(rep.dual_inclusion_res) > 0.1);
    }

    #[test]
    fn infeasible_coupling_rejected() {
        let mut parts_l = BlockLinearOperator::zeros(&[1], &[1]);
        parts_l.set(0, 0, DMatrix::from_element(1, 1, 3.0)).unwrap();
        let prob = PrimalDualProblem::new(PrimalDualParts {
            a: MonotoneBlock::zero(1),
            z: BlockVector::zeros(&[1]),
            v: Preconditioner::identity(),
            c: CocoerciveMap::zero(&[1]),
            nu0: None,
            b: MonotoneBlock::zero(1),
            r: BlockVector::zeros(&[1]),
            w: Preconditioner::identity(),
            d_inv: CocoerciveMap::zero(&[1]),
            mu0: None,
            l: parts_l,
        })
        .unwrap();
        assert!(matches!(compute_constants(&prob), Err(Error::Infeasible(_))));
        assert!(assemble_class1(&prob).is_err());
    }

    #[test]
    fn class2_rejects_nonzero_a() {
        assert!(assemble_class2(&scalar_lasso_problem()).is_err());
    }

    #[test]
    fn extract_round_trip() {
        let prob = scalar_lasso_problem();
        let x = BlockVector::new(vec![vec![1.5], vec![-0.5]]);
        let (p, d) = extract_primal_dual(&x, &prob).unwrap();
        assert_eq!(BlockVector::concat(&p, &d), x);
        assert!(extract_primal_dual(&BlockVector::single(vec![1.0]), &prob).is_err());
    }
}
