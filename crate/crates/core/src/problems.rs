//! Demo problems: lasso, box-constrained coupled quadratic, and a
//! Moreau-smoothed l1 composite, each with a forward-backward form, a
//! primal-dual form, and an independent reference solver.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::operators::{CocoerciveMap, Descriptor, MonotoneBlock, ProxFunction, SAFETY_FACTOR};
use crate::primal_dual::{constants_from, PrimalDualParts, PrimalDualProblem};
use crate::sifb::ProblemInstance;
use crate::spaces::{estimate_weighted_norm, BlockLinearOperator, BlockVector, Preconditioner, DEFAULT_TOL};

/// Primal step as a fraction of the inverse Lipschitz constant of the smooth part.
const PRIMAL_STEP_FRACTION: f64 = 0.9;
/// Target `|sqrt(W) L sqrt(V)|^2` when choosing the dual step.
const COUPLING_TARGET: f64 = 0.27;

#[derive(Clone, Debug, PartialEq)]
pub enum DemoKind {
    /// `min 1/2 |A x - b|^2 + lambda |x|_1`
    Lasso {
        design: DMatrix<f64>,
        target: DVector<f64>,
        lambda: f64,
    },
    /// `min 1/2 x^T Q x - c^T x` over the box `[lo, hi]^n`, one primal block
    /// per entry of `block_dims`.
    Coupled {
        q: DMatrix<f64>,
        c: DVector<f64>,
        lo: f64,
        hi: f64,
        block_dims: Vec<usize>,
    },
    /// `min 1/2 |B x - b|^2 + sum_k h(L_k x - r_k)` where
    /// `h = (1 / (2 mu)) |.|^2 [] lambda |.|` is the Huber function.
    ParallelSum {
        design: DMatrix<f64>,
        target: DVector<f64>,
        coupling: DMatrix<f64>,
        shift: DVector<f64>,
        mu: f64,
        lambda: f64,
    },
}

/// Which primal-dual splitting of the lasso to build.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LassoDualForm {
    /// Smooth data term as the primal smooth part, l1 as a dual block
    /// through `L = Id`; `A_1 = 0`, so both classes apply.
    #[default]
    L1Dual,
    /// l1 as `A_1`, data term as a dual block through `L = A`; class I only.
    DataDual,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoProblem {
    pub name: String,
    pub kind: DemoKind,
    pub seed: u64,
    /// Generation notes such as regularizations applied.
    pub notes: Vec<String>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut *rng))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(&mut *rng))
}

/// `n x p` matrix `U S V^T` with orthonormal `U`, `V` and singular values
/// on a geometric ladder from 1 down to `1 / sqrt(cond)`.
pub fn synthetic_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize, cond: f64) -> DMatrix<f64> {
    let r = n.min(p);
    let u = gaussian_matrix(rng, n, r).qr().q();
    let v = gaussian_matrix(rng, p, r).qr().q();
    let s = DVector::from_fn(r, |i, _| {
        if r == 1 {
            1.0
        } else {
            cond.powf(-(i as f64) / (2.0 * (r - 1) as f64))
        }
    });
    u * DMatrix::from_diagonal(&s) * v.transpose()
}

fn top_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        0.0
    } else {
        sym.clone().symmetric_eigenvalues().max()
    }
}

/// Sparse ground truth plus small noise.
fn sparse_target(rng: &mut ChaCha8Rng, a: &DMatrix<f64>) -> DVector<f64> {
    let p = a.ncols();
    let k = (p / 5).max(1);
    let mut x = DVector::zeros(p);
    for _ in 0..k {
        let j = rng.random_range(0..p);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        x[j] = sign * (1.0 + rng.random::<f64>());
    }
    a * x + gaussian_vector(rng, a.nrows()) * 0.01
}

/// Random lasso with `n` samples, `p` features and `cond` the condition
/// number of `A^T A` on its range.
pub fn build_lasso(n: usize, p: usize, lambda: f64, cond: f64, seed: u64) -> Result<DemoProblem> {
    if n == 0 || p == 0 {
        return config("lasso needs n, p >= 1");
    }
    if !(cond >= 1.0 && cond.is_finite()) {
        return config(format!("condition number must be at least 1, got {cond}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = synthetic_matrix(&mut rng, n, p, cond);
    let target = sparse_target(&mut rng, &design);
    let mut demo = lasso_from_data(design, target, lambda)?;
    demo.seed = seed;
    Ok(demo)
}

pub fn lasso_from_data(design: DMatrix<f64>, target: DVector<f64>, lambda: f64) -> Result<DemoProblem> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return config(format!("lasso weight must be positive, got {lambda}"));
    }
    if design.nrows() != target.len() {
        return config(format!("design has {} rows, target has {}", design.nrows(), target.len()));
    }
    Ok(DemoProblem {
        name: "lasso".into(),
        kind: DemoKind::Lasso { design, target, lambda },
        seed: 0,
        notes: Vec::new(),
    })
}

/// Random `m`-block box-constrained quadratic with coupled blocks.
pub fn build_coupled_system(m: usize, dims: &[usize], seed: u64) -> Result<DemoProblem> {
    if m < 2 {
        return config(format!("coupled system needs at least 2 blocks, got {m}"));
    }
    if dims.len() != m {
        return config(format!("{m} blocks but {} block dimensions", dims.len()));
    }
    let n: usize = dims.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = gaussian_matrix(&mut rng, 2 * n, n);
    let mut q = g.tr_mul(&g) / (2 * n) as f64;
    q = (&q + q.transpose()) * 0.5;
    let c = gaussian_vector(&mut rng, n) * 2.0;
    let mut notes = Vec::new();
    let scale = q.amax().max(1.0);
    if q.clone().symmetric_eigenvalues().min() < 1e-12 * scale {
        for i in 0..n {
            q[(i, i)] += 1e-6;
        }
        notes.push("ridge 1e-6 added to Q".into());
    }
    let mut demo = coupled_from(q, c, -1.0, 1.0, dims)?;
    demo.seed = seed;
    demo.notes = notes;
    Ok(demo)
}

pub fn coupled_from(q: DMatrix<f64>, c: DVector<f64>, lo: f64, hi: f64, dims: &[usize]) -> Result<DemoProblem> {
    let n: usize = dims.iter().sum();
    if q.nrows() != n || q.ncols() != n || c.len() != n {
        return config(format!("Q is {}x{} and c has {}, blocks total {n}", q.nrows(), q.ncols(), c.len()));
    }
    if !(lo <= hi) {
        return config(format!("empty box [{lo}, {hi}]"));
    }
    // validates symmetry and semidefiniteness
    CocoerciveMap::affine(q.clone(), -&c, dims)?;
    Ok(DemoProblem {
        name: "coupled".into(),
        kind: DemoKind::Coupled {
            q,
            c,
            lo,
            hi,
            block_dims: dims.to_vec(),
        },
        seed: 0,
        notes: Vec::new(),
    })
}

/// Random smoothed-l1 composite with an `n x p` full-column-rank data
/// matrix and a `p x p` coupling with singular values in `[0.5, 1]`.
pub fn build_parallel_sum_instance(n: usize, p: usize, mu: f64, lambda: f64, seed: u64) -> Result<DemoProblem> {
    if p == 0 || n < p {
        return config(format!("parallel-sum instance needs n >= p >= 1, got n = {n}, p = {p}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = synthetic_matrix(&mut rng, n, p, 10.0);
    let target = sparse_target(&mut rng, &design);
    let coupling = synthetic_matrix(&mut rng, p, p, 4.0);
    let shift = gaussian_vector(&mut rng, p) * 0.1;
    let mut demo = parallel_sum_from(design, target, coupling, shift, mu, lambda)?;
    demo.seed = seed;
    Ok(demo)
}

pub fn parallel_sum_from(
    design: DMatrix<f64>,
    target: DVector<f64>,
    coupling: DMatrix<f64>,
    shift: DVector<f64>,
    mu: f64,
    lambda: f64,
) -> Result<DemoProblem> {
    if !(mu > 0.0 && mu.is_finite()) {
        return config(format!("smoothing parameter must be positive, got {mu}"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return config(format!("penalty weight must be finite and nonnegative, got {lambda}"));
    }
    if design.nrows() != target.len() || coupling.ncols() != design.ncols() || coupling.nrows() != shift.len() {
        return config("parallel-sum data shapes are inconsistent");
    }
    Ok(DemoProblem {
        name: "parallel_sum".into(),
        kind: DemoKind::ParallelSum {
            design,
            target,
            coupling,
            shift,
            mu,
            lambda,
        },
        seed: 0,
        notes: Vec::new(),
    })
}

/// Huber function `(1/(2 mu)) t^2` for `|t| <= lambda mu`, else
/// `lambda |t| - lambda^2 mu / 2`.
pub fn huber(t: f64, mu: f64, lambda: f64) -> f64 {
    if t.abs() <= lambda * mu {
        t * t / (2.0 * mu)
    } else {
        lambda * t.abs() - lambda * lambda * mu / 2.0
    }
}

/// Dual step `sigma` for primal step `tau`: starts from `|sqrt(W) L
/// sqrt(V)|^2 = COUPLING_TARGET` and halves until both classes are feasible.
fn dual_step(tau: f64, l_norm: f64, nu0: f64, mu0_times_sigma: f64) -> f64 {
    if l_norm == 0.0 {
        return 1.0;
    }
    let mut sigma = COUPLING_TARGET / (tau * l_norm * l_norm);
    for _ in 0..60 {
        let c = (tau * sigma).sqrt() * l_norm;
        let k = constants_from(nu0, mu0_times_sigma / sigma, c);
        if k.feasible_class1 && k.feasible_class2 {
            break;
        }
        sigma *= 0.5;
    }
    sigma
}

fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    estimate_weighted_norm(
        &BlockLinearOperator::single(m.clone()),
        &Preconditioner::identity(),
        &Preconditioner::identity(),
        DEFAULT_TOL,
        100_000,
    )
}

impl DemoProblem {
    /// Block layout of the primal variable.
    pub fn primal_dims(&self) -> Vec<usize> {
        match &self.kind {
            DemoKind::Lasso { design, .. } | DemoKind::ParallelSum { design, .. } => vec![design.ncols()],
            DemoKind::Coupled { block_dims, .. } => block_dims.clone(),
        }
    }

    /// Objective value at a primal point; infinite outside the feasible set.
    pub fn objective(&self, x: &BlockVector) -> f64 {
        let x = x.flatten();
        match &self.kind {
            DemoKind::Lasso { design, target, lambda } => {
                0.5 * (design * &x - target).norm_squared() + lambda * x.iter().map(|v| v.abs()).sum::<f64>()
            }
            DemoKind::Coupled { q, c, lo, hi, .. } => {
                let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
                if x.iter().any(|&v| v < lo - tol || v > hi + tol) {
                    return f64::INFINITY;
                }
                0.5 * x.dot(&(q * &x)) - c.dot(&x)
            }
            DemoKind::ParallelSum {
                design,
                target,
                coupling,
                shift,
                mu,
                lambda,
            } => {
                let t = coupling * &x - shift;
                0.5 * (design * &x - target).norm_squared() + t.iter().map(|&v| huber(v, *mu, *lambda)).sum::<f64>()
            }
        }
    }

    /// Forward-backward instance `0 in A x + B x` in the unit metric, with
    /// the smooth part as `B` and the constant deflated for safety.
    pub fn sifb_instance(&self) -> Result<ProblemInstance> {
        let dims = self.primal_dims();
        let (a, b) = match &self.kind {
            DemoKind::Lasso { design, target, lambda } => (
                MonotoneBlock::uniform(Descriptor::Subdiff(ProxFunction::L1 { lambda: *lambda }), 1),
                CocoerciveMap::least_squares(design.clone(), target.clone(), &dims)?,
            ),
            DemoKind::Coupled { q, c, lo, hi, .. } => (
                MonotoneBlock::uniform(Descriptor::Subdiff(ProxFunction::Box { lo: *lo, hi: *hi }), dims.len()),
                CocoerciveMap::affine(q.clone(), -c, &dims)?,
            ),
            DemoKind::ParallelSum {
                design,
                target,
                coupling,
                shift,
                mu,
                lambda,
            } => (
                MonotoneBlock::zero(1),
                CocoerciveMap::sum(vec![
                    CocoerciveMap::least_squares(design.clone(), target.clone(), &dims)?,
                    CocoerciveMap::huber_composite(coupling.clone(), shift.clone(), *mu, *lambda, &dims)?,
                ])?,
            ),
        };
        ProblemInstance::new(a, b.deflated(), Preconditioner::identity(), BlockVector::zeros(&dims))
    }

    /// Primal-dual form solvable by both classes (`A_i = 0` throughout).
    pub fn primal_dual_problem(&self) -> Result<PrimalDualProblem> {
        match &self.kind {
            DemoKind::Lasso { .. } => self.lasso_primal_dual(LassoDualForm::L1Dual),
            DemoKind::Coupled { q, c, lo, hi, block_dims } => {
                let dims = block_dims.as_slice();
                let tau = PRIMAL_STEP_FRACTION / top_eigenvalue(q);
                let cmap = CocoerciveMap::affine(q.clone(), -c, dims)?;
                let nu0 = cmap.beta_in_metric(&Preconditioner::uniform(tau)?)? / SAFETY_FACTOR;
                let sigma = dual_step(tau, 1.0, nu0, f64::INFINITY);
                PrimalDualProblem::new(PrimalDualParts {
                    a: MonotoneBlock::zero(dims.len()),
                    z: BlockVector::zeros(dims),
                    v: Preconditioner::uniform(tau)?,
                    c: cmap,
                    nu0: None,
                    b: MonotoneBlock::uniform(Descriptor::Subdiff(ProxFunction::Box { lo: *lo, hi: *hi }), dims.len()),
                    r: BlockVector::zeros(dims),
                    w: Preconditioner::uniform(sigma)?,
                    d_inv: CocoerciveMap::zero(dims),
                    mu0: None,
                    l: BlockLinearOperator::block_identity(dims),
                })
            }
            DemoKind::ParallelSum {
                design,
                target,
                coupling,
                shift,
                mu,
                lambda,
            } => {
                let p = design.ncols();
                let q_dim = coupling.nrows();
                let tau = PRIMAL_STEP_FRACTION / top_eigenvalue(&design.tr_mul(design));
                let cmap = CocoerciveMap::least_squares(design.clone(), target.clone(), &[p])?;
                let nu0 = cmap.beta_in_metric(&Preconditioner::uniform(tau)?)? / SAFETY_FACTOR;
                let l_norm = spectral_norm(coupling)?;
                // D^{-1} = mu Id has constant 1 / (sigma mu) in the metric sigma Id
                let sigma = dual_step(tau, l_norm, nu0, 1.0 / (mu * SAFETY_FACTOR));
                PrimalDualProblem::new(PrimalDualParts {
                    a: MonotoneBlock::zero(1),
                    z: BlockVector::zeros(&[p]),
                    v: Preconditioner::uniform(tau)?,
                    c: cmap,
                    nu0: None,
                    b: MonotoneBlock::uniform(Descriptor::Subdiff(ProxFunction::L1 { lambda: *lambda }), 1),
                    r: BlockVector::from_blocks(vec![shift.clone()]),
                    w: Preconditioner::uniform(sigma)?,
                    d_inv: CocoerciveMap::scaled(*mu, &[q_dim])?,
                    mu0: None,
                    l: BlockLinearOperator::single(coupling.clone()),
                })
            }
        }
    }

    /// Either primal-dual splitting of a lasso.
    pub fn lasso_primal_dual(&self, form: LassoDualForm) -> Result<PrimalDualProblem> {
        let DemoKind::Lasso { design, target, lambda } = &self.kind else {
            return config(format!("{} is not a lasso", self.name));
        };
        let p = design.ncols();
        let n = design.nrows();
        match form {
            LassoDualForm::L1Dual => {
                let tau = PRIMAL_STEP_FRACTION / top_eigenvalue(&design.tr_mul(design));
                let cmap = CocoerciveMap::least_squares(design.clone(), target.clone(), &[p])?;
                let nu0 = cmap.beta_in_metric(&Preconditioner::uniform(tau)?)? / SAFETY_FACTOR;
                let sigma = dual_step(tau, 1.0, nu0, f64::INFINITY);
                PrimalDualProblem::new(PrimalDualParts {
                    a: MonotoneBlock::zero(1),
                    z: BlockVector::zeros(&[p]),
                    v: Preconditioner::uniform(tau)?,
                    c: cmap,
                    nu0: None,
                    b: MonotoneBlock::uniform(Descriptor::Subdiff(ProxFunction::L1 { lambda: *lambda }), 1),
                    r: BlockVector::zeros(&[p]),
                    w: Preconditioner::uniform(sigma)?,
                    d_inv: CocoerciveMap::zero(&[p]),
                    mu0: None,
                    l: BlockLinearOperator::block_identity(&[p]),
                })
            }
            LassoDualForm::DataDual => {
                let step = PRIMAL_STEP_FRACTION / spectral_norm(design)?;
                PrimalDualProblem::new(PrimalDualParts {
                    a: MonotoneBlock::uniform(Descriptor::Subdiff(ProxFunction::L1 { lambda: *lambda }), 1),
                    z: BlockVector::zeros(&[p]),
                    v: Preconditioner::uniform(step)?,
                    c: CocoerciveMap::zero(&[p]),
                    nu0: None,
                    b: MonotoneBlock::uniform(
                        Descriptor::Subdiff(ProxFunction::SquaredL2 {
                            lambda: 1.0,
                            center: Some(target.clone()),
                        }),
                        1,
                    ),
                    r: BlockVector::zeros(&[n]),
                    w: Preconditioner::uniform(step)?,
                    d_inv: CocoerciveMap::zero(&[n]),
                    mu0: None,
                    l: BlockLinearOperator::single(design.clone()),
                })
            }
        }
    }
}

impl DemoProblem {
    /// Dual solution paired with the primal solution `x` in the primal-dual
    /// form built by [`DemoProblem::primal_dual_problem`], or by
    /// [`DemoProblem::lasso_primal_dual`] when `form` is given.
    pub fn dual_reference(&self, x: &BlockVector, form: Option<LassoDualForm>) -> Result<BlockVector> {
        let x = x.flatten();
        let v = match (&self.kind, form.unwrap_or(LassoDualForm::L1Dual)) {
            (DemoKind::Lasso { design, target, .. }, LassoDualForm::L1Dual) => -design.tr_mul(&(design * &x - target)),
            (DemoKind::Lasso { design, target, .. }, LassoDualForm::DataDual) => design * &x - target,
            (DemoKind::Coupled { q, c, block_dims, .. }, _) => {
                return BlockVector::from_flat(&(c - q * &x), block_dims);
            }
            (
                DemoKind::ParallelSum {
                    coupling,
                    shift,
                    mu,
                    lambda,
                    ..
                },
                _,
            ) => (coupling * &x - shift).map(|t| (t / mu).clamp(-lambda, *lambda)),
        };
        Ok(BlockVector::from_blocks(vec![v]))
    }
}

/// Solution from a method that shares no code with the splitting solvers:
/// ISTA for the lasso, projected gradient for the box quadratic, and a
/// line-searched semismooth Newton method (or a normal-equations solve when
/// `lambda = 0`) for the smoothed composite. `tol` bounds the final change
/// or gradient norm.
pub fn reference_oracle(demo: &DemoProblem, tol: f64) -> Result<BlockVector> {
    if !(tol > 0.0) {
        return config(format!("oracle tolerance must be positive, got {tol}"));
    }
    let flat = match &demo.kind {
        DemoKind::Lasso { design, target, lambda } => oracle::ista(design, target, *lambda, tol)?,
        DemoKind::Coupled { q, c, lo, hi, .. } => oracle::projected_gradient(q, c, *lo, *hi, tol)?,
        DemoKind::ParallelSum {
            design,
            target,
            coupling,
            shift,
            mu,
            lambda,
        } => {
            if *lambda == 0.0 {
                oracle::least_squares(design, target)?
            } else {
                oracle::huber_newton(design, target, coupling, shift, *mu, *lambda, tol)?
            }
        }
    };
    BlockVector::from_flat(&flat, &demo.primal_dims())
}

mod oracle {
    use nalgebra::{DMatrix, DVector};

    use crate::error::{Error, Result};

    const MAX_ITER: usize = 5_000_000;

    fn lipschitz(m: &DMatrix<f64>) -> f64 {
        m.clone().symmetric_eigenvalues().max()
    }

    fn shrink(v: f64, t: f64) -> f64 {
        v.signum() * (v.abs() - t).max(0.0)
    }

    pub fn ista(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64, tol: f64) -> Result<DVector<f64>> {
        let gram = a.transpose() * a;
        let atb = a.transpose() * b;
        let step = 1.0 / lipschitz(&gram);
        let mut x = DVector::zeros(a.ncols());
        let mut change = f64::INFINITY;
        for _ in 0..MAX_ITER {
            let g = &gram * &x - &atb;
            let next = (&x - g * step).map(|v| shrink(v, step * lambda));
            change = (&next - &x).amax();
            x = next;
            if change <= tol {
                return Ok(x);
            }
        }
        Err(Error::OracleNotConverged {
            iterations: MAX_ITER,
            change,
        })
    }

    pub fn projected_gradient(q: &DMatrix<f64>, c: &DVector<f64>, lo: f64, hi: f64, tol: f64) -> Result<DVector<f64>> {
        let step = 1.0 / lipschitz(q);
        let mut x = DVector::zeros(c.len()).map(|v: f64| v.clamp(lo, hi));
        let mut change = f64::INFINITY;
        for _ in 0..MAX_ITER {
            let next = (&x - (q * &x - c) * step).map(|v| v.clamp(lo, hi));
            change = (&next - &x).amax();
            x = next;
            if change <= tol {
                return Ok(x);
            }
        }
        Err(Error::OracleNotConverged {
            iterations: MAX_ITER,
            change,
        })
    }

    pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
        let gram = a.transpose() * a;
        gram.cholesky()
            .map(|ch| ch.solve(&(a.transpose() * b)))
            .ok_or_else(|| Error::Config("data matrix is not of full column rank".into()))
    }

    /// Minimizes `1/2 |B x - b|^2 + sum_k huber(L_k x - r_k)`.
    pub fn huber_newton(
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        l: &DMatrix<f64>,
        r: &DVector<f64>,
        mu: f64,
        lambda: f64,
        tol: f64,
    ) -> Result<DVector<f64>> {
        let h = |t: f64| {
            if t.abs() <= lambda * mu {
                t * t / (2.0 * mu)
            } else {
                lambda * t.abs() - 0.5 * lambda * lambda * mu
            }
        };
        let value = |x: &DVector<f64>| {
            0.5 * (a * x - b).norm_squared() + (l * x - r).iter().map(|&t| h(t)).sum::<f64>()
        };
        let gradient = |x: &DVector<f64>| {
            let t = (l * x - r).map(|v| (v / mu).clamp(-lambda, lambda));
            a.transpose() * (a * x - b) + l.transpose() * t
        };
        let gram = a.transpose() * a;
        let mut x = least_squares(a, b)?;
        let mut grad_norm = f64::INFINITY;
        for _ in 0..10_000 {
            let g = gradient(&x);
            grad_norm = g.norm();
            if grad_norm <= tol {
                return Ok(x);
            }
            // generalized Hessian: quadratic-region rows of L contribute 1/mu
            let t = l * &x - r;
            let mut hess = gram.clone();
            for k in 0..l.nrows() {
                if t[k].abs() <= lambda * mu {
                    let row = l.row(k).transpose();
                    hess += &row * row.transpose() / mu;
                }
            }
            let dir = match hess.cholesky() {
                Some(ch) => -ch.solve(&g),
                None => -g.clone(),
            };
            let f0 = value(&x);
            let slope = g.dot(&dir);
            let mut s = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand = &x + &dir * s;
                if value(&cand) <= f0 + 1e-4 * s * slope {
                    x = cand;
                    moved = true;
                    break;
                }
                s *= 0.5;
            }
            if !moved {
                // the line search stalls only at roundoff level
                x += &dir * s;
            }
        }
        Err(Error::OracleNotConverged {
            iterations: 10_000,
            change: grad_norm,
        })
    }
}

/// Smallest weight for which the lasso solution is zero, `|A^T b|_inf`.
pub fn lasso_lambda_max(design: &DMatrix<f64>, target: &DVector<f64>) -> f64 {
    (design.transpose() * target).amax()
}
