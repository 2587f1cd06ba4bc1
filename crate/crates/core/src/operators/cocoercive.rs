use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config, Error, Result};
use crate::spaces::{BlockVector, Preconditioner};

/// Applied to exact cocoercivity constants before they reach a solver so the
/// step-size bounds hold strictly in floating point.
pub const SAFETY_FACTOR: f64 = 1.01;

/// Passing threshold for audited slacks.
pub const SLACK_TOL: f64 = 1e-10;

/// Single-valued rule of a cocoercive map, acting on the flattened vector.
#[derive(Clone, Debug, PartialEq)]
pub enum CocoerciveRule {
    Zero,
    /// `x -> c x`
    Scaled(f64),
    /// `x -> Q x + q`, `Q` symmetric positive semidefinite.
    Affine { matrix: DMatrix<f64>, offset: DVector<f64> },
    /// `x -> A^T (A x - b)`, one summand per row of `A`.
    LeastSquares { design: DMatrix<f64>, target: DVector<f64> },
    /// `x -> L^T psi(L x - r)` with `psi(t) = clamp(t / mu, -lambda, lambda)`
    /// coordinatewise: the gradient of the smoothed l1 penalty
    /// `(1 / (2 mu)) |.|^2 [] lambda |.|_1` composed with `L x - r`.
    HuberComposite {
        operator: DMatrix<f64>,
        shift: DVector<f64>,
        mu: f64,
        lambda: f64,
    },
    /// Independent maps on consecutive runs of blocks.
    Product(Vec<CocoerciveMap>),
    /// Pointwise sum of maps on the same space.
    Sum(Vec<CocoerciveMap>),
}

/// A map `B` with `<x - y, Bx - By> >= beta |Bx - By|^2_U`.
///
/// `beta` is relative to whatever metric the owner pairs it with. Builders
/// return the constant for `U = Id`; see [`CocoerciveMap::beta_in_metric`].
#[derive(Clone, Debug, PartialEq)]
pub struct CocoerciveMap {
    rule: CocoerciveRule,
    dims: Vec<usize>,
    beta: f64,
}

fn largest_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    sym.clone().symmetric_eigenvalues().max().max(0.0)
}

fn inverse_or_inf(l: f64) -> f64 {
    if l > 0.0 {
        1.0 / l
    } else {
        f64::INFINITY
    }
}

impl CocoerciveMap {
    pub fn zero(dims: &[usize]) -> Self {
        Self {
            rule: CocoerciveRule::Zero,
            dims: dims.to_vec(),
            beta: f64::INFINITY,
        }
    }

    pub fn scaled(c: f64, dims: &[usize]) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return config(format!("scaling factor must be finite and nonnegative, got {c}"));
        }
        Ok(Self {
            rule: CocoerciveRule::Scaled(c),
            dims: dims.to_vec(),
            beta: inverse_or_inf(c),
        })
    }

    pub fn affine(matrix: DMatrix<f64>, offset: DVector<f64>, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().sum();
        if matrix.nrows() != n || matrix.ncols() != n || offset.len() != n {
            return config(format!(
                "affine map is {}x{} with offset {}, space dimension is {n}",
                matrix.nrows(),
                matrix.ncols(),
                offset.len()
            ));
        }
        let scale = matrix.amax().max(1.0);
        if (&matrix - matrix.transpose()).amax() > 1e-12 * scale {
            return config("affine map matrix must be symmetric");
        }
        if n > 0 && matrix.clone().symmetric_eigenvalues().min() < -1e-12 * scale {
            return config("affine map matrix must be positive semidefinite");
        }
        let beta = inverse_or_inf(largest_eigenvalue(&matrix));
        Ok(Self {
            rule: CocoerciveRule::Affine { matrix, offset },
            dims: dims.to_vec(),
            beta,
        })
    }

    pub fn least_squares(design: DMatrix<f64>, target: DVector<f64>, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().sum();
        if design.ncols() != n || design.nrows() != target.len() {
            return config(format!(
                "design is {}x{} with target {}, space dimension is {n}",
                design.nrows(),
                design.ncols(),
                target.len()
            ));
        }
        let beta = inverse_or_inf(largest_eigenvalue(&(design.transpose() * &design)));
        Ok(Self {
            rule: CocoerciveRule::LeastSquares { design, target },
            dims: dims.to_vec(),
            beta,
        })
    }

    pub fn huber_composite(
        operator: DMatrix<f64>,
        shift: DVector<f64>,
        mu: f64,
        lambda: f64,
        dims: &[usize],
    ) -> Result<Self> {
        let n: usize = dims.iter().sum();
        if operator.ncols() != n || operator.nrows() != shift.len() {
            return config(format!(
                "operator is {}x{} with shift {}, space dimension is {n}",
                operator.nrows(),
                operator.ncols(),
                shift.len()
            ));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return config(format!("smoothing parameter must be positive, got {mu}"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return config(format!("penalty weight must be finite and nonnegative, got {lambda}"));
        }
        let mut map = Self {
            rule: CocoerciveRule::HuberComposite {
                operator,
                shift,
                mu,
                lambda,
            },
            dims: dims.to_vec(),
            beta: 0.0,
        };
        map.beta = inverse_or_inf(largest_eigenvalue(&map.curvature_bound()));
        Ok(map)
    }

    /// Sum of maps on the same space, with the constant of the summed
    /// curvature bounds.
    pub fn sum(parts: Vec<CocoerciveMap>) -> Result<Self> {
        let Some(first) = parts.first() else {
            return config("a sum needs at least one part");
        };
        let dims = first.dims.clone();
        if let Some(p) = parts.iter().find(|p| p.dims != dims) {
            return config(format!("summands act on {:?} and {:?}", dims, p.dims));
        }
        let mut map = Self {
            rule: CocoerciveRule::Sum(parts),
            dims,
            beta: 0.0,
        };
        map.beta = inverse_or_inf(largest_eigenvalue(&map.curvature_bound()));
        Ok(map)
    }

    /// Stacks maps on consecutive blocks; the constant is the smallest part
    /// constant.
    pub fn product(parts: Vec<CocoerciveMap>) -> Self {
        let dims = parts.iter().flat_map(|p| p.dims.iter().copied()).collect();
        let beta = parts.iter().map(|p| p.beta).fold(f64::INFINITY, f64::min);
        Self {
            rule: CocoerciveRule::Product(parts),
            dims,
            beta,
        }
    }

    /// Replaces the advertised constant.
    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::NotPositive { value: beta });
        }
        self.beta = beta;
        Ok(self)
    }

    /// The constant divided by [`SAFETY_FACTOR`].
    pub fn deflated(self) -> Self {
        let beta = self.beta / SAFETY_FACTOR;
        Self { beta, ..self }
    }

    pub fn rule(&self) -> &CocoerciveRule {
        &self.rule
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_zero(&self) -> bool {
        match &self.rule {
            CocoerciveRule::Zero => true,
            CocoerciveRule::Scaled(c) => *c == 0.0,
            CocoerciveRule::HuberComposite { lambda, .. } => *lambda == 0.0,
            CocoerciveRule::Product(parts) | CocoerciveRule::Sum(parts) => parts.iter().all(CocoerciveMap::is_zero),
            _ => false,
        }
    }

    /// True when some part is a finite sum that supports minibatching.
    pub fn is_finite_sum(&self) -> bool {
        match &self.rule {
            CocoerciveRule::LeastSquares { .. } => true,
            CocoerciveRule::Product(parts) | CocoerciveRule::Sum(parts) => {
                parts.iter().any(CocoerciveMap::is_finite_sum)
            }
            _ => false,
        }
    }

    /// Number of summands of the largest finite-sum part.
    pub fn num_terms(&self) -> usize {
        match &self.rule {
            CocoerciveRule::LeastSquares { design, .. } => design.nrows(),
            CocoerciveRule::Product(parts) | CocoerciveRule::Sum(parts) => {
                parts.iter().map(CocoerciveMap::num_terms).max().unwrap_or(0)
            }
            _ => 0,
        }
    }

    /// Dense bound `H` with `B(x) - B(y) = M (x - y)` for some symmetric
    /// `0 <= M <= H`. Exact for affine rules.
    pub fn curvature_bound(&self) -> DMatrix<f64> {
        let n: usize = self.dims.iter().sum();
        match &self.rule {
            CocoerciveRule::Zero => DMatrix::zeros(n, n),
            CocoerciveRule::Scaled(c) => DMatrix::identity(n, n) * *c,
            CocoerciveRule::Affine { matrix, .. } => matrix.clone(),
            CocoerciveRule::LeastSquares { design, .. } => design.tr_mul(design),
            CocoerciveRule::HuberComposite { operator, mu, lambda, .. } => {
                if *lambda == 0.0 {
                    DMatrix::zeros(n, n)
                } else {
                    operator.tr_mul(operator) / *mu
                }
            }
            CocoerciveRule::Product(parts) => {
                let mut h = DMatrix::zeros(n, n);
                let mut start = 0;
                for p in parts {
                    let k: usize = p.dims.iter().sum();
                    h.view_mut((start, start), (k, k)).copy_from(&p.curvature_bound());
                    start += k;
                }
                h
            }
            CocoerciveRule::Sum(parts) => parts
                .iter()
                .fold(DMatrix::zeros(n, n), |acc, p| acc + p.curvature_bound()),
        }
    }

    /// Cocoercivity constant with respect to a diagonal metric `U`,
    /// `1 / lambda_max(sqrt(U) H sqrt(U))` for the curvature bound `H`.
    /// Exact for affine rules.
    pub fn beta_in_metric(&self, u: &Preconditioner) -> Result<f64> {
        u.check_compatible(&self.dims)?;
        let mut s = Vec::new();
        for (i, &d) in self.dims.iter().enumerate() {
            s.extend(u.block_weights(i, d).iter().map(|v| v.sqrt()));
        }
        let mut m = self.curvature_bound();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                m[(r, c)] *= s[r] * s[c];
            }
        }
        Ok(inverse_or_inf(largest_eigenvalue(&m)))
    }

    fn apply_flat(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.rule {
            CocoerciveRule::Zero => DVector::zeros(x.len()),
            CocoerciveRule::Scaled(c) => x * *c,
            CocoerciveRule::Affine { matrix, offset } => matrix * x + offset,
            CocoerciveRule::LeastSquares { design, target } => design.tr_mul(&(design * x - target)),
            CocoerciveRule::HuberComposite {
                operator,
                shift,
                mu,
                lambda,
            } => {
                let t = (operator * x - shift).map(|v| (v / mu).clamp(-lambda, *lambda));
                operator.tr_mul(&t)
            }
            CocoerciveRule::Sum(parts) => parts
                .iter()
                .fold(DVector::zeros(x.len()), |acc, p| acc + p.apply_flat(x)),
            CocoerciveRule::Product(parts) => {
                let mut out = DVector::zeros(x.len());
                let mut start = 0;
                for p in parts {
                    let n: usize = p.dims.iter().sum();
                    let y = p.apply_flat(&x.rows(start, n).into_owned());
                    out.rows_mut(start, n).copy_from(&y);
                    start += n;
                }
                out
            }
        }
    }

    fn sampled_flat<R: Rng + ?Sized>(&self, x: &DVector<f64>, batch: usize, rng: &mut R) -> DVector<f64> {
        match &self.rule {
            CocoerciveRule::LeastSquares { design, target } if batch < design.nrows() => {
                let rows = design.nrows();
                let mut g = DVector::zeros(x.len());
                for _ in 0..batch {
                    let j = rng.random_range(0..rows);
                    let row = design.row(j);
                    let resid = row.dot(&x.transpose()) - target[j];
                    g.axpy(resid, &row.transpose(), 1.0);
                }
                g * (rows as f64 / batch as f64)
            }
            CocoerciveRule::Sum(parts) => parts
                .iter()
                .fold(DVector::zeros(x.len()), |acc, p| acc + p.sampled_flat(x, batch, rng)),
            CocoerciveRule::Product(parts) => {
                let mut out = DVector::zeros(x.len());
                let mut start = 0;
                for p in parts {
                    let n: usize = p.dims.iter().sum();
                    let y = p.sampled_flat(&x.rows(start, n).into_owned(), batch, rng);
                    out.rows_mut(start, n).copy_from(&y);
                    start += n;
                }
                out
            }
            _ => self.apply_flat(x),
        }
    }

    pub fn apply(&self, x: &BlockVector) -> BlockVector {
        assert!(x.has_dims(&self.dims), "cocoercive map applied to a vector with the wrong layout");
        let y = self.apply_flat(&x.flatten());
        BlockVector::from_flat(&y, &self.dims).expect("layout checked above")
    }

    /// Unbiased estimate of `B x` averaging `batch` summands drawn uniformly
    /// with replacement. Parts without a finite-sum structure are exact, and
    /// so is everything once `batch` covers all summands.
    pub fn sampled_apply<R: Rng + ?Sized>(&self, x: &BlockVector, batch: usize, rng: &mut R) -> BlockVector {
        assert!(x.has_dims(&self.dims), "cocoercive map applied to a vector with the wrong layout");
        let y = self.sampled_flat(&x.flatten(), batch.max(1), rng);
        BlockVector::from_flat(&y, &self.dims).expect("layout checked above")
    }
}

/// Outcome of a randomized cocoercivity audit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CocoercivityReport {
    pub min_slack: f64,
    pub pass: bool,
    pub trials: usize,
}

const REFINE_STEPS: usize = 20;

/// Audits `<x - y, Bx - By> >= beta <Bx - By, M(Bx - By)>` on seeded random
/// pairs for a map and metric given by their actions.
///
/// Every other pair has its difference refined by a few power steps of
/// `d -> M(B(x + d) - B x)`, which pulls it toward the direction where the
/// inequality is tightest; purely random pairs rarely get there in high
/// dimension.
pub fn audit_cocoercivity(
    dims: &[usize],
    beta: f64,
    apply: impl Fn(&BlockVector) -> BlockVector,
    metric: impl Fn(&BlockVector) -> BlockVector,
    trials: usize,
    seed: u64,
) -> CocoercivityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = |rng: &mut ChaCha8Rng| {
        BlockVector::from_blocks(
            dims.iter()
                .map(|&d| DVector::from_fn(d, |_, _| StandardNormal.sample(&mut *rng)))
                .collect(),
        )
    };
    let mut min_slack = f64::INFINITY;
    for t in 0..trials.max(1) {
        let x = gaussian(&mut rng);
        let mut d = gaussian(&mut rng);
        if t % 2 == 1 {
            let radius = d.norm();
            let bx = apply(&x);
            for _ in 0..REFINE_STEPS {
                let mut diff = apply(&(&x + &d));
                diff.axpy(-1.0, &bx);
                let next = metric(&diff);
                let n = next.norm();
                if n == 0.0 || !n.is_finite() {
                    break;
                }
                d = next.scaled(radius / n);
            }
        }
        let y = &x + &d;
        let mut bd = apply(&y);
        bd.axpy(-1.0, &apply(&x));
        let lhs = d.dot(&bd);
        let rhs = if beta.is_infinite() {
            if bd.norm() == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            beta * bd.dot(&metric(&bd))
        };
        min_slack = min_slack.min(lhs - rhs);
    }
    CocoercivityReport {
        min_slack,
        pass: min_slack >= -SLACK_TOL,
        trials: trials.max(1),
    }
}

/// Audits the advertised constant of `b` in the diagonal metric `u`.
pub fn check_cocoercivity(b: &CocoerciveMap, u: &Preconditioner, trials: usize, seed: u64) -> CocoercivityReport {
    audit_cocoercivity(b.dims(), b.beta(), |x| b.apply(x), |x| u.apply(x), trials, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_tight() {
        let b = CocoerciveMap::scaled(1.0, &[3]).unwrap();
        let r = check_cocoercivity(&b, &Preconditioner::identity(), 50, 1);
        assert!(r.pass);
        assert!(r.min_slack.abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_least_squares_both_directions() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = CocoerciveMap::least_squares(a, DVector::from_element(1, 1.0), &[1]).unwrap();
        assert!((b.beta() - 0.25).abs() < 1e-15);
        let u = Preconditioner::identity();
        assert!(check_cocoercivity(&b, &u, 100, 3).pass);
        let inflated = b.with_beta(0.26).unwrap();
        let r = check_cocoercivity(&inflated, &u, 100, 3);
        assert!(!r.pass, "slack {}", r.min_slack);
    }

    #[test]
    fn zero_map_passes_any_constant() {
        let b = CocoerciveMap::zero(&[2, 1]).with_beta(1e6).unwrap();
        assert!(check_cocoercivity(&b, &Preconditioner::identity(), 20, 0).pass);
    }

    #[test]
    fn minibatch_with_full_batch_is_exact() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let b = CocoerciveMap::least_squares(a, DVector::from_vec(vec![1.0, 0.0, -2.0]), &[2]).unwrap();
        let x = BlockVector::single(vec![0.3, -0.7]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(b.sampled_apply(&x, 3, &mut rng), b.apply(&x));
    }

    #[test]
    fn metric_constant_matches_sandwich() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = CocoerciveMap::affine(q, DVector::zeros(2), &[1, 1]).unwrap();
        let u = Preconditioner::scalars(vec![0.5, 2.0]).unwrap();
        let beta = b.beta_in_metric(&u).unwrap();
        let b = b.with_beta(beta).unwrap();
        assert!(check_cocoercivity(&b, &u, 100, 9).pass);
        let inflated = b.clone().with_beta(beta * 1.05).unwrap();
        assert!(!check_cocoercivity(&inflated, &u, 100, 9).pass);
    }

    #[test]
    fn rejects_indefinite_affine() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(CocoerciveMap::affine(q, DVector::zeros(2), &[2]).is_err());
    }
}
