use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::preconditioner::Preconditioner;
use super::vector::{check_dims, BlockVector};
use crate::error::{Error, Result};

/// Seed of the power-iteration start vector.
const POWER_ITERATION_SEED: u64 = 0x5EED_0F_5EED;

/// Grid of dense blocks `L[k][i]: R^{primal_dims[i]} -> R^{dual_dims[k]}`.
/// Missing entries are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLinearOperator {
    primal_dims: Vec<usize>,
    dual_dims: Vec<usize>,
    entries: Vec<Vec<Option<DMatrix<f64>>>>,
}

impl BlockLinearOperator {
    pub fn zeros(primal_dims: &[usize], dual_dims: &[usize]) -> Self {
        Self {
            primal_dims: primal_dims.to_vec(),
            dual_dims: dual_dims.to_vec(),
            entries: vec![vec![None; primal_dims.len()]; dual_dims.len()],
        }
    }

    /// One-block operator wrapping a single matrix.
    pub fn single(matrix: DMatrix<f64>) -> Self {
        let mut op = Self::zeros(&[matrix.ncols()], &[matrix.nrows()]);
        op.entries[0][0] = Some(matrix);
        op
    }

    /// Identity coupling `L[k][i] = delta_{ki} Id` between matching layouts.
    pub fn block_identity(dims: &[usize]) -> Self {
        let mut op = Self::zeros(dims, dims);
        for (i, &d) in dims.iter().enumerate() {
            op.entries[i][i] = Some(DMatrix::identity(d, d));
        }
        op
    }

    pub fn set(&mut self, k: usize, i: usize, matrix: DMatrix<f64>) -> Result<()> {
        if k >= self.dual_dims.len() {
            return Err(Error::BlockCount {
                expected: self.dual_dims.len(),
                found: k + 1,
            });
        }
        if i >= self.primal_dims.len() {
            return Err(Error::BlockCount {
                expected: self.primal_dims.len(),
                found: i + 1,
            });
        }
        if matrix.nrows() != self.dual_dims[k] {
            return Err(Error::Shape {
                block: k,
                expected: self.dual_dims[k],
                found: matrix.nrows(),
            });
        }
        if matrix.ncols() != self.primal_dims[i] {
            return Err(Error::Shape {
                block: i,
                expected: self.primal_dims[i],
                found: matrix.ncols(),
            });
        }
        self.entries[k][i] = Some(matrix);
        Ok(())
    }

    pub fn entry(&self, k: usize, i: usize) -> Option<&DMatrix<f64>> {
        self.entries[k][i].as_ref()
    }

    pub fn primal_dims(&self) -> &[usize] {
        &self.primal_dims
    }

    pub fn dual_dims(&self) -> &[usize] {
        &self.dual_dims
    }

    pub fn is_zero(&self) -> bool {
        self.entries
            .iter()
            .flatten()
            .all(|e| e.as_ref().map_or(true, |m| m.iter().all(|&v| v == 0.0)))
    }

    /// `(sum_i L[k][i] x_i)_k`
    pub fn apply(&self, x: &BlockVector) -> BlockVector {
        debug_assert!(x.has_dims(&self.primal_dims));
        let blocks = self
            .entries
            .iter()
            .zip(&self.dual_dims)
            .map(|(row, &dk)| {
                let mut acc = DVector::zeros(dk);
                for (i, e) in row.iter().enumerate() {
                    if let Some(m) = e {
                        acc.gemv(1.0, m, x.block(i), 1.0);
                    }
                }
                acc
            })
            .collect();
        BlockVector::from_blocks(blocks)
    }

    /// `(sum_k L[k][i]^T v_k)_i`
    pub fn adjoint_apply(&self, v: &BlockVector) -> BlockVector {
        debug_assert!(v.has_dims(&self.dual_dims));
        let mut out = BlockVector::zeros(&self.primal_dims);
        for (k, row) in self.entries.iter().enumerate() {
            for (i, e) in row.iter().enumerate() {
                if let Some(m) = e {
                    out.block_mut(i).gemv_tr(1.0, m, v.block(k), 1.0);
                }
            }
        }
        out
    }

    pub fn try_apply(&self, x: &BlockVector) -> Result<BlockVector> {
        check_dims(&self.primal_dims, x)?;
        Ok(self.apply(x))
    }

    pub fn try_adjoint_apply(&self, v: &BlockVector) -> Result<BlockVector> {
        check_dims(&self.dual_dims, v)?;
        Ok(self.adjoint_apply(v))
    }

    /// Dense matrix acting on flattened vectors.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let rows: usize = self.dual_dims.iter().sum();
        let cols: usize = self.primal_dims.iter().sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut r0 = 0;
        for (k, row) in self.entries.iter().enumerate() {
            let mut c0 = 0;
            for (i, e) in row.iter().enumerate() {
                if let Some(m) = e {
                    out.view_mut((r0, c0), (m.nrows(), m.ncols())).copy_from(m);
                }
                c0 += self.primal_dims[i];
            }
            r0 += self.dual_dims[k];
        }
        out
    }
}

/// Deterministic pseudo-random unit vector with the given block layout.
pub(crate) fn seeded_unit_vector(dims: &[usize], seed: u64) -> BlockVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = BlockVector::from_blocks(
        dims.iter()
            .map(|&d| DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng)))
            .collect(),
    );
    let n = x.norm();
    if n > 0.0 {
        x.scale_mut(1.0 / n);
    }
    x
}

/// Estimates `|sqrt(W) L sqrt(V)|` by power iteration on
/// `sqrt(V) L^* W L sqrt(V)`.
///
/// Stops once the eigen-residual `|Gx - rho x|` drops below `tol * rho`.
pub fn estimate_weighted_norm(
    op: &BlockLinearOperator,
    v: &Preconditioner,
    w: &Preconditioner,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    v.check_compatible(op.primal_dims())?;
    w.check_compatible(op.dual_dims())?;
    if op.primal_dims().iter().sum::<usize>() == 0 || op.dual_dims().iter().sum::<usize>() == 0 || op.is_zero() {
        return Ok(0.0);
    }
    let gram = |x: &BlockVector| -> BlockVector {
        let y = op.apply(&v.apply_sqrt(x));
        v.apply_sqrt(&op.adjoint_apply(&w.apply(&y)))
    };

    let mut x = seeded_unit_vector(op.primal_dims(), POWER_ITERATION_SEED);
    let mut previous = f64::NAN;
    let mut rho = 0.0;
    for _ in 0..max_iter {
        let gx = gram(&x);
        rho = x.dot(&gx);
        let norm = gx.norm();
        if norm == 0.0 {
            // start vector in the null space; the operator is nonzero so
            // perturb deterministically
            x = seeded_unit_vector(op.primal_dims(), POWER_ITERATION_SEED.wrapping_add(1));
            continue;
        }
        let mut residual = gx.clone();
        residual.axpy(-rho, &x);
        if residual.norm() <= tol * rho {
            return Ok(rho.max(0.0).sqrt());
        }
        previous = rho;
        x = gx;
        x.scale_mut(1.0 / norm);
    }
    Err(Error::NormEstimate {
        iterations: max_iter,
        previous,
        last: rho,
    })
}

/// Conjugate gradient for a symmetric positive definite operator given by its
/// action. Stops when `|r| <= tol * |b|`.
pub fn conjugate_gradient(
    apply: impl Fn(&BlockVector) -> BlockVector,
    rhs: &BlockVector,
    tol: f64,
    max_iter: usize,
) -> Result<BlockVector> {
    let b_norm = rhs.norm();
    let mut x = BlockVector::zeros(&rhs.dims());
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rs = r.norm_sq();
    for _ in 0..max_iter {
        if rs.sqrt() <= tol * b_norm {
            return Ok(x);
        }
        let ap = apply(&p);
        let alpha = rs / p.dot(&ap);
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rs_new = r.norm_sq();
        let beta = rs_new / rs;
        p.scale_mut(beta);
        p.axpy(1.0, &r);
        rs = rs_new;
    }
    if rs.sqrt() <= tol * b_norm {
        return Ok(x);
    }
    Err(Error::LinearSolve {
        iterations: max_iter,
        residual: rs.sqrt() / b_norm,
    })
}
