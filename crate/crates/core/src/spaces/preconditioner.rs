use nalgebra::DVector;

use super::vector::BlockVector;
use crate::error::{Error, Result};

/// Storage for a block-diagonal preconditioner whose blocks are scalar
/// multiples of the identity or diagonal matrices.
#[derive(Clone, Debug, PartialEq)]
pub enum PreconditionerKind {
    Identity,
    /// The same positive factor on every block, whatever the block count.
    Uniform(f64),
    /// One positive factor per block.
    Scalar(Vec<f64>),
    /// One positive weight per coordinate, per block.
    Diagonal(Vec<DVector<f64>>),
}

/// Self-adjoint, strongly positive operator of scalar or diagonal form.
///
/// `lower_bound` is the strong-positivity constant: the smallest weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Preconditioner {
    kind: PreconditionerKind,
    lower_bound: f64,
    upper_bound: f64,
}

fn check_positive(v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::NotPositive { value: v })
    }
}

impl Preconditioner {
    pub fn identity() -> Self {
        Self {
            kind: PreconditionerKind::Identity,
            lower_bound: 1.0,
            upper_bound: 1.0,
        }
    }

    /// `c * Id` on every block.
    pub fn uniform(c: f64) -> Result<Self> {
        check_positive(c)?;
        Ok(Self {
            kind: PreconditionerKind::Uniform(c),
            lower_bound: c,
            upper_bound: c,
        })
    }

    /// The same factor `c` on each of `num_blocks` blocks.
    pub fn scalar(c: f64, num_blocks: usize) -> Result<Self> {
        Self::scalars(vec![c; num_blocks])
    }

    pub fn scalars(factors: Vec<f64>) -> Result<Self> {
        for &c in &factors {
            check_positive(c)?;
        }
        let (lo, hi) = bounds(factors.iter().copied());
        Ok(Self {
            kind: PreconditionerKind::Scalar(factors),
            lower_bound: lo,
            upper_bound: hi,
        })
    }

    pub fn diagonal(weights: Vec<Vec<f64>>) -> Result<Self> {
        let weights: Vec<DVector<f64>> = weights.into_iter().map(DVector::from_vec).collect();
        for w in &weights {
            for &v in w.iter() {
                check_positive(v)?;
            }
        }
        let (lo, hi) = bounds(weights.iter().flat_map(|w| w.iter().copied()));
        Ok(Self {
            kind: PreconditionerKind::Diagonal(weights),
            lower_bound: lo,
            upper_bound: hi,
        })
    }

    pub fn kind(&self) -> &PreconditionerKind {
        &self.kind
    }

    /// Strong-positivity constant: `<Px, x> >= lower_bound * |x|^2`.
    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    /// Operator norm.
    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, PreconditionerKind::Identity)
    }

    pub fn check_compatible(&self, dims: &[usize]) -> Result<()> {
        match &self.kind {
            PreconditionerKind::Identity | PreconditionerKind::Uniform(_) => Ok(()),
            PreconditionerKind::Scalar(c) if c.len() != dims.len() => Err(Error::BlockCount {
                expected: dims.len(),
                found: c.len(),
            }),
            PreconditionerKind::Scalar(_) => Ok(()),
            PreconditionerKind::Diagonal(w) => {
                if w.len() != dims.len() {
                    return Err(Error::BlockCount {
                        expected: dims.len(),
                        found: w.len(),
                    });
                }
                for (i, (wb, &d)) in w.iter().zip(dims).enumerate() {
                    if wb.len() != d {
                        return Err(Error::Shape {
                            block: i,
                            expected: d,
                            found: wb.len(),
                        });
                    }
                }
                Ok(())
            }
        }
    }

    /// Weight applied to coordinate `j` of block `block`.
    pub fn weight(&self, block: usize, j: usize) -> f64 {
        match &self.kind {
            PreconditionerKind::Identity => 1.0,
            PreconditionerKind::Uniform(c) => *c,
            PreconditionerKind::Scalar(c) => c[block],
            PreconditionerKind::Diagonal(w) => w[block][j],
        }
    }

    /// Weights of one block as a dense vector of length `dim`.
    pub fn block_weights(&self, block: usize, dim: usize) -> DVector<f64> {
        match &self.kind {
            PreconditionerKind::Identity => DVector::from_element(dim, 1.0),
            PreconditionerKind::Uniform(c) => DVector::from_element(dim, *c),
            PreconditionerKind::Scalar(c) => DVector::from_element(dim, c[block]),
            PreconditionerKind::Diagonal(w) => w[block].clone(),
        }
    }

    /// `true` when every block is a multiple of the identity.
    pub fn is_scalar_per_block(&self) -> bool {
        !matches!(self.kind, PreconditionerKind::Diagonal(_))
    }

    fn map_weights(&self, x: &BlockVector, f: impl Fn(f64) -> f64) -> BlockVector {
        let blocks = x
            .blocks()
            .iter()
            .enumerate()
            .map(|(i, b)| match &self.kind {
                PreconditionerKind::Identity => b * f(1.0),
                PreconditionerKind::Uniform(c) => b * f(*c),
                PreconditionerKind::Scalar(c) => b * f(c[i]),
                PreconditionerKind::Diagonal(w) => b.zip_map(&w[i], |v, wi| v * f(wi)),
            })
            .collect();
        BlockVector::from_blocks(blocks)
    }

    pub fn apply(&self, x: &BlockVector) -> BlockVector {
        self.map_weights(x, |w| w)
    }

    pub fn apply_inverse(&self, x: &BlockVector) -> BlockVector {
        self.map_weights(x, |w| 1.0 / w)
    }

    pub fn apply_sqrt(&self, x: &BlockVector) -> BlockVector {
        self.map_weights(x, f64::sqrt)
    }

    pub fn apply_inv_sqrt(&self, x: &BlockVector) -> BlockVector {
        self.map_weights(x, |w| 1.0 / w.sqrt())
    }

    fn transformed(&self, f: impl Fn(f64) -> f64) -> Self {
        match &self.kind {
            PreconditionerKind::Identity => Self::identity(),
            PreconditionerKind::Uniform(c) => {
                let c = f(*c);
                Self {
                    kind: PreconditionerKind::Uniform(c),
                    lower_bound: c,
                    upper_bound: c,
                }
            }
            PreconditionerKind::Scalar(c) => {
                let c: Vec<f64> = c.iter().map(|&v| f(v)).collect();
                let (lo, hi) = bounds(c.iter().copied());
                Self {
                    kind: PreconditionerKind::Scalar(c),
                    lower_bound: lo,
                    upper_bound: hi,
                }
            }
            PreconditionerKind::Diagonal(w) => {
                let w: Vec<DVector<f64>> = w.iter().map(|b| b.map(&f)).collect();
                let (lo, hi) = bounds(w.iter().flat_map(|b| b.iter().copied()));
                Self {
                    kind: PreconditionerKind::Diagonal(w),
                    lower_bound: lo,
                    upper_bound: hi,
                }
            }
        }
    }

    pub fn inverse(&self) -> Self {
        self.transformed(|w| 1.0 / w)
    }

    pub fn sqrt(&self) -> Self {
        self.transformed(f64::sqrt)
    }

    /// `gamma * P` for `gamma > 0`.
    pub fn scaled(&self, gamma: f64) -> Self {
        match &self.kind {
            PreconditionerKind::Identity => Self::uniform(gamma).expect("scale must be positive"),
            _ => self.transformed(|w| gamma * w),
        }
    }

    /// Block-diagonal union `P (+) Q` acting on `num_first + num_second` blocks.
    pub fn stack(first: &Self, num_first: usize, second: &Self, num_second: usize) -> Self {
        if first.is_identity() && second.is_identity() {
            return Self::identity();
        }
        let expand = |p: &Self, n: usize| -> Vec<Option<f64>> {
            match &p.kind {
                PreconditionerKind::Identity => vec![Some(1.0); n],
                PreconditionerKind::Uniform(c) => vec![Some(*c); n],
                PreconditionerKind::Scalar(c) => c.iter().map(|&v| Some(v)).collect(),
                PreconditionerKind::Diagonal(_) => vec![None; n],
            }
        };
        let a = expand(first, num_first);
        let b = expand(second, num_second);
        if a.iter().chain(&b).all(Option::is_some) {
            let factors: Vec<f64> = a.into_iter().chain(b).map(Option::unwrap).collect();
            return Self::scalars(factors).expect("stacked factors are positive");
        }
        panic!("stacking diagonal preconditioners requires block dimensions; use stack_with_dims");
    }

    /// Block-diagonal union for arbitrary kinds, given block dimensions.
    pub fn stack_with_dims(first: &Self, first_dims: &[usize], second: &Self, second_dims: &[usize]) -> Self {
        if first.is_scalar_per_block() && second.is_scalar_per_block() {
            return Self::stack(first, first_dims.len(), second, second_dims.len());
        }
        let mut weights: Vec<Vec<f64>> = Vec::new();
        for (i, &d) in first_dims.iter().enumerate() {
            weights.push(first.block_weights(i, d).iter().copied().collect());
        }
        for (k, &d) in second_dims.iter().enumerate() {
            weights.push(second.block_weights(k, d).iter().copied().collect());
        }
        Self::diagonal(weights).expect("stacked weights are positive")
    }

    /// Restricts to blocks `start..start + count`.
    pub fn restrict(&self, start: usize, count: usize) -> Self {
        match &self.kind {
            PreconditionerKind::Identity | PreconditionerKind::Uniform(_) => self.clone(),
            PreconditionerKind::Scalar(c) => {
                Self::scalars(c[start..start + count].to_vec()).expect("restricted factors are positive")
            }
            PreconditionerKind::Diagonal(w) => Self::diagonal(
                w[start..start + count]
                    .iter()
                    .map(|b| b.iter().copied().collect())
                    .collect(),
            )
            .expect("restricted weights are positive"),
        }
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo.is_infinite() {
        // no entries: all blocks empty
        (1.0, 1.0)
    } else {
        (lo, hi)
    }
}

/// Inner product `<x, M y>` for a fixed metric operator `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedMetric {
    pub weight: Preconditioner,
}

impl WeightedMetric {
    pub fn new(weight: Preconditioner) -> Self {
        Self { weight }
    }

    pub fn inner(&self, x: &BlockVector, y: &BlockVector) -> Result<f64> {
        inner(x, y, Some(self))
    }

    pub fn norm_sq(&self, x: &BlockVector) -> f64 {
        x.dot(&self.weight.apply(x))
    }

    pub fn norm(&self, x: &BlockVector) -> f64 {
        self.norm_sq(x).sqrt()
    }
}

/// `sum_i <x_i, M y_i>`, with `M = Id` when no metric is given.
pub fn inner(x: &BlockVector, y: &BlockVector, metric: Option<&WeightedMetric>) -> Result<f64> {
    x.check_same_dims(y)?;
    match metric {
        None => Ok(x.dot(y)),
        Some(m) => {
            m.weight.check_compatible(&x.dims())?;
            Ok(x.dot(&m.weight.apply(y)))
        }
    }
}
