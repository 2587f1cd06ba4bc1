use std::ops::{Add, Mul, Sub};

use nalgebra::DVector;

use crate::error::{Error, Result};

/// An element of a finite product of Euclidean spaces `R^{d_1} x ... x R^{d_K}`.
///
/// Blocks may have length zero. Arithmetic between vectors with different
/// block layouts is a programming error and panics; use
/// [`BlockVector::check_same_dims`] at API boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    blocks: Vec<DVector<f64>>,
}

impl BlockVector {
    pub fn new(blocks: Vec<Vec<f64>>) -> Self {
        Self {
            blocks: blocks.into_iter().map(DVector::from_vec).collect(),
        }
    }

    pub fn from_blocks(blocks: Vec<DVector<f64>>) -> Self {
        Self { blocks }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            blocks: dims.iter().map(|&d| DVector::zeros(d)).collect(),
        }
    }

    /// Single-block vector.
    pub fn single(values: Vec<f64>) -> Self {
        Self::new(vec![values])
    }

    /// Splits a flat vector into blocks of the given lengths.
    pub fn from_flat(flat: &DVector<f64>, dims: &[usize]) -> Result<Self> {
        let total: usize = dims.iter().sum();
        if flat.len() != total {
            return Err(Error::Shape {
                block: 0,
                expected: total,
                found: flat.len(),
            });
        }
        let mut offset = 0;
        let blocks = dims
            .iter()
            .map(|&d| {
                let b = flat.rows(offset, d).into_owned();
                offset += d;
                b
            })
            .collect();
        Ok(Self { blocks })
    }

    pub fn flatten(&self) -> DVector<f64> {
        let total = self.total_dim();
        let mut out = DVector::zeros(total);
        let mut offset = 0;
        for b in &self.blocks {
            out.rows_mut(offset, b.len()).copy_from(b);
            offset += b.len();
        }
        out
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn block(&self, i: usize) -> &DVector<f64> {
        &self.blocks[i]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut DVector<f64> {
        &mut self.blocks[i]
    }

    pub fn blocks(&self) -> &[DVector<f64>] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<DVector<f64>> {
        self.blocks
    }

    /// Returns an error naming the first block whose length differs.
    pub fn check_same_dims(&self, other: &BlockVector) -> Result<()> {
        check_dims(&self.dims(), other)
    }

    pub fn has_dims(&self, dims: &[usize]) -> bool {
        self.blocks.len() == dims.len() && self.blocks.iter().zip(dims).all(|(b, &d)| b.len() == d)
    }

    /// Euclidean inner product summed over blocks.
    pub fn dot(&self, other: &BlockVector) -> f64 {
        self.assert_same_layout(other);
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &BlockVector) {
        self.assert_same_layout(x);
        for (s, xb) in self.blocks.iter_mut().zip(&x.blocks) {
            s.axpy(a, xb, 1.0);
        }
    }

    pub fn scale_mut(&mut self, a: f64) {
        for b in &mut self.blocks {
            *b *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> BlockVector {
        let mut out = self.clone();
        out.scale_mut(a);
        out
    }

    /// Coordinate-wise map over every entry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> BlockVector {
        Self {
            blocks: self.blocks.iter().map(|b| b.map(&f)).collect(),
        }
    }

    /// Stacks `primal` followed by `dual` into one product-space vector.
    pub fn concat(primal: &BlockVector, dual: &BlockVector) -> BlockVector {
        let mut blocks = primal.blocks.clone();
        blocks.extend(dual.blocks.iter().cloned());
        Self { blocks }
    }

    /// Inverse of [`BlockVector::concat`]: the first `at` blocks and the rest.
    pub fn split(&self, at: usize) -> (BlockVector, BlockVector) {
        assert!(at <= self.blocks.len(), "split point beyond block count");
        (
            Self {
                blocks: self.blocks[..at].to_vec(),
            },
            Self {
                blocks: self.blocks[at..].to_vec(),
            },
        )
    }

    fn assert_same_layout(&self, other: &BlockVector) {
        assert!(
            self.blocks.len() == other.blocks.len()
                && self.blocks.iter().zip(&other.blocks).all(|(a, b)| a.len() == b.len()),
            "block layout mismatch: {:?} vs {:?}",
            self.dims(),
            other.dims()
        );
    }
}

pub(crate) fn check_dims(dims: &[usize], x: &BlockVector) -> Result<()> {
    if dims.len() != x.num_blocks() {
        return Err(Error::BlockCount {
            expected: dims.len(),
            found: x.num_blocks(),
        });
    }
    for (i, (&d, b)) in dims.iter().zip(x.blocks()).enumerate() {
        if d != b.len() {
            return Err(Error::Shape {
                block: i,
                expected: d,
                found: b.len(),
            });
        }
    }
    Ok(())
}

impl Add for &BlockVector {
    type Output = BlockVector;

    fn add(self, rhs: &BlockVector) -> BlockVector {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &BlockVector {
    type Output = BlockVector;

    fn sub(self, rhs: &BlockVector) -> BlockVector {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Mul<f64> for &BlockVector {
    type Output = BlockVector;

    fn mul(self, rhs: f64) -> BlockVector {
        self.scaled(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_is_identity() {
        let p = BlockVector::new(vec![vec![1.0], vec![2.0]]);
        let d = BlockVector::new(vec![vec![3.0]]);
        let s = BlockVector::concat(&p, &d);
        assert_eq!(s, BlockVector::new(vec![vec![1.0], vec![2.0], vec![3.0]]));
        let (p2, d2) = s.split(2);
        assert_eq!(p2, p);
        assert_eq!(d2, d);
    }

    #[test]
    fn empty_dual_part_leaves_primal_unchanged() {
        let p = BlockVector::new(vec![vec![1.0, -4.0]]);
        let d = BlockVector::zeros(&[]);
        assert_eq!(BlockVector::concat(&p, &d), p);
    }

    #[test]
    fn zero_dimensional_blocks_are_absorbing() {
        let mut x = BlockVector::new(vec![vec![], vec![1.0, 2.0]]);
        let y = BlockVector::new(vec![vec![], vec![3.0, 4.0]]);
        x.axpy(2.0, &y);
        assert_eq!(x, BlockVector::new(vec![vec![], vec![7.0, 10.0]]));
        assert_eq!(x.dot(&y), 61.0);
    }

    #[test]
    fn flat_round_trip() {
        let x = BlockVector::new(vec![vec![1.0, 2.0], vec![], vec![3.0]]);
        let back = BlockVector::from_flat(&x.flatten(), &x.dims()).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn dims_check_names_block() {
        let x = BlockVector::new(vec![vec![1.0], vec![2.0, 3.0]]);
        let y = BlockVector::new(vec![vec![1.0], vec![2.0]]);
        assert_eq!(
            x.check_same_dims(&y),
            Err(Error::Shape {
                block: 1,
                expected: 2,
                found: 1
            })
        );
    }
}
