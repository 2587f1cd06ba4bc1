use nalgebra::{DMatrix, DVector};

use super::prox::ProxFunction;
use crate::error::{config, Result};
use crate::spaces::{BlockVector, Preconditioner};

/// Symbolic description of one block of a maximally monotone operator.
#[derive(Clone, Debug, PartialEq)]
pub enum Descriptor {
    Zero,
    /// `subdiff f`
    Subdiff(ProxFunction),
    /// `subdiff f*` (the inverse of `subdiff f`)
    ConjugateSubdiff(ProxFunction),
    /// `x -> M x` with `M + M^T` positive semidefinite.
    LinearMonotone(DMatrix<f64>),
}

impl Descriptor {
    /// Strongly monotone blocks are demiregular everywhere. Recorded for
    /// reports, never branched on by the solvers.
    pub fn demiregular(&self) -> bool {
        match self {
            Descriptor::Subdiff(f) => f.strongly_convex(),
            Descriptor::LinearMonotone(m) => {
                let sym = (m + m.transpose()) * 0.5;
                sym.nrows() > 0 && sym.symmetric_eigenvalues().min() > 0.0
            }
            _ => false,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Descriptor::Zero => Ok(()),
            Descriptor::Subdiff(f) | Descriptor::ConjugateSubdiff(f) => f.validate(dim),
            Descriptor::LinearMonotone(m) => {
                if m.nrows() != dim || m.ncols() != dim {
                    return config(format!(
                        "linear monotone block is {}x{}, block dimension is {dim}",
                        m.nrows(),
                        m.ncols()
                    ));
                }
                if dim == 0 {
                    return Ok(());
                }
                let sym = (m + m.transpose()) * 0.5;
                let min_eig = sym.symmetric_eigenvalues().min();
                let scale = m.norm().max(1.0);
                if min_eig < -1e-12 * scale {
                    return config(format!(
                        "linear block is not monotone: symmetric part has eigenvalue {min_eig:e}"
                    ));
                }
                Ok(())
            }
        }
    }
}

/// A maximally monotone operator on a product space, one descriptor per
/// block, evaluated through its resolvent in a diagonal metric.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneBlock {
    parts: Vec<Descriptor>,
}

fn coordinatewise(
    z: &DVector<f64>,
    gamma: f64,
    u: &Preconditioner,
    block: usize,
    rule: impl Fn(usize, f64, f64) -> f64,
) -> DVector<f64> {
    DVector::from_fn(z.len(), |j, _| rule(j, z[j], gamma * u.weight(block, j)))
}

impl MonotoneBlock {
    pub fn new(parts: Vec<Descriptor>) -> Self {
        Self { parts }
    }

    /// The same descriptor on each of `num_blocks` blocks.
    pub fn uniform(part: Descriptor, num_blocks: usize) -> Self {
        Self {
            parts: vec![part; num_blocks],
        }
    }

    pub fn zero(num_blocks: usize) -> Self {
        Self::uniform(Descriptor::Zero, num_blocks)
    }

    pub fn parts(&self) -> &[Descriptor] {
        &self.parts
    }

    pub fn num_blocks(&self) -> usize {
        self.parts.len()
    }

    pub fn is_zero(&self) -> bool {
        self.parts.iter().all(|p| matches!(p, Descriptor::Zero))
    }

    pub fn demiregular(&self) -> bool {
        !self.parts.is_empty() && self.parts.iter().all(Descriptor::demiregular)
    }

    /// Build-time check that every block rule is well formed for `dims` and
    /// that the resolvent in metric `u` is computable.
    pub fn validate(&self, dims: &[usize], u: &Preconditioner) -> Result<()> {
        if self.parts.len() != dims.len() {
            return config(format!(
                "operator has {} blocks, space has {}",
                self.parts.len(),
                dims.len()
            ));
        }
        u.check_compatible(dims)?;
        for (p, &d) in self.parts.iter().zip(dims) {
            p.validate(d)?;
        }
        Ok(())
    }

    /// `J_{gamma U A}(z) = (Id + gamma U A)^{-1} z`.
    pub fn resolvent(&self, gamma: f64, u: &Preconditioner, z: &BlockVector) -> BlockVector {
        debug_assert!(gamma > 0.0);
        let blocks = self
            .parts
            .iter()
            .zip(z.blocks())
            .enumerate()
            .map(|(i, (part, zb))| match part {
                Descriptor::Zero => zb.clone(),
                Descriptor::Subdiff(f) => coordinatewise(zb, gamma, u, i, |j, v, w| f.prox_coord(j, v, w)),
                Descriptor::ConjugateSubdiff(f) => {
                    coordinatewise(zb, gamma, u, i, |j, v, w| f.conjugate_prox_coord(j, v, w))
                }
                Descriptor::LinearMonotone(m) => {
                    // (I + gamma U M) p = z
                    let uw = u.block_weights(i, zb.len());
                    let mut sys = m * gamma;
                    for (r, mut row) in sys.row_iter_mut().enumerate() {
                        row *= uw[r];
                    }
                    for r in 0..zb.len() {
                        sys[(r, r)] += 1.0;
                    }
                    sys.lu().solve(zb).expect("I + gamma U M is invertible for monotone M")
                }
            })
            .collect();
        BlockVector::from_blocks(blocks)
    }

    /// `J_{gamma U A^{-1}}(z)`, the resolvent of the inverse operator.
    pub fn inverse_resolvent(&self, gamma: f64, u: &Preconditioner, z: &BlockVector) -> BlockVector {
        let blocks = self
            .parts
            .iter()
            .zip(z.blocks())
            .enumerate()
            .map(|(i, (part, zb))| match part {
                // A = 0 has inverse with graph {0} x R^d; its resolvent projects onto {0}
                Descriptor::Zero => DVector::zeros(zb.len()),
                Descriptor::Subdiff(f) => {
                    coordinatewise(zb, gamma, u, i, |j, v, w| f.conjugate_prox_coord(j, v, w))
                }
                Descriptor::ConjugateSubdiff(f) => coordinatewise(zb, gamma, u, i, |j, v, w| f.prox_coord(j, v, w)),
                Descriptor::LinearMonotone(m) => {
                    // p = M (M + gamma U)^{-1} z
                    let uw = u.block_weights(i, zb.len());
                    let mut sys = m.clone();
                    for r in 0..zb.len() {
                        sys[(r, r)] += gamma * uw[r];
                    }
                    let y = sys.lu().solve(zb).expect("M + gamma U is invertible for monotone M");
                    m * y
                }
            })
            .collect();
        BlockVector::from_blocks(blocks)
    }

    /// Distance from `u` to `A x`, per block. `None` marks blocks whose
    /// graph distance cannot be evaluated.
    pub fn graph_distance(&self, x: &BlockVector, u: &BlockVector) -> Vec<Option<f64>> {
        self.parts
            .iter()
            .zip(x.blocks().iter().zip(u.blocks()))
            .map(|(part, (xb, ub))| match part {
                Descriptor::Zero => Some(ub.norm()),
                Descriptor::Subdiff(f) => Some(f.subdiff_distance(xb, ub)),
                Descriptor::ConjugateSubdiff(f) => Some(f.conjugate_subdiff_distance(xb, ub)),
                Descriptor::LinearMonotone(m) => Some((ub - m * xb).norm()),
            })
            .collect()
    }

    /// Distance from `e` to `A^{-1} v`, per block.
    pub fn inverse_graph_distance(&self, v: &BlockVector, e: &BlockVector) -> Vec<Option<f64>> {
        self.parts
            .iter()
            .zip(v.blocks().iter().zip(e.blocks()))
            .map(|(part, (vb, eb))| match part {
                Descriptor::Zero => Some(if vb.iter().all(|&t| t == 0.0) { 0.0 } else { f64::INFINITY }),
                Descriptor::Subdiff(f) => Some(f.conjugate_subdiff_distance(vb, eb)),
                Descriptor::ConjugateSubdiff(f) => Some(f.subdiff_distance(vb, eb)),
                Descriptor::LinearMonotone(m) => m.clone().lu().solve(vb).map(|sol| (eb - sol).norm()),
            })
            .collect()
    }
}
