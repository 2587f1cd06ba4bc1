//! Product-space vectors and the linear algebra the splitting methods need:
//! block vectors, diagonal preconditioners, block linear operators and
//! weighted norm estimation.

mod linear;
mod preconditioner;
mod vector;

pub use linear::{conjugate_gradient, estimate_weighted_norm, BlockLinearOperator};
pub use preconditioner::{inner, Preconditioner, PreconditionerKind, WeightedMetric};
pub use vector::BlockVector;
pub(crate) use vector::check_dims;

/// Default relative tolerance for iterative linear algebra.
pub const DEFAULT_TOL: f64 = 1e-10;
