pub mod error;
pub mod operators;
pub mod primal_dual;
pub mod problems;
pub mod sifb;
pub mod spaces;
pub mod stochastic;

pub use error::{Error, Result};
