//! Maximally monotone operators evaluated through resolvents in diagonal
//! metrics, a catalogue of separable proximable functions, and cocoercive
//! single-valued maps.

mod cocoercive;
mod monotone;
mod prox;

pub use cocoercive::{
    audit_cocoercivity, check_cocoercivity, CocoerciveMap, CocoerciveRule, CocoercivityReport, SAFETY_FACTOR,
    SLACK_TOL,
};
pub use monotone::{Descriptor, MonotoneBlock};
pub use prox::{
    moreau_check, prox_conjugate, prox_conjugate_via_decomposition, prox_weighted, ProxFunction, FAMILY_NAMES,
};
