//! Config-driven runner for the `sifb` solvers: schedule and constant
//! validation, single runs, multi-seed sweeps, and CSV/JSON artifacts.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod sweep;
