//! Experiment driver around `turnpike-core`: JSON-configured runs that
//! solve the steady problem, certify dissipativity, sweep horizons, and
//! emit CSV/JSON artifacts.

pub mod config;
pub mod report;
pub mod runner;
