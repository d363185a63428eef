//! Fixed-step Langevin sampling driven by dependent, bounded data streams:
//! simulation engine, convergence-rate certificates, mixing diagnostics, and
//! semi-analytic reference solutions for end-to-end validation.

pub mod config;
pub mod engine;
pub mod env;
pub mod error;
pub mod experiments;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
