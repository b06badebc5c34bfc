//! Command-line front end for the bias audit toolkit: the audit pipeline,
//! data-level countermeasures, synthetic scenario generation, and embedding
//! probes, with atomic report output.

pub mod atomic;
pub mod commands;
pub mod report;
pub mod schema;

pub use commands::{run, Cli, EXIT_CLEAN, EXIT_ERROR, EXIT_FLAGGED};
