//! Experiment harness: signals, trace analytics, artifact output and the
//! experiment registry used by the CLI.

pub mod analytics;
pub mod check;
pub mod experiment;
pub mod output;
pub mod plot;
pub mod signal;
