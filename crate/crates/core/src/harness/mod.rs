//! Datasets, run configuration, training loops and self-checks behind the
//! command-line tool.

pub mod checks;
pub mod config;
pub mod dataset;
pub mod train;
