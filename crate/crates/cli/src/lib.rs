//! Experiment runner: config files, sweeps, lower-bound validation and the
//! command-line front end.

pub mod cli;
pub mod config;
pub mod experiment;
