//! Experiment plumbing around the core library, up to the command-line front end.

pub mod ablation;
pub mod cli;
pub mod config;
pub mod experiment;
pub mod format;
pub mod task;
