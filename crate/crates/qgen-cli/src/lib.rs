//! Pipeline configuration, presets, stage runner, and artifact manifests.
//!
//! Stages read their inputs from and write their outputs to one output
//! directory, so a run is resumable stage by stage and every intermediate
//! is inspectable. Each stage writes a manifest recording the config
//! hash, input file hashes, output file hashes, and record counts;
//! rerunning a stage with identical inputs reproduces byte-identical
//! artifacts.

pub mod config;
pub mod manifest;
pub mod stages;
