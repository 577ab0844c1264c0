//! Subcommand implementations, grouped by pipeline stage.

pub mod data;
pub mod detect;
pub mod plan;
pub mod report;
