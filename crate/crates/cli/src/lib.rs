//! Config-driven experiment runner for the `fencesim` simulator.
//!
//! Each subcommand reads an [`config::ExperimentConfig`] TOML file, runs its
//! simulations on a rayon pool and writes CSV tables under
//! `<out>/<config hash>/`. Every table starts with a
//! `# schema=<name>/<version> config_hash=<hash>` line.

pub mod ablate;
pub mod config;
pub mod error;
pub mod fit;
pub mod output;
pub mod sweep;
pub mod verify;

/// Flags shared by the subcommands that run simulations.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Also write the full trace of every run as NDJSON.
    pub trace: bool,
    pub jobs: Option<usize>,
    /// Recompute points whose results already exist.
    pub force: bool,
}
