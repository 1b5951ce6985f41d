//! Orchestration of scenario generation, odometry and backend runs,
//! evaluation and multi-level sweeps.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod sweep;

pub use config::{load, resolve, Overrides, RunConfig};
pub use pipeline::{evaluate, run_pipeline, BackendOutcome, RunOutput};
pub use sweep::{run_sweep, SweepResult};

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "ROBVIO_OUT";
