//! Replicated experiments: configuration, sweeps, raw records, curve
//! summaries and the self-check suite.

pub mod check;
pub mod config;
pub mod curves;
pub mod record;
pub mod sweep;

pub use config::{Ablation, Ablations, Arm, Preset, RunConfig, WorldSource};
pub use sweep::{run_experiment, SweepOutcome};
