//! Experiment recipes and the end-to-end runner behind the `hierlog` binary.

pub mod experiment;
pub mod manifest;
pub mod spec;

pub use experiment::{exit_code, rerun, run_experiment, Outcome, Stage, StageError};
pub use manifest::Manifest;
pub use spec::{ExperimentKind, ExperimentSpec, InputSpec, Precision};
