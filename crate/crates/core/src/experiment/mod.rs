//! Config-driven experiments: single runs, `(c, p_c)` sweeps with trial
//! averaging, and estimator diagnostics, all written as CSV.

pub mod config;
pub mod diagnostics;
pub mod sweep;

pub use config::{parse_config, ExperimentConfig, Mode, ObjectiveKind, MAX_TOTAL_TRIALS};
pub use diagnostics::{run_diagnostics, run_diagnostics_to_dir, write_diagnostics, DiagnosticsRow};
pub use sweep::{
    build_problem, run_single_to_dir, run_sweep, run_sweep_to_dir, run_trial, trial_seed, write_finals, Problem, SummaryRow,
    SweepFiles, SweepOptions, SweepOutput, SweepSummary, TrialOptions, TrialResult,
};
