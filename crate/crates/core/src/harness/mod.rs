//! Seeded, reproducible experiment runs that write one CSV row per trial.

pub mod config;
pub mod record;
pub mod report;
pub mod run;

pub use config::{AlgoParams, ExperimentConfig, ExperimentKind, GridPoint, NoiseSpec, SignalScale, SignalSpec, Sweep};
pub use record::{read_records, write_records, Check, TrialRecord, TRIAL_SCHEMA};
pub use report::{render_table, summarize, GroupSummary};
pub use run::{run_experiment, run_trial, trial_seed, ExperimentResult, THREADS_ENV};

/// Constants in the checked error bounds. Each is the 95th percentile of
/// `error / scale` over 200 calibration trials (`examples/calibrate.rs`, a
/// master seed the acceptance suite does not use), rounded up with margin.
pub mod calibrated {
    /// `|theta - theta*|_inf <= OBLIVIOUS_C * r`
    pub const OBLIVIOUS_C: f64 = 0.75;
    /// `|theta - theta*|_inf <= REDUCTION_C * |X^T xi|_inf sqrt(ln n ln(R/r))`
    pub const REDUCTION_C: f64 = 1.0;
    /// `|theta - theta*|_inf <= PARTIAL_C * sigma sqrt(ln d)`
    pub const PARTIAL_C: f64 = 1.5;
    /// `m_gram_support <= CHAIN_UPPER * |xi|_2 sqrt(ln(k/CHAIN_DELTA)/n)`
    pub const CHAIN_UPPER: f64 = 1.25;
    /// `m_gram_support >= CHAIN_LOWER * |xi|_2 / sqrt(n)` for `k >= 16`; the
    /// 5th percentile rounded down.
    pub const CHAIN_LOWER: f64 = 1.0;
    pub const CHAIN_DELTA: f64 = 0.01;
}
