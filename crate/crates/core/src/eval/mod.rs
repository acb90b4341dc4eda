//! Monte-Carlo error rates, estimator diagnostics and experiment drivers.

mod bler;
mod experiments;

pub use bler::{
    constellation_csv, dump_constellation, estimate_bler, snr_sweep, sweep_csv, wilson_interval, BlerPoint,
    EvalConfig, Link, MlLink, QpskLink,
};
pub use experiments::{
    feedback_csv, feedback_sweep, theorem1_check, theorem1_csv, variance_csv, variance_experiment, FeedbackRow,
    Theorem1Config, Theorem1Row, VarianceConfig, VarianceRecord,
};
