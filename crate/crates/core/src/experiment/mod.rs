//! Monte Carlo sweeps over the training amplitude, bound tables and single-trial
//! diagnostics.

mod report;
mod spec;
mod sweep;

pub use report::{run_single, EstimateReport, Manifest, ParameterReport};
pub use spec::{log_grid, parse_deltas, ExperimentSpec, PlanTemplate, SequenceFamily};
pub use sweep::{report_crb, rrmse, run_sweep, CrbReport, CrbRow, ErrorStats, PointFailure, SweepResult, SweepRow};
