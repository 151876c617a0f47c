//! Experiment harness for the nodal DG solver: convergence and cost sweeps,
//! dof-for-error fits, fixed-step timing, scaling, and energy estimates,
//! with CSV/JSON reports.

pub mod config;
pub mod experiments;
pub mod fit;
pub mod report;

pub use config::{ConfigError, Equation, Experiment, ExperimentSpec, RkName, TransportName};
pub use experiments::{
    run_converge, run_cost, run_energy, run_experiment, run_fit, run_scale, run_timing, simulate, BenchError,
};
pub use report::{emit_report, read_csv_file, BenchReport, Format, ReportError, ReportRow};
