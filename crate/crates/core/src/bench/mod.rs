//! Scenario runner: drives broker, publishers and verifier, turns the logs
//! into result tables and checks them against thresholds.

mod metrics;
mod report;
mod run;
mod scenario;

pub use metrics::{
    compute_throughput, linearity_check, relative_spread, required_rate,
    requirement_check_sustained, round1, LinearityResult, MetricError, SustainedCheck,
    DAILY_REQUIREMENT, DEFAULT_LINEARITY_THRESHOLD, SECONDS_PER_DAY,
};
pub use report::{emit_report, render, ReportFormat, CSV_HEADER, ROW_NAMES};
pub use run::{
    build_run_report, run_checks, run_once, run_scenario, run_suite, BenchError, Check,
    MessageSize, RunReport, SuiteReport,
};
pub use scenario::{
    BrokerOverrides, Endpoint, PublisherSettings, Scenario, Sustained, Thresholds, VerifierSettings,
};
