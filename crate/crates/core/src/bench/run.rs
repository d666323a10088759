use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{
    compute_throughput, linearity_check, relative_spread, requirement_check_sustained, round1,
    LinearityResult, MetricError, SustainedCheck, DEFAULT_LINEARITY_THRESHOLD,
};
use super::scenario::{Endpoint, Scenario};
use crate::broker::{self, BrokerConfig, BrokerError};
use crate::codec::QoS;
use crate::simgen::{
    build_plan, load_catalog, run_publishers, run_sustained, CatalogError, PayloadMode,
    PublishError, PublishLog, PublisherOptions, SustainedPlan,
};
use crate::topic::TopicFilter;
use crate::verify::{
    start_verifier, LatencySummary, VerificationReport, VerifierConfig, VerifyError,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Publish(#[from] PublishError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl BenchError {
    /// 2 for configuration problems, 3 for connectivity, 1 for a failed run.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Catalog(_) | BenchError::Metric(_) => 2,
            BenchError::Broker(BrokerError::InvalidConfig(_)) => 2,
            BenchError::Broker(BrokerError::Bind { .. }) => 3,
            BenchError::Verify(VerifyError::Connect { .. }) => 3,
            BenchError::Verify(VerifyError::Audit { .. }) => 2,
            BenchError::Verify(VerifyError::NotQuiescent { .. }) => 1,
            BenchError::Publish(PublishError::Connect { .. }) => 3,
            BenchError::Publish(PublishError::Plan(_) | PublishError::InvalidRate) => 2,
            BenchError::Publish(PublishError::Aborted { .. }) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageSize {
    pub min: usize,
    pub max: usize,
}

/// Measured results of one repetition. The first seven fields serialize
/// under the result-table row names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(rename = "Messages per second")]
    pub messages_per_second: f64,
    #[serde(rename = "The overall number of messages")]
    pub total_messages: u64,
    #[serde(rename = "Number of different devices")]
    pub device_count: usize,
    #[serde(rename = "Message size")]
    pub message_size: MessageSize,
    #[serde(rename = "Overall duration [ms]")]
    pub overall_duration_ms: f64,
    #[serde(rename = "Batch")]
    pub num_batches: u64,
    #[serde(rename = "Sleep [ms]")]
    pub sleep_ms: u64,
    pub loss: u64,
    pub duplicates: u64,
    pub repetition: u32,
    pub scenario: Option<String>,
    pub workers: usize,
    pub qos: QoS,
    pub mode: PayloadMode,
    pub unique_received: u64,
    pub out_of_order: u64,
    pub retransmitted: u64,
    /// First to last verifier receipt.
    pub receipt_duration_ms: f64,
    pub latency: Option<LatencySummary>,
    /// Messages the embedded broker had routed before this repetition; always 0 for a fresh instance.
    pub broker_routed_at_start: Option<u64>,
    pub sustained: Option<SustainedCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub runs: Vec<RunReport>,
    /// `(max - min) / max` of throughput over all runs.
    pub throughput_relative_spread: f64,
    pub linearity: Option<LinearityResult>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn from_parts(
        runs: Vec<RunReport>,
        checks: Vec<Check>,
        linearity: Option<LinearityResult>,
    ) -> Self {
        let tps: Vec<f64> = runs.iter().map(|r| r.messages_per_second).collect();
        let passed = checks.iter().all(|c| c.pass);
        SuiteReport {
            throughput_relative_spread: relative_spread(&tps),
            runs,
            linearity,
            checks,
            passed,
        }
    }
}

/// Builds the report for one repetition from the publisher and verifier views.
pub fn build_run_report(
    scenario: &Scenario,
    repetition: u32,
    device_count: usize,
    log: &PublishLog,
    verification: &VerificationReport,
    routed_at_start: Option<u64>,
) -> Result<RunReport, MetricError> {
    let overall_duration_ms = round1(log.duration().as_secs_f64() * 1000.0);
    let total = log.total_sent();
    let (num_batches, sleep_ms) = match scenario.sustained {
        Some(_) => (1, 0),
        None => (scenario.num_batches, scenario.inter_batch_sleep_ms),
    };
    let sustained = match scenario.sustained {
        Some(s) => Some(requirement_check_sustained(
            verification.unique_received,
            verification.loss,
            Duration::from_millis(s.window_ms),
        )?),
        None => None,
    };
    Ok(RunReport {
        messages_per_second: compute_throughput(total, overall_duration_ms)?,
        total_messages: total,
        device_count,
        message_size: MessageSize {
            min: log.payload_min.unwrap_or(0),
            max: log.payload_max.unwrap_or(0),
        },
        overall_duration_ms,
        num_batches,
        sleep_ms,
        loss: verification.loss,
        duplicates: verification.duplicates,
        repetition,
        scenario: scenario.name.clone(),
        workers: scenario.workers,
        qos: scenario.qos,
        mode: scenario.mode,
        unique_received: verification.unique_received,
        out_of_order: verification.out_of_order,
        retransmitted: log.retransmitted(),
        receipt_duration_ms: round1(verification.receipt_duration_ms),
        latency: verification.latency,
        broker_routed_at_start: routed_at_start,
        sustained,
    })
}

/// Threshold checks for one run.
pub fn run_checks(scenario: &Scenario, run: &RunReport) -> Vec<Check> {
    let tag = format!(
        "{} #{}",
        scenario.name.as_deref().unwrap_or("run"),
        run.repetition + 1
    );
    let t = &scenario.thresholds;
    let mut checks = vec![Check {
        name: format!("{tag} loss"),
        pass: run.loss <= t.max_loss,
        detail: format!("loss {} (max {})", run.loss, t.max_loss),
    }];
    let floor = (run.num_batches - 1) * run.sleep_ms;
    checks.push(Check {
        name: format!("{tag} duration floor"),
        pass: run.overall_duration_ms >= floor as f64,
        detail: format!("{} ms >= {floor} ms", run.overall_duration_ms),
    });
    if let Some(min) = t.min_throughput {
        checks.push(Check {
            name: format!("{tag} throughput"),
            pass: run.messages_per_second >= min,
            detail: format!("{} msg/s (min {min})", run.messages_per_second),
        });
    }
    if let Some(max) = t.max_duration_ms {
        checks.push(Check {
            name: format!("{tag} duration"),
            pass: run.overall_duration_ms <= max,
            detail: format!("{} ms (max {max})", run.overall_duration_ms),
        });
    }
    if let Some(s) = &run.sustained {
        checks.push(Check {
            name: format!("{tag} daily volume"),
            pass: s.pass,
            detail: format!(
                "{:.2} msg/s over {:.1} s, required {:.3} (margin {:.2})",
                s.achieved_rate, s.window_s, s.required_rate, s.margin
            ),
        });
    }
    checks
}

/// One repetition: broker (if embedded), verifier, publishers, reconciliation.
pub async fn run_once(scenario: &Scenario, repetition: u32) -> Result<RunReport, BenchError> {
    scenario.validate().map_err(BenchError::Config)?;
    let catalog = load_catalog(scenario.catalog.as_deref())?;
    let embedded = match &scenario.endpoint {
        Endpoint::Embedded => {
            Some(broker::start(scenario.broker.apply(BrokerConfig::ephemeral())).await?)
        }
        Endpoint::External(_) => None,
    };
    let endpoint = match (&embedded, &scenario.endpoint) {
        (Some(b), _) => b.endpoint(),
        (None, e) => e.to_string(),
    };
    let routed_at_start = embedded.as_ref().map(|b| b.stats().routed);

    let result = async {
        let filters = scenario
            .verifier
            .filters
            .iter()
            .map(|f| TopicFilter::parse(f.as_str()).map_err(|e| BenchError::Config(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let verifier_config = VerifierConfig {
            filters,
            qos: scenario.qos,
            level: scenario.protocol_level,
            mode: scenario.mode,
            audit_log: scenario.verifier.audit_log.clone(),
            drain_rate: scenario.verifier.drain_rate,
            settle: Duration::from_millis(scenario.verifier.settle_ms),
            withhold_acks: 0,
            expected_payloads: Some(
                catalog
                    .entries()
                    .iter()
                    .map(|t| t.payload.clone())
                    .collect::<HashSet<_>>(),
            ),
            keep_alive: 60,
        };
        let verifier = start_verifier(&endpoint, verifier_config).await?;
        let opts = PublisherOptions {
            level: scenario.protocol_level,
            window: scenario.publisher.window,
            ack_timeout: Duration::from_millis(scenario.publisher.ack_timeout_ms),
            max_retransmits: scenario.publisher.max_retransmits,
            ..PublisherOptions::default()
        };
        let published = match scenario.sustained {
            Some(s) => {
                let plan = SustainedPlan {
                    rate_per_sec: s.rate_per_sec,
                    window: Duration::from_millis(s.window_ms),
                    workers: scenario.workers,
                };
                run_sustained(
                    &plan,
                    &catalog,
                    &endpoint,
                    scenario.qos,
                    scenario.mode,
                    opts,
                )
                .await
            }
            None => {
                let plan = build_plan(
                    scenario.total_messages,
                    scenario.num_batches,
                    scenario.inter_batch_sleep_ms,
                    scenario.workers,
                )
                .map_err(PublishError::from)?;
                run_publishers(
                    &plan,
                    &catalog,
                    &endpoint,
                    scenario.qos,
                    scenario.mode,
                    opts,
                )
                .await
            }
        };
        let log = match published {
            Ok(log) => log,
            Err(e) => {
                verifier.shutdown().await;
                return Err(e.into());
            }
        };
        verifier
            .wait_quiescent(
                log.total_sent(),
                Duration::from_millis(scenario.verifier.max_wait_ms),
            )
            .await;
        let verification = verifier.finalize(&log).await?;
        Ok(build_run_report(
            scenario,
            repetition,
            catalog.len(),
            &log,
            &verification,
            routed_at_start,
        )?)
    }
    .await;

    if let Some(b) = embedded {
        b.stop().await;
    }
    result
}

/// Runs every repetition of `scenario`, each against a fresh embedded broker
/// (or fresh connections to an external one).
pub async fn run_scenario(scenario: &Scenario) -> Result<SuiteReport, BenchError> {
    run_suite(std::slice::from_ref(scenario)).await
}

/// Runs scenarios in order. With two or more distinct totals the suite also
/// gets a linearity check.
pub async fn run_suite(scenarios: &[Scenario]) -> Result<SuiteReport, BenchError> {
    for s in scenarios {
        s.validate().map_err(BenchError::Config)?;
    }
    let mut runs = Vec::new();
    let mut checks = Vec::new();
    for s in scenarios {
        for rep in 0..s.repetitions {
            let run = run_once(s, rep).await?;
            log::info!(
                "{} #{}: {} msgs in {} ms = {} msg/s, loss {}",
                s.name.as_deref().unwrap_or("run"),
                rep + 1,
                run.total_messages,
                run.overall_duration_ms,
                run.messages_per_second,
                run.loss
            );
            checks.extend(run_checks(s, &run));
            runs.push(run);
        }
    }
    let threshold = scenarios
        .iter()
        .filter_map(|s| s.thresholds.max_linearity_spread)
        .reduce(f64::min)
        .unwrap_or(DEFAULT_LINEARITY_THRESHOLD);
    let points: Vec<(u64, f64)> = runs
        .iter()
        .map(|r| (r.total_messages, r.messages_per_second))
        .collect();
    let linearity = linearity_check(&points, threshold).ok();
    if let Some(l) = linearity {
        checks.push(Check {
            name: "linearity".into(),
            pass: l.pass,
            detail: format!("throughput spread {:.4} (max {})", l.spread, l.threshold),
        });
    }
    Ok(SuiteReport::from_parts(runs, checks, linearity))
}
