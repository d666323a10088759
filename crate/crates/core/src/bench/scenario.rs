use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::broker::BrokerConfig;
use crate::codec::{ProtocolLevel, QoS};
use crate::simgen::PayloadMode;
use crate::topic::TopicFilter;
use crate::verify::DEFAULT_FILTER;

/// Where the broker under test lives.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Endpoint {
    /// A fresh in-process broker per repetition.
    #[default]
    Embedded,
    /// `host:port` of a running broker.
    External(String),
}

impl TryFrom<String> for Endpoint {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if s == "embedded" {
            return Ok(Endpoint::Embedded);
        }
        match s.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => {
                Ok(Endpoint::External(s))
            }
            _ => Err(format!(
                "endpoint must be \"embedded\" or host:port, got {s:?}"
            )),
        }
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> String {
        e.to_string()
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Embedded => f.write_str("embedded"),
            Endpoint::External(addr) => f.write_str(addr),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub max_loss: u64,
    pub min_throughput: Option<f64>,
    pub max_duration_ms: Option<f64>,
    /// Only used by multi-scenario suites.
    pub max_linearity_spread: Option<f64>,
}

/// Fixed-rate pacing instead of batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sustained {
    pub rate_per_sec: f64,
    pub window_ms: u64,
}

/// Embedded-broker settings that differ from the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrokerOverrides {
    pub port: Option<u16>,
    pub max_inflight: Option<usize>,
    pub queue_capacity: Option<usize>,
    pub retransmit_timeout_ms: Option<u64>,
}

impl BrokerOverrides {
    pub fn apply(&self, mut config: BrokerConfig) -> BrokerConfig {
        if let Some(v) = self.port {
            config.port = v;
        }
        if let Some(v) = self.max_inflight {
            config.max_inflight = v;
        }
        if let Some(v) = self.queue_capacity {
            config.queue_capacity = v;
        }
        if let Some(v) = self.retransmit_timeout_ms {
            config.retransmit_timeout_ms = v;
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierSettings {
    pub filters: Vec<String>,
    /// msg/s per subscriber connection
    pub drain_rate: Option<f64>,
    pub settle_ms: u64,
    /// Longest wait for outstanding messages after publishing ends.
    pub max_wait_ms: u64,
    pub audit_log: Option<PathBuf>,
}

impl Default for VerifierSettings {
    fn default() -> Self {
        VerifierSettings {
            filters: vec![DEFAULT_FILTER.to_string()],
            drain_rate: None,
            settle_ms: 2_000,
            max_wait_ms: 120_000,
            audit_log: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PublisherSettings {
    pub window: usize,
    pub ack_timeout_ms: u64,
    pub max_retransmits: u32,
}

impl Default for PublisherSettings {
    fn default() -> Self {
        PublisherSettings {
            window: 32,
            ack_timeout_ms: 5_000,
            max_retransmits: 3,
        }
    }
}

fn default_qos() -> QoS {
    QoS::AtLeastOnce
}

fn one() -> u32 {
    1
}

/// A benchmark definition, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub endpoint: Endpoint,
    pub total_messages: u64,
    pub num_batches: u64,
    pub inter_batch_sleep_ms: u64,
    pub workers: usize,
    #[serde(default = "default_qos")]
    pub qos: QoS,
    #[serde(default)]
    pub protocol_level: ProtocolLevel,
    #[serde(default)]
    pub mode: PayloadMode,
    /// Cold starts; each gets a fresh embedded broker.
    #[serde(default = "one")]
    pub repetitions: u32,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Catalog file; the built-in catalog when absent.
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub sustained: Option<Sustained>,
    #[serde(default)]
    pub broker: BrokerOverrides,
    #[serde(default)]
    pub verifier: VerifierSettings,
    #[serde(default)]
    pub publisher: PublisherSettings,
}

impl Scenario {
    /// Batch scenario with defaults everywhere else.
    pub fn new(
        total_messages: u64,
        num_batches: u64,
        inter_batch_sleep_ms: u64,
        workers: usize,
    ) -> Self {
        Scenario {
            name: None,
            endpoint: Endpoint::Embedded,
            total_messages,
            num_batches,
            inter_batch_sleep_ms,
            workers,
            qos: QoS::AtLeastOnce,
            protocol_level: ProtocolLevel::V5,
            mode: PayloadMode::Canonical,
            repetitions: 1,
            thresholds: Thresholds::default(),
            catalog: None,
            sustained: None,
            broker: BrokerOverrides::default(),
            verifier: VerifierSettings::default(),
            publisher: PublisherSettings::default(),
        }
    }

    /// The three reference load shapes: 50k/100k/150k messages in 10/20/30
    /// batches with 950 ms sleeps over 10 workers.
    pub fn reference_suite() -> Vec<Scenario> {
        [(50_000, 10), (100_000, 20), (150_000, 30)]
            .into_iter()
            .map(|(total, batches)| Scenario {
                name: Some(format!("{total} messages")),
                ..Scenario::new(total, batches, 950, 10)
            })
            .collect()
    }

    pub fn from_json(json: &str) -> Result<Self, String> {
        let s: Scenario = serde_json::from_str(json).map_err(|e| e.to_string())?;
        s.validate()?;
        Ok(s)
    }

    /// `TESTBED_ENDPOINT`-style override of the endpoint, then of its port.
    /// A port override on an embedded endpoint sets the broker's listen port.
    pub fn override_endpoint(
        &mut self,
        endpoint: Option<&str>,
        port: Option<u16>,
    ) -> Result<(), String> {
        if let Some(e) = endpoint {
            self.endpoint = Endpoint::try_from(e.to_string())?;
            if self.endpoint != Endpoint::Embedded {
                self.broker.port = None;
            }
        }
        if let Some(port) = port {
            match &mut self.endpoint {
                Endpoint::Embedded => self.broker.port = Some(port),
                Endpoint::External(addr) => {
                    let host = addr
                        .rsplit_once(':')
                        .map(|(h, _)| h.to_string())
                        .unwrap_or_default();
                    *addr = format!("{host}:{port}");
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, v: u64| {
            if v == 0 {
                Err(format!("{name} must be >= 1"))
            } else {
                Ok(())
            }
        };
        positive("total_messages", self.total_messages)?;
        positive("num_batches", self.num_batches)?;
        positive("workers", self.workers as u64)?;
        positive("repetitions", u64::from(self.repetitions))?;
        positive("publisher.window", self.publisher.window as u64)?;
        let non_negative = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x.is_finite() && x >= 0.0) => {
                Err(format!("{name} must be a non-negative number"))
            }
            _ => Ok(()),
        };
        non_negative("thresholds.min_throughput", self.thresholds.min_throughput)?;
        non_negative(
            "thresholds.max_duration_ms",
            self.thresholds.max_duration_ms,
        )?;
        non_negative(
            "thresholds.max_linearity_spread",
            self.thresholds.max_linearity_spread,
        )?;
        if let Some(rate) = self.verifier.drain_rate {
            if !(rate.is_finite() && rate > 0.0) {
                return Err("verifier.drain_rate must be positive".into());
            }
        }
        if let Some(s) = self.sustained {
            if !(s.rate_per_sec.is_finite() && s.rate_per_sec > 0.0) {
                return Err("sustained.rate_per_sec must be positive".into());
            }
            positive("sustained.window_ms", s.window_ms)?;
        }
        if self.verifier.filters.is_empty() {
            return Err("verifier.filters must not be empty".into());
        }
        for f in &self.verifier.filters {
            TopicFilter::parse(f.as_str()).map_err(|e| format!("verifier filter {f:?}: {e}"))?;
        }
        if self.endpoint != Endpoint::Embedded && self.broker != BrokerOverrides::default() {
            return Err("broker overrides only apply to the embedded endpoint".into());
        }
        self.broker
            .apply(BrokerConfig::ephemeral())
            .validate()
            .map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_gets_defaults() {
        let s = Scenario::from_json(
            r#"{"total_messages": 50000, "num_batches": 10, "inter_batch_sleep_ms": 950, "workers": 10}"#,
        )
        .unwrap();
        assert_eq!(s, Scenario::new(50_000, 10, 950, 10));
        assert_eq!(s.qos, QoS::AtLeastOnce);
        assert_eq!(s.endpoint, Endpoint::Embedded);
    }

    #[test]
    fn full_json_round_trip() {
        let mut s = Scenario::new(10, 2, 5, 3);
        s.endpoint = Endpoint::External("broker.local:1884".into());
        s.mode = PayloadMode::Sequenced;
        s.sustained = Some(Sustained {
            rate_per_sec: 23.15,
            window_ms: 60_000,
        });
        s.thresholds.min_throughput = Some(1.0);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(Scenario::from_json(&json).unwrap(), s);
    }

    #[test]
    fn invalid_scenarios() {
        let base = r#""num_batches": 1, "inter_batch_sleep_ms": 0, "workers": 1"#;
        assert!(Scenario::from_json(&format!(r#"{{"total_messages": 0, {base}}}"#)).is_err());
        assert!(Scenario::from_json(&format!(
            r#"{{"total_messages": 1, {base}, "repetitions": 0}}"#
        ))
        .is_err());
        assert!(Scenario::from_json(&format!(
            r#"{{"total_messages": 1, {base}, "endpoint": "nohost"}}"#
        ))
        .is_err());
        assert!(
            Scenario::from_json(&format!(r#"{{"total_messages": 1, {base}, "bogus": 1}}"#))
                .is_err()
        );
        let neg =
            format!(r#"{{"total_messages": 1, {base}, "thresholds": {{"min_throughput": -1}}}}"#);
        assert!(Scenario::from_json(&neg).is_err());
        let filt =
            format!(r#"{{"total_messages": 1, {base}, "verifier": {{"filters": ["a/#/b"]}}}}"#);
        assert!(Scenario::from_json(&filt).is_err());
    }

    #[test]
    fn reference_suite_shapes() {
        let suite = Scenario::reference_suite();
        let shapes: Vec<_> = suite
            .iter()
            .map(|s| (s.total_messages, s.num_batches, s.inter_batch_sleep_ms))
            .collect();
        assert_eq!(
            shapes,
            [(50_000, 10, 950), (100_000, 20, 950), (150_000, 30, 950)]
        );
        assert!(suite
            .iter()
            .all(|s| s.workers == 10 && s.qos == QoS::AtLeastOnce));
    }

    #[test]
    fn endpoint_overrides() {
        let mut s = Scenario::new(1, 1, 0, 1);
        s.override_endpoint(None, Some(2000)).unwrap();
        assert_eq!(s.broker.port, Some(2000));
        s.override_endpoint(Some("10.0.0.1:1883"), Some(1999))
            .unwrap();
        assert_eq!(s.endpoint, Endpoint::External("10.0.0.1:1999".into()));
        assert!(s.override_endpoint(Some("bad"), None).is_err());
    }
}
