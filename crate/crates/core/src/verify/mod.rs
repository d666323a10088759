//! Zero-loss verification: subscriber connections that count everything they
//! receive, and reconciliation against what the publishers sent.

mod ledger;
mod report;

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bytes::Bytes;
use serde::Serialize;
use thiserror::Error;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio::time::{Instant, MissedTickBehavior};

pub use ledger::ReceiptLedger;
pub use report::{FilterReport, LatencySummary, TopicTally, VerificationReport};

use crate::client::{unique_client_prefix, unix_micros, ClientError, ClientOptions, Connection};
use crate::codec::{Packet, ProtocolLevel, Puback, Publish, QoS};
use crate::simgen::{PayloadMode, PublishLog};
use crate::topic::TopicFilter;

pub const DEFAULT_FILTER: &str = "s1t/#";

#[derive(Debug, Clone)]
pub struct VerifierConfig {
    /// One subscriber connection per filter.
    pub filters: Vec<TopicFilter>,
    pub qos: QoS,
    pub level: ProtocolLevel,
    pub mode: PayloadMode,
    /// NDJSON line per received message.
    pub audit_log: Option<PathBuf>,
    /// Messages per second each connection processes; `None` is unlimited.
    pub drain_rate: Option<f64>,
    /// Minimum silence before results may be finalized.
    pub settle: Duration,
    /// The first N QoS 1 deliveries go unacknowledged so the broker retransmits them.
    pub withhold_acks: u64,
    /// When set, payloads (minus any sequence tag) are checked against this set.
    pub expected_payloads: Option<HashSet<Bytes>>,
    pub keep_alive: u16,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            filters: vec![TopicFilter::parse(DEFAULT_FILTER).expect("valid filter")],
            qos: QoS::AtLeastOnce,
            level: ProtocolLevel::V5,
            mode: PayloadMode::Canonical,
            audit_log: None,
            drain_rate: None,
            settle: Duration::from_secs(2),
            withhold_acks: 0,
            expected_payloads: None,
            keep_alive: 60,
        }
    }
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("verifier for {filter} failed to connect: {source}")]
    Connect { filter: String, source: ClientError },
    #[error("cannot open audit log {path}: {source}")]
    Audit {
        path: String,
        source: std::io::Error,
    },
    #[error("traffic still arriving: quiet for {quiet:?}, settle window is {settle:?}")]
    NotQuiescent { quiet: Duration, settle: Duration },
}

/// Running totals across all verifier connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LedgerSnapshot {
    pub received: u64,
    pub dup_flagged: u64,
    pub unique_tagged: u64,
}

#[derive(Serialize)]
struct AuditLine<'a> {
    recv_ts_ms: u64,
    topic: &'a str,
    payload_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seq: Option<String>,
}

type Audit = Arc<Mutex<BufWriter<File>>>;

struct Receiver {
    conn: Connection,
    ledger: Arc<Mutex<ReceiptLedger>>,
    config: Arc<VerifierConfig>,
    audit: Option<Audit>,
    withheld: u64,
}

impl Receiver {
    async fn run(mut self, mut stop: watch::Receiver<bool>) -> Result<(), ClientError> {
        let mut drain = self.config.drain_rate.map(|rate| {
            let mut t = tokio::time::interval(Duration::from_secs_f64(1.0 / rate));
            t.set_missed_tick_behavior(MissedTickBehavior::Delay);
            t
        });
        let ping_every = Duration::from_secs(u64::from(self.config.keep_alive.max(2)) / 2);
        let mut last_io = Instant::now();
        loop {
            tokio::select! {
                biased;
                _ = stop.changed() => break,
                packet = self.conn.reader.read_packet() => {
                    let mut next = packet?;
                    if next.is_none() {
                        return Err(ClientError::Closed);
                    }
                    while let Some(p) = next {
                        if let (Packet::Publish(_), Some(t)) = (&p, drain.as_mut()) {
                            t.tick().await;
                        }
                        self.on_packet(p)?;
                        next = self.conn.reader.try_next()?;
                    }
                    if self.conn.writer.pending_bytes() > 0 {
                        self.conn.writer.flush().await?;
                        last_io = Instant::now();
                    }
                }
                _ = tokio::time::sleep_until(last_io + ping_every) => {
                    self.conn.writer.send(&Packet::Pingreq).await?;
                    last_io = Instant::now();
                }
            }
        }
        if let Some(audit) = &self.audit {
            let _ = audit.lock().unwrap().flush();
        }
        self.conn.disconnect().await
    }

    fn on_packet(&mut self, packet: Packet) -> Result<(), ClientError> {
        match packet {
            Packet::Publish(p) => {
                self.on_publish(&p);
                if let Some(id) = p.packet_id {
                    if self.withheld < self.config.withhold_acks && !p.dup {
                        self.withheld += 1;
                    } else {
                        self.conn
                            .writer
                            .queue(&Packet::Puback(Puback { packet_id: id }))?;
                    }
                }
                Ok(())
            }
            Packet::Pingresp => Ok(()),
            other => Err(ClientError::Unexpected {
                expected: "PUBLISH",
                got: other.kind(),
            }),
        }
    }

    fn on_publish(&mut self, p: &Publish) {
        let recv_us = unix_micros();
        let tag = self.ledger.lock().unwrap().record(
            p,
            Instant::now(),
            recv_us,
            self.config.mode,
            self.config.expected_payloads.as_ref(),
        );
        if let Some(audit) = &self.audit {
            let line = AuditLine {
                recv_ts_ms: recv_us / 1000,
                topic: p.topic.as_str(),
                payload_size: p.payload.len(),
                seq: tag.map(|t| format!("{}:{}", t.worker, t.seq)),
            };
            let mut out = audit.lock().unwrap();
            if serde_json::to_writer(&mut *out, &line).is_ok() {
                let _ = out.write_all(b"\n");
            }
        }
    }
}

/// Running verifier. Subscriptions are acknowledged before this is returned.
pub struct VerifierHandle {
    ledgers: Vec<(TopicFilter, Arc<Mutex<ReceiptLedger>>)>,
    tasks: Vec<JoinHandle<Result<(), ClientError>>>,
    stop: watch::Sender<bool>,
    started: Instant,
    config: Arc<VerifierConfig>,
}

pub async fn start_verifier(
    endpoint: &str,
    config: VerifierConfig,
) -> Result<VerifierHandle, VerifyError> {
    let audit = match &config.audit_log {
        None => None,
        Some(path) => {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| VerifyError::Audit {
                    path: path.display().to_string(),
                    source,
                })?;
            Some(Arc::new(Mutex::new(BufWriter::new(file))))
        }
    };
    let config = Arc::new(config);
    let prefix = unique_client_prefix("verify");
    let (stop, stop_rx) = watch::channel(false);
    let mut ledgers = Vec::new();
    let mut tasks = Vec::new();
    for (i, filter) in config.filters.iter().enumerate() {
        let connect_err = |source| VerifyError::Connect {
            filter: filter.to_string(),
            source,
        };
        let mut options = ClientOptions::new(format!("{prefix}-{i}")).level(config.level);
        options.keep_alive = config.keep_alive;
        let mut conn = Connection::connect(endpoint, options)
            .await
            .map_err(connect_err)?;
        conn.subscribe(std::slice::from_ref(filter), config.qos)
            .await
            .map_err(connect_err)?;
        let ledger = Arc::new(Mutex::new(ReceiptLedger::default()));
        let receiver = Receiver {
            conn,
            ledger: ledger.clone(),
            config: config.clone(),
            audit: audit.clone(),
            withheld: 0,
        };
        tasks.push(tokio::spawn(receiver.run(stop_rx.clone())));
        ledgers.push((filter.clone(), ledger));
    }
    Ok(VerifierHandle {
        ledgers,
        tasks,
        stop,
        started: Instant::now(),
        config,
    })
}

impl VerifierHandle {
    pub fn snapshot(&self) -> LedgerSnapshot {
        let mut s = LedgerSnapshot {
            received: 0,
            dup_flagged: 0,
            unique_tagged: 0,
        };
        for (_, l) in &self.ledgers {
            let l = l.lock().unwrap();
            s.received += l.received;
            s.dup_flagged += l.dup_flagged;
            s.unique_tagged += l.unique_tagged;
        }
        s
    }

    /// Time since the last arrival, or since start if nothing arrived.
    pub fn quiet_for(&self) -> Duration {
        let last = self
            .ledgers
            .iter()
            .filter_map(|(_, l)| l.lock().unwrap().last_arrival)
            .max();
        last.unwrap_or(self.started).max(self.started).elapsed()
    }

    /// Waits until at least `min_received` messages arrived (or `max_wait`
    /// passed) and the settle window has elapsed with no traffic.
    pub async fn wait_quiescent(&self, min_received: u64, max_wait: Duration) {
        let deadline = Instant::now() + max_wait;
        loop {
            let quiet = self.quiet_for();
            let enough = self.snapshot().received >= min_received || Instant::now() >= deadline;
            if enough && quiet >= self.config.settle {
                return;
            }
            let wait = if enough {
                self.config.settle - quiet
            } else {
                Duration::from_millis(10)
            };
            tokio::time::sleep(
                wait.min(Duration::from_millis(100))
                    .max(Duration::from_millis(1)),
            )
            .await;
        }
    }

    /// Reconciles against `log`. Fails if traffic arrived within the settle window.
    pub async fn finalize(self, log: &PublishLog) -> Result<VerificationReport, VerifyError> {
        let quiet = self.quiet_for();
        if quiet < self.config.settle {
            return Err(VerifyError::NotQuiescent {
                quiet,
                settle: self.config.settle,
            });
        }
        let mode = self.config.mode;
        let ledgers = self.ledgers.clone();
        let errors = self.shutdown().await;
        let ledgers: Vec<(TopicFilter, ReceiptLedger)> = ledgers
            .into_iter()
            .map(|(f, l)| (f, l.lock().unwrap().clone()))
            .collect();
        Ok(report::reconcile(log, mode, &ledgers, errors))
    }

    /// Disconnects all subscribers and returns any receive errors.
    pub async fn shutdown(self) -> Vec<String> {
        let _ = self.stop.send(true);
        let mut errors = Vec::new();
        for task in self.tasks {
            match task.await {
                Ok(Ok(())) => {}
                Ok(Err(e)) => errors.push(e.to_string()),
                Err(e) => errors.push(e.to_string()),
            }
        }
        errors
    }
}
