use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::Instant;

use super::catalog::Catalog;
use super::plan::{split, PacingPlan, PlanError};
use super::sequence::{sequenced_payload, SequenceTag};
use crate::client::{unique_client_prefix, unix_micros, ClientError, ClientOptions, Connection};
use crate::codec::{Packet, ProtocolLevel, Publish, QoS};

const FLUSH_THRESHOLD: usize = 64 * 1024;

/// What goes in each payload.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadMode {
    /// Catalog payloads, byte-identical.
    #[default]
    Canonical,
    /// Catalog payloads prefixed with a worker/sequence/timestamp tag.
    Sequenced,
}

#[derive(Debug, Clone)]
pub struct PublisherOptions {
    pub level: ProtocolLevel,
    /// Unacknowledged QoS 1 publishes allowed per worker.
    pub window: usize,
    pub ack_timeout: Duration,
    /// Retransmissions of one message before the run is aborted.
    pub max_retransmits: u32,
    pub keep_alive: u16,
    /// Client ids are `<prefix>-<worker>`. Generated when `None`.
    pub client_id_prefix: Option<String>,
}

impl Default for PublisherOptions {
    fn default() -> Self {
        PublisherOptions {
            level: ProtocolLevel::V5,
            window: 32,
            ack_timeout: Duration::from_secs(5),
            max_retransmits: 3,
            keep_alive: 60,
            client_id_prefix: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("no PUBACK for packet {packet_id} after {retransmits} retransmissions")]
    AckTimeout { packet_id: u16, retransmits: u32 },
    #[error("unexpected {0} from broker")]
    Unexpected(&'static str),
}

#[derive(Debug, Error)]
pub enum PublishError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("publish rate must be positive and finite")]
    InvalidRate,
    #[error("worker {worker} failed to connect to {endpoint}: {source}")]
    Connect {
        worker: usize,
        endpoint: String,
        source: ClientError,
    },
    /// The run stopped early. `log` holds what was sent up to that point.
    #[error("worker {worker} aborted the run: {source}")]
    Aborted {
        worker: usize,
        source: WorkerError,
        log: Box<PublishLog>,
    },
}

/// Per-worker send record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorkerLog {
    pub worker: usize,
    pub client_id: String,
    /// Global index of this worker's first message. Its n-th message has
    /// global index `start_index + n * stride`, and uses catalog entry
    /// `global % catalog_len`.
    pub start_index: u64,
    pub stride: u64,
    pub sent: u64,
    pub acked: u64,
    pub retransmitted: u64,
}

impl WorkerLog {
    pub fn catalog_index(&self, n: u64, catalog_len: usize) -> usize {
        ((self.start_index + n * self.stride) % catalog_len as u64) as usize
    }
}

/// Everything the publishers did during one run.
#[derive(Debug, Clone)]
pub struct PublishLog {
    pub qos: QoS,
    pub mode: PayloadMode,
    pub workers: Vec<WorkerLog>,
    pub per_topic: BTreeMap<String, u64>,
    /// Topic for each catalog index, for mapping sequence numbers to topics.
    pub catalog_topics: Vec<String>,
    pub first_send: Option<Instant>,
    /// Last PUBACK (QoS 1) or last flush (QoS 0).
    pub last_complete: Option<Instant>,
    pub batch_durations: Vec<Duration>,
    pub payload_min: Option<usize>,
    pub payload_max: Option<usize>,
}

impl PublishLog {
    pub fn total_sent(&self) -> u64 {
        self.workers.iter().map(|w| w.sent).sum()
    }

    pub fn total_acked(&self) -> u64 {
        self.workers.iter().map(|w| w.acked).sum()
    }

    pub fn retransmitted(&self) -> u64 {
        self.workers.iter().map(|w| w.retransmitted).sum()
    }

    /// First publish to last completion.
    pub fn duration(&self) -> Duration {
        match (self.first_send, self.last_complete) {
            (Some(a), Some(b)) => b.saturating_duration_since(a),
            _ => Duration::ZERO,
        }
    }

    /// Topic of worker `worker`'s `n`-th message.
    pub fn topic_of(&self, worker: usize, n: u64) -> &str {
        let w = &self.workers[worker];
        &self.catalog_topics[w.catalog_index(n, self.catalog_topics.len())]
    }
}

enum Schedule {
    Burst(u64),
    Paced {
        count: u64,
        first_due: Instant,
        period: Duration,
    },
}

impl Schedule {
    fn count(&self) -> u64 {
        match *self {
            Schedule::Burst(n) | Schedule::Paced { count: n, .. } => n,
        }
    }

    fn due(&self, k: u64) -> Option<Instant> {
        match *self {
            Schedule::Burst(_) => None,
            Schedule::Paced {
                first_due, period, ..
            } => Some(first_due + period.mul_f64(k as f64)),
        }
    }
}

struct Inflight {
    publish: Publish,
    sent_at: Instant,
    retries: u32,
}

struct Worker {
    conn: Connection,
    catalog: Arc<Catalog>,
    qos: QoS,
    mode: PayloadMode,
    opts: Arc<PublisherOptions>,
    log: WorkerLog,
    next_id: u16,
    inflight: HashMap<u16, Inflight>,
    per_topic: Vec<u64>,
    first_send: Option<Instant>,
    last_complete: Option<Instant>,
    last_io: Instant,
    payload_min: Option<usize>,
    payload_max: Option<usize>,
}

impl Worker {
    async fn run(&mut self, schedule: Schedule) -> Result<(), WorkerError> {
        if self.last_io.elapsed() >= Duration::from_secs(u64::from(self.opts.keep_alive) / 2) {
            self.conn
                .writer
                .queue(&Packet::Pingreq)
                .map_err(ClientError::from)?;
        }
        let count = schedule.count();
        let window = if self.qos == QoS::AtLeastOnce {
            self.opts.window.max(1)
        } else {
            usize::MAX
        };
        let mut queued = 0u64;
        loop {
            let now = Instant::now();
            let before = queued;
            while queued < count
                && self.inflight.len() < window
                && schedule.due(queued).is_none_or(|d| d <= now)
            {
                self.queue_next(now)?;
                queued += 1;
                if self.conn.writer.pending_bytes() >= FLUSH_THRESHOLD {
                    self.flush().await?;
                }
            }
            self.flush().await?;
            if queued > before && self.qos == QoS::AtMostOnce {
                self.last_complete = Some(Instant::now());
            }
            if queued == count && self.inflight.is_empty() {
                return Ok(());
            }

            let next_send = if queued < count && self.inflight.len() < window {
                schedule.due(queued)
            } else {
                None
            };
            let ack_deadline = self
                .inflight
                .values()
                .map(|f| f.sent_at + self.opts.ack_timeout)
                .min();
            let wake = match (next_send, ack_deadline) {
                (Some(a), Some(b)) => a.min(b),
                (a, b) => a.or(b).unwrap_or(now),
            };
            if self.qos == QoS::AtMostOnce {
                tokio::time::sleep_until(wake).await;
                continue;
            }
            match tokio::time::timeout_at(wake, self.conn.reader.read_packet()).await {
                Ok(packet) => {
                    let packet = packet?.ok_or(ClientError::Closed)?;
                    self.on_packet(packet)?;
                    while let Some(p) = self.conn.reader.try_next().map_err(ClientError::from)? {
                        self.on_packet(p)?;
                    }
                }
                Err(_) => self.retransmit_expired()?,
            }
        }
    }

    fn queue_next(&mut self, now: Instant) -> Result<(), WorkerError> {
        let n = self.log.sent;
        let index = self.log.catalog_index(n, self.catalog.len());
        let template = self.catalog.get(index);
        let payload: Bytes = match self.mode {
            PayloadMode::Canonical => template.payload.clone(),
            PayloadMode::Sequenced => {
                let tag = SequenceTag {
                    worker: self.log.worker as u32,
                    seq: n,
                    sent_at_us: unix_micros(),
                };
                sequenced_payload(tag, &template.payload)
            }
        };
        let len = payload.len();
        let mut publish = Publish::new(template.topic.clone(), self.qos, payload);
        publish.retain = template.retain;
        if self.qos == QoS::AtLeastOnce {
            let id = self.allocate_id();
            publish.packet_id = Some(id);
            self.conn
                .writer
                .queue(&Packet::Publish(publish.clone()))
                .map_err(ClientError::from)?;
            self.inflight.insert(
                id,
                Inflight {
                    publish,
                    sent_at: now,
                    retries: 0,
                },
            );
        } else {
            self.conn
                .writer
                .queue(&Packet::Publish(publish))
                .map_err(ClientError::from)?;
        }
        self.first_send.get_or_insert(now);
        self.log.sent += 1;
        self.per_topic[index] += 1;
        self.payload_min = Some(self.payload_min.map_or(len, |m| m.min(len)));
        self.payload_max = Some(self.payload_max.map_or(len, |m| m.max(len)));
        Ok(())
    }

    fn allocate_id(&mut self) -> u16 {
        loop {
            self.next_id = self.next_id.wrapping_add(1);
            if self.next_id != 0 && !self.inflight.contains_key(&self.next_id) {
                return self.next_id;
            }
        }
    }

    fn on_packet(&mut self, packet: Packet) -> Result<(), WorkerError> {
        match packet {
            Packet::Puback(ack) => {
                if self.inflight.remove(&ack.packet_id).is_some() {
                    self.log.acked += 1;
                    self.last_complete = Some(Instant::now());
                }
                Ok(())
            }
            Packet::Pingresp => Ok(()),
            other => Err(WorkerError::Unexpected(other.kind())),
        }
    }

    fn retransmit_expired(&mut self) -> Result<(), WorkerError> {
        let now = Instant::now();
        let timeout = self.opts.ack_timeout;
        for (&id, f) in self.inflight.iter_mut() {
            if f.sent_at + timeout > now {
                continue;
            }
            if f.retries >= self.opts.max_retransmits {
                return Err(WorkerError::AckTimeout {
                    packet_id: id,
                    retransmits: f.retries,
                });
            }
            f.publish.dup = true;
            f.retries += 1;
            f.sent_at = now;
            self.log.retransmitted += 1;
            self.conn
                .writer
                .queue(&Packet::Publish(f.publish.clone()))
                .map_err(ClientError::from)?;
        }
        Ok(())
    }

    async fn flush(&mut self) -> Result<(), WorkerError> {
        if self.conn.writer.pending_bytes() > 0 {
            self.conn.writer.flush().await.map_err(ClientError::from)?;
            self.last_io = Instant::now();
        }
        Ok(())
    }
}

struct Fleet {
    workers: Vec<Option<Worker>>,
    qos: QoS,
    mode: PayloadMode,
    catalog: Arc<Catalog>,
    batch_durations: Vec<Duration>,
}

impl Fleet {
    async fn connect(
        endpoint: &str,
        catalog: &Catalog,
        qos: QoS,
        mode: PayloadMode,
        opts: PublisherOptions,
        layout: &[(u64, u64)],
    ) -> Result<Fleet, PublishError> {
        let prefix = opts
            .client_id_prefix
            .clone()
            .unwrap_or_else(|| unique_client_prefix("pub"));
        let opts = Arc::new(opts);
        let catalog = Arc::new(catalog.clone());
        let mut workers = Vec::with_capacity(layout.len());
        for (w, &(start_index, stride)) in layout.iter().enumerate() {
            let client_id = format!("{prefix}-{w}");
            let mut options = ClientOptions::new(client_id.clone()).level(opts.level);
            options.keep_alive = opts.keep_alive;
            let conn = Connection::connect(endpoint, options)
                .await
                .map_err(|source| PublishError::Connect {
                    worker: w,
                    endpoint: endpoint.to_string(),
                    source,
                })?;
            workers.push(Some(Worker {
                conn,
                catalog: catalog.clone(),
                qos,
                mode,
                opts: opts.clone(),
                log: WorkerLog {
                    worker: w,
                    client_id,
                    start_index,
                    stride,
                    sent: 0,
                    acked: 0,
                    retransmitted: 0,
                },
                next_id: 0,
                inflight: HashMap::new(),
                per_topic: vec![0; catalog.len()],
                first_send: None,
                last_complete: None,
                last_io: Instant::now(),
                payload_min: None,
                payload_max: None,
            }));
        }
        Ok(Fleet {
            workers,
            qos,
            mode,
            catalog,
            batch_durations: Vec::new(),
        })
    }

    /// Runs one schedule per worker concurrently and waits for all of them.
    async fn step(&mut self, schedules: Vec<Option<Schedule>>) -> Result<(), PublishError> {
        let mut tasks = Vec::new();
        for (w, schedule) in schedules.into_iter().enumerate() {
            let Some(schedule) = schedule else { continue };
            let mut worker = self.workers[w]
                .take()
                .expect("worker present between steps");
            tasks.push((
                w,
                tokio::spawn(async move {
                    let res = worker.run(schedule).await;
                    (worker, res)
                }),
            ));
        }
        let mut failure = None;
        for (w, task) in tasks {
            let (worker, res) = task.await.expect("publisher task panicked");
            self.workers[w] = Some(worker);
            if let (Err(e), None) = (res, &failure) {
                failure = Some((w, e));
            }
        }
        match failure {
            None => Ok(()),
            Some((worker, source)) => Err(PublishError::Aborted {
                worker,
                source,
                log: Box::new(self.log()),
            }),
        }
    }

    fn log(&self) -> PublishLog {
        let workers: Vec<&Worker> = self.workers.iter().flatten().collect();
        let mut per_topic = BTreeMap::new();
        for w in &workers {
            for (i, &n) in w.per_topic.iter().enumerate() {
                *per_topic
                    .entry(self.catalog.get(i).topic.to_string())
                    .or_insert(0) += n;
            }
        }
        PublishLog {
            qos: self.qos,
            mode: self.mode,
            workers: workers.iter().map(|w| w.log.clone()).collect(),
            per_topic,
            catalog_topics: self
                .catalog
                .entries()
                .iter()
                .map(|t| t.topic.to_string())
                .collect(),
            first_send: workers.iter().filter_map(|w| w.first_send).min(),
            last_complete: workers.iter().filter_map(|w| w.last_complete).max(),
            batch_durations: self.batch_durations.clone(),
            payload_min: workers.iter().filter_map(|w| w.payload_min).min(),
            payload_max: workers.iter().filter_map(|w| w.payload_max).max(),
        }
    }

    async fn close(self) {
        for worker in self.workers.into_iter().flatten() {
            let _ = worker.conn.disconnect().await;
        }
    }
}

/// Publishes `plan` against `endpoint`: each batch is split over the workers,
/// the next batch starts after every worker's share is acknowledged and the
/// inter-batch sleep has elapsed.
///
/// Messages cycle through the catalog by global index, so per-topic counts
/// differ by at most one.
pub async fn run_publishers(
    plan: &PacingPlan,
    catalog: &Catalog,
    endpoint: &str,
    qos: QoS,
    mode: PayloadMode,
    opts: PublisherOptions,
) -> Result<PublishLog, PublishError> {
    let plan = super::plan::build_plan(
        plan.total_messages,
        plan.num_batches,
        plan.inter_batch_sleep_ms,
        plan.workers,
    )?;
    let mut start = 0;
    let layout: Vec<(u64, u64)> = plan
        .worker_totals()
        .into_iter()
        .map(|n| {
            let s = start;
            start += n;
            (s, 1)
        })
        .collect();
    let mut fleet = Fleet::connect(endpoint, catalog, qos, mode, opts, &layout).await?;
    let sleep = Duration::from_millis(plan.inter_batch_sleep_ms);
    let mut result = Ok(());
    for (b, size) in plan.batch_sizes().into_iter().enumerate() {
        if b > 0 {
            tokio::time::sleep(sleep).await;
        }
        let began = Instant::now();
        let schedules = (0..plan.workers)
            .map(|w| {
                let share = plan.worker_share(size, w);
                (share > 0).then_some(Schedule::Burst(share))
            })
            .collect();
        result = fleet.step(schedules).await;
        fleet.batch_durations.push(began.elapsed());
        if result.is_err() {
            break;
        }
    }
    let log = fleet.log();
    fleet.close().await;
    result.map(|_| log)
}

/// Fixed-rate load: `ceil(rate_per_sec * window)` messages, evenly spaced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SustainedPlan {
    pub rate_per_sec: f64,
    pub window: Duration,
    pub workers: usize,
}

/// Message `g` goes out at `g / rate` seconds, from worker `g % workers`.
pub async fn run_sustained(
    plan: &SustainedPlan,
    catalog: &Catalog,
    endpoint: &str,
    qos: QoS,
    mode: PayloadMode,
    opts: PublisherOptions,
) -> Result<PublishLog, PublishError> {
    let SustainedPlan {
        rate_per_sec: rate,
        window,
        workers,
    } = *plan;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(PublishError::InvalidRate);
    }
    if workers == 0 {
        return Err(PlanError("workers").into());
    }
    let total = (rate * window.as_secs_f64()).ceil() as u64;
    if total == 0 {
        return Err(PlanError("total_messages").into());
    }
    let layout: Vec<(u64, u64)> = (0..workers).map(|w| (w as u64, workers as u64)).collect();
    let mut fleet = Fleet::connect(endpoint, catalog, qos, mode, opts, &layout).await?;
    let period = Duration::from_secs_f64(1.0 / rate);
    let t0 = Instant::now() + Duration::from_millis(10);
    let schedules = (0..workers)
        .map(|w| {
            let count = split(total, workers, w);
            (count > 0).then(|| Schedule::Paced {
                count,
                first_due: t0 + period.mul_f64(w as f64),
                period: period.mul_f64(workers as f64),
            })
        })
        .collect();
    let began = Instant::now();
    let result = fleet.step(schedules).await;
    fleet.batch_durations.push(began.elapsed());
    let log = fleet.log();
    fleet.close().await;
    result.map(|_| log)
}
