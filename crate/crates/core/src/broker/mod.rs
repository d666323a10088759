//! Single-node in-process MQTT broker.
//!
//! Each connection runs a reader (protocol state machine) and a writer task.
//! Routing goes through one mutex-guarded [`Router`](router::Router); fan-out
//! is through bounded per-session queues. When a subscriber's queue is full
//! the publishing session stops reading its socket until space frees up, and
//! its PUBACK is withheld until every matching queue has accepted the message.
//! Nothing is ever dropped.

mod router;
mod session;

pub use router::{RetainedMessage, RetainedStore};

use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::{JoinHandle, JoinSet};

use crate::codec::{ProtocolLevel, DEFAULT_MAX_REMAINING_LENGTH};
use router::Router;

pub const DEFAULT_PORT: u16 = 1883;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrokerConfig {
    pub bind: IpAddr,
    /// 0 asks the OS for an ephemeral port.
    pub port: u16,
    /// Unacknowledged QoS 1 deliveries per session.
    pub max_inflight: usize,
    /// Outbound queue capacity per session, in messages.
    pub queue_capacity: usize,
    /// Multiple of the negotiated keep-alive after which an idle client is dropped.
    pub keep_alive_grace: f64,
    pub protocol_levels: Vec<ProtocolLevel>,
    pub retransmit_timeout_ms: u64,
    pub max_remaining_length: usize,
    pub connect_timeout_ms: u64,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            bind: IpAddr::V4(Ipv4Addr::UNSPECIFIED),
            port: DEFAULT_PORT,
            max_inflight: 1_000,
            queue_capacity: 100_000,
            keep_alive_grace: 1.5,
            protocol_levels: vec![ProtocolLevel::V311, ProtocolLevel::V5],
            retransmit_timeout_ms: 5_000,
            max_remaining_length: DEFAULT_MAX_REMAINING_LENGTH,
            connect_timeout_ms: 10_000,
        }
    }
}

impl BrokerConfig {
    /// Loopback, OS-assigned port. Used for embedded benchmark runs.
    pub fn ephemeral() -> Self {
        BrokerConfig {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), BrokerError> {
        let bad = |msg: &str| Err(BrokerError::InvalidConfig(msg.to_owned()));
        if self.max_inflight == 0 || self.max_inflight > u16::MAX as usize - 1 {
            return bad("max_inflight must be in 1..=65534");
        }
        if self.queue_capacity == 0 {
            return bad("queue_capacity must be >= 1");
        }
        if self.keep_alive_grace.is_nan() || self.keep_alive_grace < 1.0 {
            return bad("keep_alive_grace must be >= 1.0");
        }
        if self.protocol_levels.is_empty() {
            return bad("at least one protocol level must be accepted");
        }
        if self.retransmit_timeout_ms == 0 {
            return bad("retransmit_timeout_ms must be >= 1");
        }
        Ok(())
    }

    fn retransmit_timeout(&self) -> Duration {
        Duration::from_millis(self.retransmit_timeout_ms)
    }
}

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("invalid broker config: {0}")]
    InvalidConfig(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
}

#[derive(Debug, Default)]
pub(crate) struct Counters {
    pub connected: AtomicUsize,
    pub routed: AtomicU64,
    pub delivered: AtomicU64,
    pub retransmitted: AtomicU64,
    pub acked: AtomicU64,
}

/// Snapshot of broker state.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BrokerStats {
    /// Sessions past CONNACK and not yet closed.
    pub connected: usize,
    /// PUBLISH packets accepted and routed.
    pub routed: u64,
    /// PUBLISH packets written to subscribers, excluding retransmissions.
    pub delivered: u64,
    pub retransmitted: u64,
    /// Outbound QoS 1 deliveries acknowledged by subscribers.
    pub acked: u64,
    pub subscriptions: usize,
    pub retained: usize,
    /// Per-client outbound queue length.
    pub queue_depths: HashMap<String, usize>,
    /// Per-client unacknowledged QoS 1 deliveries.
    pub inflight: HashMap<String, usize>,
}

pub(crate) struct Shared {
    pub config: BrokerConfig,
    pub router: Mutex<Router>,
    pub counters: Counters,
    pub next_generation: AtomicU64,
}

impl Shared {
    pub fn router(&self) -> std::sync::MutexGuard<'_, Router> {
        self.router.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// A running broker. Dropping the handle without [`stop`](Self::stop) leaves
/// the listener running until the runtime shuts down.
pub struct BrokerHandle {
    local_addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: watch::Sender<bool>,
    acceptor: JoinHandle<()>,
}

/// Binds the listener and starts accepting connections.
pub async fn start(config: BrokerConfig) -> Result<BrokerHandle, BrokerError> {
    config.validate()?;
    let addr = SocketAddr::new(config.bind, config.port);
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| BrokerError::Bind { addr, source })?;
    let local_addr = listener
        .local_addr()
        .map_err(|source| BrokerError::Bind { addr, source })?;
    log::info!("broker listening on {local_addr}");

    let shared = Arc::new(Shared {
        config,
        router: Mutex::new(Router::default()),
        counters: Counters::default(),
        next_generation: AtomicU64::new(1),
    });
    let (shutdown, shutdown_rx) = watch::channel(false);
    let acceptor = tokio::spawn(accept_loop(listener, shared.clone(), shutdown_rx));
    Ok(BrokerHandle {
        local_addr,
        shared,
        shutdown,
        acceptor,
    })
}

async fn accept_loop(
    listener: TcpListener,
    shared: Arc<Shared>,
    mut shutdown: watch::Receiver<bool>,
) {
    let mut sessions = JoinSet::new();
    loop {
        tokio::select! {
            _ = shutdown.changed() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    log::debug!("accepted {peer}");
                    let _ = stream.set_nodelay(true);
                    sessions.spawn(session::run(stream, shared.clone(), shutdown.clone()));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            },
            Some(_) = sessions.join_next() => {}
        }
    }
    drop(listener);
    while sessions.join_next().await.is_some() {}
}

impl BrokerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// `host:port` suitable for clients; the unspecified bind address is
    /// replaced by loopback.
    pub fn endpoint(&self) -> String {
        let ip = if self.local_addr.ip().is_unspecified() {
            IpAddr::V4(Ipv4Addr::LOCALHOST)
        } else {
            self.local_addr.ip()
        };
        SocketAddr::new(ip, self.local_addr.port()).to_string()
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.shared.config
    }

    pub fn stats(&self) -> BrokerStats {
        let c = &self.shared.counters;
        let router = self.shared.router();
        BrokerStats {
            connected: c.connected.load(Ordering::Acquire),
            routed: c.routed.load(Ordering::Relaxed),
            delivered: c.delivered.load(Ordering::Relaxed),
            retransmitted: c.retransmitted.load(Ordering::Relaxed),
            acked: c.acked.load(Ordering::Relaxed),
            subscriptions: router.tree.len(),
            retained: router.retained.len(),
            queue_depths: router
                .sessions
                .iter()
                .map(|(id, e)| {
                    (
                        id.clone(),
                        e.outbound.max_capacity() - e.outbound.capacity(),
                    )
                })
                .collect(),
            inflight: router
                .sessions
                .iter()
                .map(|(id, e)| (id.clone(), e.inflight.load(Ordering::Relaxed)))
                .collect(),
        }
    }

    /// Closes the listener and every session, then waits for all of them.
    pub async fn stop(self) {
        let _ = self.shutdown.send(true);
        if let Err(e) = self.acceptor.await {
            log::warn!("acceptor task failed: {e}");
        }
        log::info!("broker on {} stopped", self.local_addr);
    }
}
