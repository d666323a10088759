use std::collections::{HashMap, HashSet};
use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::sync::{mpsc, watch, Notify};
use tokio::time::{sleep_until, Instant};

use super::router::{Delivery, RoutedMessage, SessionEntry};
use super::Shared;
use crate::client::{ClientError, PacketReader, PacketWriter};
use crate::codec::{
    Connack, Connect, Packet, ProtocolLevel, Puback, Publish, QoS, Suback, Unsuback,
};

const CONTROL_CAPACITY: usize = 1024;
/// Upper bound on deliveries coalesced into one socket write.
const WRITE_BATCH: usize = 256;

enum Control {
    Send(Packet),
    /// Subscriber acknowledged an outbound QoS 1 delivery.
    Acked(u16),
}

/// Work a PUBLISH or SUBSCRIBE left outstanding: pushing into subscriber
/// queues, which may wait on back-pressure. Yields the PUBACK to send, if any.
type PendingDelivery = Pin<Box<dyn Future<Output = Option<u16>> + Send>>;

#[derive(Debug)]
enum Exit {
    Disconnect,
    Eof,
    Kicked,
    Shutdown,
    KeepAliveExpired,
    Error(String),
}

pub(super) async fn run(
    stream: TcpStream,
    shared: Arc<Shared>,
    mut shutdown: watch::Receiver<bool>,
) {
    let cfg = &shared.config;
    let (rd, wr) = stream.into_split();
    let mut reader = PacketReader::new(rd, ProtocolLevel::V5)
        .with_max_remaining_length(cfg.max_remaining_length);
    let mut writer = PacketWriter::new(wr, ProtocolLevel::V5);

    let connect = tokio::select! {
        _ = shutdown.changed() => return,
        r = tokio::time::timeout(Duration::from_millis(cfg.connect_timeout_ms), reader.read_packet()) => match r {
            Ok(Ok(Some(Packet::Connect(c)))) => c,
            Ok(Ok(Some(other))) => {
                log::debug!("{} before CONNECT, closing", other.kind());
                return;
            }
            Ok(Ok(None)) => return,
            Ok(Err(e)) => {
                log::debug!("handshake failed: {e}");
                return;
            }
            Err(_) => {
                log::debug!("no CONNECT within timeout");
                return;
            }
        }
    };

    let level = connect.protocol_level;
    reader.set_level(level);
    writer.set_level(level);
    if !cfg.protocol_levels.contains(&level) {
        // 0x01: unacceptable protocol version; 0x84: unsupported protocol version
        let code = if level.is_v5() { 0x84 } else { 0x01 };
        let _ = writer
            .send(&Packet::Connack(Connack {
                session_present: false,
                code,
            }))
            .await;
        return;
    }

    let client_id = if connect.client_id.is_empty() {
        format!("auto-{}", shared.next_generation.load(Ordering::Relaxed))
    } else {
        connect.client_id.clone()
    };
    let generation = shared.next_generation.fetch_add(1, Ordering::Relaxed);
    let (queue_tx, queue_rx) = mpsc::channel(cfg.queue_capacity);
    let (control_tx, control_rx) = mpsc::channel(CONTROL_CAPACITY);
    let kick = Arc::new(Notify::new());
    let inflight = Arc::new(AtomicUsize::new(0));

    shared.router().register(
        &client_id,
        SessionEntry {
            generation,
            outbound: queue_tx.clone(),
            kick: kick.clone(),
            inflight: inflight.clone(),
            filters: HashSet::new(),
        },
    );
    shared.counters.connected.fetch_add(1, Ordering::AcqRel);
    log::debug!(
        "session {client_id} (gen {generation}) connected at level {}",
        level.as_u8()
    );

    let mut writer_task = tokio::spawn(write_loop(
        writer,
        control_rx,
        queue_rx,
        shared.clone(),
        inflight,
        kick.clone(),
    ));
    let _ = control_tx
        .send(Control::Send(Packet::Connack(Connack {
            session_present: false,
            code: 0,
        })))
        .await;

    let mut session = Session {
        shared: shared.clone(),
        client_id,
        own_queue: queue_tx,
        control: control_tx,
    };
    let exit = session
        .read_loop(&mut reader, &connect, &kick, &mut shutdown)
        .await;
    match &exit {
        Exit::Error(reason) => log::warn!("session {} closed: {reason}", session.client_id),
        other => log::debug!("session {} exiting: {other:?}", session.client_id),
    }

    shared.router().deregister(&session.client_id, generation);
    shared.counters.connected.fetch_sub(1, Ordering::AcqRel);
    drop(session);
    // the writer drains and exits once the control channel closes; a client
    // that stopped reading cannot hold us here
    if tokio::time::timeout(Duration::from_secs(1), &mut writer_task)
        .await
        .is_err()
    {
        writer_task.abort();
    }
}

struct Session {
    shared: Arc<Shared>,
    client_id: String,
    own_queue: mpsc::Sender<Delivery>,
    control: mpsc::Sender<Control>,
}

impl Session {
    async fn read_loop(
        &mut self,
        reader: &mut PacketReader<OwnedReadHalf>,
        connect: &Connect,
        kick: &Notify,
        shutdown: &mut watch::Receiver<bool>,
    ) -> Exit {
        let keep_alive = (connect.keep_alive > 0).then(|| {
            Duration::from_secs_f64(
                f64::from(connect.keep_alive) * self.shared.config.keep_alive_grace,
            )
        });
        let mut last_activity = Instant::now();
        let mut pending: Option<PendingDelivery> = None;
        // at most one PUBLISH read ahead while a delivery is blocked
        let mut held: Option<Publish> = None;

        loop {
            if pending.is_none() {
                if let Some(p) = held.take() {
                    pending = self.on_publish(p);
                    last_activity = Instant::now();
                    continue;
                }
            }
            // a session stalled by back-pressure is not idle
            let deadline = match keep_alive {
                Some(ka) if held.is_none() => last_activity + ka,
                _ => Instant::now() + Duration::from_secs(86_400),
            };

            tokio::select! {
                biased;
                _ = kick.notified() => return Exit::Kicked,
                _ = shutdown.changed() => return Exit::Shutdown,
                ack = poll_pending(&mut pending), if pending.is_some() => {
                    pending = None;
                    last_activity = Instant::now();
                    if let Some(packet_id) = ack {
                        if self.control.send(Control::Send(Packet::Puback(Puback { packet_id }))).await.is_err() {
                            return Exit::Error("writer gone".into());
                        }
                    }
                }
                read = reader.read_packet(), if held.is_none() => {
                    last_activity = Instant::now();
                    let packet = match read {
                        Ok(Some(p)) => p,
                        Ok(None) => {
                            self.finish(&mut pending, held.take(), kick, shutdown).await;
                            return Exit::Eof;
                        }
                        Err(ClientError::Decode(e)) => return Exit::Error(format!("malformed packet: {e}")),
                        Err(e) => return Exit::Error(e.to_string()),
                    };
                    match packet {
                        Packet::Publish(p) if pending.is_some() => held = Some(p),
                        Packet::Publish(p) => pending = self.on_publish(p),
                        Packet::Subscribe(s) => {
                            if pending.is_some() {
                                // retained replay must queue behind the outstanding delivery
                                if let Some(id) = poll_pending(&mut pending).await {
                                    let _ = self.control.send(Control::Send(Packet::Puback(Puback { packet_id: id }))).await;
                                }
                            }
                            pending = self.on_subscribe(s).await;
                        }
                        Packet::Unsubscribe(u) => {
                            let mut codes = Vec::with_capacity(u.filters.len());
                            {
                                let mut router = self.shared.router();
                                for f in &u.filters {
                                    let existed = router.tree.unsubscribe(f, &self.client_id);
                                    if let Some(e) = router.sessions.get_mut(&self.client_id) {
                                        e.filters.remove(f);
                                    }
                                    codes.push(if existed { 0x00 } else { 0x11 });
                                }
                            }
                            let reason_codes = if connect.protocol_level.is_v5() { codes } else { Vec::new() };
                            let ack = Packet::Unsuback(Unsuback { packet_id: u.packet_id, reason_codes });
                            if self.control.send(Control::Send(ack)).await.is_err() {
                                return Exit::Error("writer gone".into());
                            }
                        }
                        Packet::Puback(a) => {
                            if self.control.send(Control::Acked(a.packet_id)).await.is_err() {
                                return Exit::Error("writer gone".into());
                            }
                        }
                        Packet::Pingreq => {
                            if self.control.send(Control::Send(Packet::Pingresp)).await.is_err() {
                                return Exit::Error("writer gone".into());
                            }
                        }
                        Packet::Disconnect => {
                            self.finish(&mut pending, None, kick, shutdown).await;
                            return Exit::Disconnect;
                        }
                        other => return Exit::Error(format!("unexpected {} from client", other.kind())),
                    }
                }
                _ = sleep_until(deadline), if keep_alive.is_some() && held.is_none() => return Exit::KeepAliveExpired,
            }
        }
    }

    /// Completes outstanding deliveries before the session closes, unless the
    /// session is evicted or the broker stops first.
    async fn finish(
        &mut self,
        pending: &mut Option<PendingDelivery>,
        held: Option<Publish>,
        kick: &Notify,
        shutdown: &mut watch::Receiver<bool>,
    ) {
        let work = async {
            if let Some(id) = poll_pending(pending).await {
                let _ = self
                    .control
                    .send(Control::Send(Packet::Puback(Puback { packet_id: id })))
                    .await;
            }
            if let Some(p) = held {
                let mut next = self.on_publish(p);
                poll_pending(&mut next).await;
            }
        };
        tokio::select! {
            _ = work => {}
            _ = kick.notified() => {}
            _ = shutdown.changed() => {}
        }
    }

    /// Routes a PUBLISH. The returned future completes once every matching
    /// queue has accepted the message.
    fn on_publish(&mut self, publish: Publish) -> Option<PendingDelivery> {
        let targets = {
            let mut router = self.shared.router();
            if publish.retain {
                router
                    .retained
                    .update(&publish.topic, publish.payload.clone(), publish.qos);
            }
            router.targets(&publish.topic)
        };
        self.shared.counters.routed.fetch_add(1, Ordering::Relaxed);
        let ack = match publish.qos {
            QoS::AtLeastOnce => publish.packet_id,
            QoS::AtMostOnce => None,
        };
        if targets.is_empty() {
            return Some(Box::pin(async move { ack }));
        }
        let message = Arc::new(RoutedMessage {
            topic: publish.topic,
            payload: publish.payload,
        });
        let qos = publish.qos;
        Some(Box::pin(async move {
            for (queue, granted) in targets {
                let delivery = Delivery {
                    message: message.clone(),
                    qos: qos.min(granted),
                    retain: false,
                };
                // a closed queue means that subscriber has gone away
                let _ = queue.send(delivery).await;
            }
            ack
        }))
    }

    async fn on_subscribe(
        &mut self,
        subscribe: crate::codec::Subscribe,
    ) -> Option<PendingDelivery> {
        let mut granted = Vec::with_capacity(subscribe.entries.len());
        let mut replay = Vec::new();
        {
            let mut router = self.shared.router();
            for (filter, requested) in &subscribe.entries {
                let qos = (*requested).min(QoS::AtLeastOnce);
                router.tree.subscribe(filter, self.client_id.clone(), qos);
                if let Some(e) = router.sessions.get_mut(&self.client_id) {
                    e.filters.insert(filter.clone());
                }
                for (topic, msg) in router.retained.matching(filter) {
                    replay.push(Delivery {
                        message: Arc::new(RoutedMessage {
                            topic: topic.clone(),
                            payload: msg.payload.clone(),
                        }),
                        qos: msg.qos.min(qos),
                        retain: true,
                    });
                }
                granted.push(qos.as_u8());
            }
        }
        let ack = Packet::Suback(Suback {
            packet_id: subscribe.packet_id,
            reason_codes: granted,
        });
        let _ = self.control.send(Control::Send(ack)).await;
        if replay.is_empty() {
            return None;
        }
        let queue = self.own_queue.clone();
        Some(Box::pin(async move {
            for d in replay {
                let _ = queue.send(d).await;
            }
            None
        }))
    }
}

async fn poll_pending(pending: &mut Option<PendingDelivery>) -> Option<u16> {
    match pending.as_mut() {
        Some(f) => f.await,
        None => None,
    }
}

struct Inflight {
    publish: Publish,
    sent_at: Instant,
}

async fn write_loop(
    mut writer: PacketWriter<OwnedWriteHalf>,
    mut control: mpsc::Receiver<Control>,
    mut queue: mpsc::Receiver<Delivery>,
    shared: Arc<Shared>,
    inflight_gauge: Arc<AtomicUsize>,
    kick: Arc<Notify>,
) {
    let cfg = &shared.config;
    let timeout = cfg.retransmit_timeout();
    let mut tick = tokio::time::interval((timeout / 4).max(Duration::from_millis(5)));
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut inflight: HashMap<u16, Inflight> = HashMap::new();
    let mut next_id: u16 = 0;

    let result: Result<(), ClientError> = async {
        loop {
            tokio::select! {
                biased;
                ctrl = control.recv() => {
                    let Some(ctrl) = ctrl else { break };
                    let mut next = Some(ctrl);
                    while let Some(c) = next {
                        match c {
                            Control::Send(p) => writer.queue(&p)?,
                            Control::Acked(id) => {
                                if inflight.remove(&id).is_some() {
                                    shared.counters.acked.fetch_add(1, Ordering::Relaxed);
                                }
                            }
                        }
                        next = control.try_recv().ok();
                    }
                }
                d = queue.recv(), if inflight.len() < cfg.max_inflight => {
                    let Some(d) = d else { break };
                    let mut next = Some(d);
                    let mut batch = 0;
                    while let Some(d) = next {
                        let mut publish = Publish::new(d.message.topic.clone(), d.qos, d.message.payload.clone());
                        publish.retain = d.retain;
                        if d.qos == QoS::AtLeastOnce {
                            let id = allocate_id(&mut next_id, &inflight);
                            publish.packet_id = Some(id);
                            writer.queue(&Packet::Publish(publish.clone()))?;
                            inflight.insert(id, Inflight { publish, sent_at: Instant::now() });
                        } else {
                            writer.queue(&Packet::Publish(publish))?;
                        }
                        shared.counters.delivered.fetch_add(1, Ordering::Relaxed);
                        batch += 1;
                        next = if batch < WRITE_BATCH && inflight.len() < cfg.max_inflight {
                            queue.try_recv().ok()
                        } else {
                            None
                        };
                    }
                }
                _ = tick.tick(), if !inflight.is_empty() => {
                    let now = Instant::now();
                    for entry in inflight.values_mut() {
                        if now.duration_since(entry.sent_at) >= timeout {
                            entry.publish.dup = true;
                            entry.sent_at = now;
                            writer.queue(&Packet::Publish(entry.publish.clone()))?;
                            shared.counters.retransmitted.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
            }
            inflight_gauge.store(inflight.len(), Ordering::Relaxed);
            writer.flush().await?;
        }
        let _ = writer.shutdown().await;
        Ok(())
    }
    .await;

    if let Err(e) = result {
        log::debug!("writer stopped: {e}");
    }
    // wake the reader so the session tears down
    kick.notify_one();
}

fn allocate_id(next: &mut u16, inflight: &HashMap<u16, Inflight>) -> u16 {
    loop {
        *next = next.wrapping_add(1);
        if *next != 0 && !inflight.contains_key(next) {
            return *next;
        }
    }
}
