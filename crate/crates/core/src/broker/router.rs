use std::collections::{HashMap, HashSet};
use std::sync::atomic::AtomicUsize;
use std::sync::Arc;

use bytes::Bytes;
use tokio::sync::{mpsc, Notify};

use crate::codec::QoS;
use crate::topic::{SubscriptionTree, TopicFilter, TopicName};

/// A message accepted from a publisher, shared by every session it fans out to.
#[derive(Debug)]
pub(crate) struct RoutedMessage {
    pub topic: TopicName,
    pub payload: Bytes,
}

#[derive(Debug, Clone)]
pub(crate) struct Delivery {
    pub message: Arc<RoutedMessage>,
    pub qos: QoS,
    pub retain: bool,
}

#[derive(Debug, Clone)]
pub struct RetainedMessage {
    pub payload: Bytes,
    pub qos: QoS,
}

/// Last retained message per topic.
#[derive(Debug, Default)]
pub struct RetainedStore {
    messages: HashMap<TopicName, RetainedMessage>,
}

impl RetainedStore {
    /// Stores `payload` for `topic`; an empty payload clears the entry.
    pub fn update(&mut self, topic: &TopicName, payload: Bytes, qos: QoS) {
        if payload.is_empty() {
            self.messages.remove(topic);
        } else {
            self.messages
                .insert(topic.clone(), RetainedMessage { payload, qos });
        }
    }

    pub fn get(&self, topic: &TopicName) -> Option<&RetainedMessage> {
        self.messages.get(topic)
    }

    pub fn matching<'a>(
        &'a self,
        filter: &'a TopicFilter,
    ) -> impl Iterator<Item = (&'a TopicName, &'a RetainedMessage)> + 'a {
        self.messages.iter().filter(move |(t, _)| filter.matches(t))
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

pub(crate) struct SessionEntry {
    pub generation: u64,
    pub outbound: mpsc::Sender<Delivery>,
    pub kick: Arc<Notify>,
    pub inflight: Arc<AtomicUsize>,
    pub filters: HashSet<TopicFilter>,
}

/// The single routing authority: subscriptions, retained messages and the
/// live session registry. Always accessed under the broker's mutex.
#[derive(Default)]
pub(crate) struct Router {
    pub tree: SubscriptionTree<String>,
    pub retained: RetainedStore,
    pub sessions: HashMap<String, SessionEntry>,
}

impl Router {
    /// Installs a session, evicting any live session with the same client id.
    pub fn register(&mut self, client_id: &str, entry: SessionEntry) {
        if let Some(old) = self.sessions.remove(client_id) {
            for filter in &old.filters {
                self.tree.unsubscribe(filter, &client_id.to_owned());
            }
            old.kick.notify_one();
        }
        self.sessions.insert(client_id.to_owned(), entry);
    }

    /// Removes the session if it is still the given generation.
    pub fn deregister(&mut self, client_id: &str, generation: u64) {
        if self
            .sessions
            .get(client_id)
            .is_some_and(|e| e.generation == generation)
        {
            let entry = self.sessions.remove(client_id).expect("checked above");
            let key = client_id.to_owned();
            for filter in &entry.filters {
                self.tree.unsubscribe(filter, &key);
            }
        }
    }

    /// Matching sessions for `topic`, one per client at the highest granted
    /// QoS among its matching filters.
    pub fn targets(&self, topic: &TopicName) -> Vec<(mpsc::Sender<Delivery>, QoS)> {
        let mut best: HashMap<String, QoS> = HashMap::new();
        for (client, qos) in self.tree.route(topic) {
            let slot = best.entry(client).or_insert(qos);
            *slot = (*slot).max(qos);
        }
        best.into_iter()
            .filter_map(|(client, qos)| {
                self.sessions
                    .get(&client)
                    .map(|e| (e.outbound.clone(), qos))
            })
            .collect()
    }
}
