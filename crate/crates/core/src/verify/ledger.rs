use std::collections::{BTreeMap, HashMap, HashSet};

use bytes::Bytes;
use tokio::time::Instant;

use crate::codec::Publish;
use crate::simgen::{parse_sequence_tag, PayloadMode, SequenceTag};

/// Growable bitmap of sequence numbers seen from one worker.
#[derive(Debug, Default, Clone)]
struct SeqBitmap {
    words: Vec<u64>,
}

impl SeqBitmap {
    /// Marks `seq`; returns false if it was already set.
    fn insert(&mut self, seq: u64) -> bool {
        let (word, bit) = ((seq / 64) as usize, seq % 64);
        if word >= self.words.len() {
            self.words.resize(word + 1, 0);
        }
        let mask = 1u64 << bit;
        let fresh = self.words[word] & mask == 0;
        self.words[word] |= mask;
        fresh
    }

    fn contains(&self, seq: u64) -> bool {
        self.words
            .get((seq / 64) as usize)
            .is_some_and(|w| w & (1 << (seq % 64)) != 0)
    }
}

/// Everything one subscriber connection has received.
#[derive(Debug, Default, Clone)]
pub struct ReceiptLedger {
    pub received: u64,
    /// Arrivals carrying the dup flag.
    pub dup_flagged: u64,
    pub per_topic: BTreeMap<String, u64>,
    /// Tagged arrivals seen for the first time.
    pub unique_tagged: u64,
    pub duplicate_tagged: u64,
    /// Arrivals without a sequence tag in sequenced mode.
    pub untagged: u64,
    /// Tagged arrivals older than an earlier arrival on the same worker and topic.
    pub out_of_order: u64,
    /// Payloads that match no expected payload (only checked when expectations are set).
    pub unknown_payloads: u64,
    pub first_arrival: Option<Instant>,
    pub last_arrival: Option<Instant>,
    latency_sum_us: u64,
    latency_max_us: u64,
    latency_count: u64,
    seen: HashMap<u32, SeqBitmap>,
    newest: HashMap<u32, HashMap<String, u64>>,
}

impl ReceiptLedger {
    pub fn record(
        &mut self,
        publish: &Publish,
        now: Instant,
        recv_us: u64,
        mode: PayloadMode,
        expected: Option<&HashSet<Bytes>>,
    ) -> Option<SequenceTag> {
        self.received += 1;
        self.dup_flagged += u64::from(publish.dup);
        self.first_arrival.get_or_insert(now);
        self.last_arrival = Some(now);
        let topic = publish.topic.as_str();
        match self.per_topic.get_mut(topic) {
            Some(n) => *n += 1,
            None => {
                self.per_topic.insert(topic.to_string(), 1);
            }
        }

        let (tag, body) = match mode {
            PayloadMode::Canonical => (None, &publish.payload[..]),
            PayloadMode::Sequenced => match parse_sequence_tag(&publish.payload) {
                Some((tag, head)) => (Some(tag), &publish.payload[head..]),
                None => {
                    self.untagged += 1;
                    (None, &publish.payload[..])
                }
            },
        };
        if let Some(expected) = expected {
            if !expected.contains(body) {
                self.unknown_payloads += 1;
            }
        }
        if let Some(tag) = tag {
            self.record_tag(tag, topic, recv_us);
        }
        tag
    }

    fn record_tag(&mut self, tag: SequenceTag, topic: &str, recv_us: u64) {
        if !self.seen.entry(tag.worker).or_default().insert(tag.seq) {
            self.duplicate_tagged += 1;
            return;
        }
        self.unique_tagged += 1;
        let streams = self.newest.entry(tag.worker).or_default();
        match streams.get_mut(topic) {
            Some(newest) if tag.seq < *newest => self.out_of_order += 1,
            Some(newest) => *newest = tag.seq,
            None => {
                streams.insert(topic.to_string(), tag.seq);
            }
        }
        let latency = recv_us.saturating_sub(tag.sent_at_us);
        self.latency_sum_us += latency;
        self.latency_max_us = self.latency_max_us.max(latency);
        self.latency_count += 1;
    }

    pub fn contains(&self, worker: u32, seq: u64) -> bool {
        self.seen.get(&worker).is_some_and(|b| b.contains(seq))
    }

    /// Mean and max publish-to-receipt latency in ms, from embedded send times.
    pub fn latency_ms(&self) -> Option<(f64, f64)> {
        (self.latency_count > 0).then(|| {
            (
                self.latency_sum_us as f64 / self.latency_count as f64 / 1000.0,
                self.latency_max_us as f64 / 1000.0,
            )
        })
    }

    pub(crate) fn latency_parts(&self) -> (u64, u64, u64) {
        (self.latency_sum_us, self.latency_max_us, self.latency_count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::QoS;
    use crate::simgen::sequenced_payload;
    use crate::topic::TopicName;

    fn tagged(topic: &str, worker: u32, seq: u64) -> Publish {
        let payload = sequenced_payload(
            SequenceTag {
                worker,
                seq,
                sent_at_us: 1_000,
            },
            b"body",
        );
        Publish::new(TopicName::parse(topic).unwrap(), QoS::AtLeastOnce, payload)
    }

    #[test]
    fn bitmap() {
        let mut b = SeqBitmap::default();
        assert!(b.insert(0));
        assert!(b.insert(200));
        assert!(!b.insert(200));
        assert!(b.contains(0) && b.contains(200) && !b.contains(199) && !b.contains(10_000));
    }

    #[test]
    fn sequenced_duplicates_and_order() {
        let mut l = ReceiptLedger::default();
        let now = Instant::now();
        for (w, s) in [(0, 0), (0, 2), (0, 1), (0, 2), (1, 0)] {
            l.record(
                &tagged("a/b", w, s),
                now,
                3_000,
                PayloadMode::Sequenced,
                None,
            );
        }
        assert_eq!(l.received, 5);
        assert_eq!(l.unique_tagged, 4);
        assert_eq!(l.duplicate_tagged, 1);
        assert_eq!(l.out_of_order, 1);
        assert!(l.contains(0, 1) && !l.contains(1, 1));
        assert_eq!(l.latency_ms(), Some((2.0, 2.0)));
    }

    #[test]
    fn order_is_per_topic() {
        let mut l = ReceiptLedger::default();
        let now = Instant::now();
        l.record(&tagged("a", 0, 5), now, 0, PayloadMode::Sequenced, None);
        l.record(&tagged("b", 0, 3), now, 0, PayloadMode::Sequenced, None);
        assert_eq!(l.out_of_order, 0);
    }

    #[test]
    fn canonical_counts_dup_flag_and_payload_fidelity() {
        let mut l = ReceiptLedger::default();
        let expected: HashSet<Bytes> = [Bytes::from_static(b"ok")].into();
        let topic = TopicName::parse("t").unwrap();
        let mut p = Publish::new(topic.clone(), QoS::AtLeastOnce, Bytes::from_static(b"ok"));
        let now = Instant::now();
        assert_eq!(
            l.record(&p, now, 0, PayloadMode::Canonical, Some(&expected)),
            None
        );
        p.dup = true;
        l.record(&p, now, 0, PayloadMode::Canonical, Some(&expected));
        let other = Publish::new(topic, QoS::AtMostOnce, Bytes::from_static(b"nope"));
        l.record(&other, now, 0, PayloadMode::Canonical, Some(&expected));
        assert_eq!((l.received, l.dup_flagged, l.unknown_payloads), (3, 1, 1));
        assert_eq!(l.per_topic["t"], 3);
    }

    #[test]
    fn untagged_in_sequenced_mode() {
        let mut l = ReceiptLedger::default();
        let p = Publish::new(
            TopicName::parse("t").unwrap(),
            QoS::AtMostOnce,
            Bytes::from_static(b"plain"),
        );
        l.record(&p, Instant::now(), 0, PayloadMode::Sequenced, None);
        assert_eq!((l.untagged, l.unique_tagged), (1, 0));
    }
}
