use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ledger::ReceiptLedger;
use crate::simgen::{PayloadMode, PublishLog};
use crate::topic::{TopicFilter, TopicName};

/// Sent versus received for one topic. `received` includes duplicates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicTally {
    pub sent: u64,
    pub received: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub filter: String,
    /// Messages sent on topics this filter matches.
    pub expected: u64,
    pub received: u64,
    pub unique_received: u64,
    pub duplicates: u64,
    pub loss: u64,
    pub out_of_order: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub max_ms: f64,
}

/// Reconciliation of a publish log against what the verifier received.
/// Totals are sums over the subscribed filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub sent: u64,
    pub expected: u64,
    pub received: u64,
    pub unique_received: u64,
    pub duplicates: u64,
    pub loss: u64,
    pub out_of_order: u64,
    pub dup_flagged: u64,
    pub untagged: u64,
    pub unknown_payloads: u64,
    /// Sequence numbers (worker, seq) that never arrived; capped.
    pub missing_sample: Vec<(u32, u64)>,
    pub per_topic: BTreeMap<String, TopicTally>,
    pub per_filter: Vec<FilterReport>,
    /// First to last arrival.
    pub receipt_duration_ms: f64,
    pub latency: Option<LatencySummary>,
    pub receiver_errors: Vec<String>,
}

const MISSING_SAMPLE: usize = 20;

pub(crate) fn reconcile(
    log: &PublishLog,
    mode: PayloadMode,
    ledgers: &[(TopicFilter, ReceiptLedger)],
    receiver_errors: Vec<String>,
) -> VerificationReport {
    let mut per_filter = Vec::with_capacity(ledgers.len());
    let mut missing_sample = Vec::new();
    for (filter, ledger) in ledgers {
        let matching: Vec<bool> = log
            .catalog_topics
            .iter()
            .map(|t| TopicName::parse(t.as_str()).is_ok_and(|t| filter.matches(&t)))
            .collect();
        let expected: u64 = log
            .per_topic
            .iter()
            .filter(|(t, _)| TopicName::parse(t.as_str()).is_ok_and(|t| filter.matches(&t)))
            .map(|(_, n)| n)
            .sum();
        let unique = match mode {
            PayloadMode::Canonical => (ledger.received - ledger.dup_flagged).min(expected),
            PayloadMode::Sequenced => {
                let mut found = 0;
                for w in &log.workers {
                    for n in 0..w.sent {
                        if !matching[w.catalog_index(n, matching.len())] {
                            continue;
                        }
                        if ledger.contains(w.worker as u32, n) {
                            found += 1;
                        } else if missing_sample.len() < MISSING_SAMPLE {
                            missing_sample.push((w.worker as u32, n));
                        }
                    }
                }
                found
            }
        };
        per_filter.push(FilterReport {
            filter: filter.to_string(),
            expected,
            received: ledger.received,
            unique_received: unique,
            duplicates: ledger.received.saturating_sub(unique),
            loss: expected - unique,
            out_of_order: ledger.out_of_order,
        });
    }

    let mut per_topic: BTreeMap<String, TopicTally> = log
        .per_topic
        .iter()
        .map(|(t, &sent)| (t.clone(), TopicTally { sent, received: 0 }))
        .collect();
    for (_, ledger) in ledgers {
        for (t, &n) in &ledger.per_topic {
            per_topic.entry(t.clone()).or_default().received += n;
        }
    }

    let first = ledgers.iter().filter_map(|(_, l)| l.first_arrival).min();
    let last = ledgers.iter().filter_map(|(_, l)| l.last_arrival).max();
    let receipt_duration_ms = match (first, last) {
        (Some(a), Some(b)) => b.saturating_duration_since(a).as_secs_f64() * 1000.0,
        _ => 0.0,
    };
    let (sum, max, count) = ledgers.iter().fold((0, 0, 0), |(s, m, c), (_, l)| {
        let (ls, lm, lc) = l.latency_parts();
        (s + ls, m.max(lm), c + lc)
    });
    let latency = (count > 0).then(|| LatencySummary {
        mean_ms: sum as f64 / count as f64 / 1000.0,
        max_ms: max as f64 / 1000.0,
    });

    let total = |f: fn(&FilterReport) -> u64| per_filter.iter().map(f).sum::<u64>();
    let ledger_total =
        |f: fn(&ReceiptLedger) -> u64| ledgers.iter().map(|(_, l)| f(l)).sum::<u64>();
    VerificationReport {
        sent: log.total_sent(),
        expected: total(|f| f.expected),
        received: total(|f| f.received),
        unique_received: total(|f| f.unique_received),
        duplicates: total(|f| f.duplicates),
        loss: total(|f| f.loss),
        out_of_order: total(|f| f.out_of_order),
        dup_flagged: ledger_total(|l| l.dup_flagged),
        untagged: ledger_total(|l| l.untagged),
        unknown_payloads: ledger_total(|l| l.unknown_payloads),
        missing_sample,
        per_topic,
        per_filter,
        receipt_duration_ms,
        latency,
        receiver_errors,
    }
}
