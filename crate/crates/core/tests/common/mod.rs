#![allow(dead_code)]

use bytes::Bytes;
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;

use mqtt_testbed::codec::{
    Connack, Connect, Packet, ProtocolLevel, Puback, Publish, QoS, Suback, Subscribe, Unsuback,
    Unsubscribe,
};
use mqtt_testbed::topic::{TopicFilter, TopicName};

pub fn protocol_level() -> impl Strategy<Value = ProtocolLevel> {
    prop_oneof![Just(ProtocolLevel::V311), Just(ProtocolLevel::V5)]
}

pub fn qos() -> impl Strategy<Value = QoS> {
    prop_oneof![Just(QoS::AtMostOnce), Just(QoS::AtLeastOnce)]
}

/// Small alphabet so random filters and topics collide often.
fn topic_level() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => prop::sample::select(vec!["a", "b", "c", "s1t", "state", ""]).prop_map(String::from),
        1 => "[a-z0-9_ é€-]{1,6}",
    ]
}

pub fn topic_string() -> impl Strategy<Value = String> {
    (prop::bool::weighted(0.1), vec(topic_level(), 1..6)).prop_map(|(system, levels)| {
        let mut t = levels.join("/");
        if system {
            t.insert(0, '$');
        }
        if t.is_empty() {
            t.push('x');
        }
        t
    })
}

pub fn topic_name() -> impl Strategy<Value = TopicName> {
    topic_string().prop_map(|t| TopicName::parse(t).unwrap())
}

pub fn filter_string() -> impl Strategy<Value = String> {
    let seg = prop_oneof![3 => topic_level(), 1 => Just("+".to_string())];
    (
        vec(seg, 0..5),
        prop::bool::weighted(0.3),
        prop::bool::weighted(0.05),
    )
        .prop_map(|(mut levels, hash, system)| {
            if hash || levels.is_empty() {
                levels.push("#".to_string());
            }
            let mut f = levels.join("/");
            if f.is_empty() {
                f.push('x');
            }
            if system && !f.starts_with(['+', '#']) {
                f.insert(0, '$');
            }
            f
        })
}

pub fn topic_filter() -> impl Strategy<Value = TopicFilter> {
    filter_string().prop_map(|f| TopicFilter::parse(f).unwrap())
}

fn packet_id() -> impl Strategy<Value = u16> {
    1..=u16::MAX
}

fn publish(level: ProtocolLevel) -> impl Strategy<Value = Publish> {
    let props = if level.is_v5() {
        vec(any::<u8>(), 0..12).boxed()
    } else {
        Just(Vec::new()).boxed()
    };
    (
        topic_name(),
        qos(),
        any::<bool>(),
        any::<bool>(),
        packet_id(),
        vec(any::<u8>(), 0..300),
        props,
    )
        .prop_map(|(topic, qos, retain, dup, id, payload, props)| Publish {
            topic,
            qos,
            retain,
            dup: dup && qos == QoS::AtLeastOnce,
            packet_id: (qos == QoS::AtLeastOnce).then_some(id),
            payload: Bytes::from(payload),
            properties: Bytes::from(props),
        })
}

/// A packet valid for `level`.
pub fn packet_for(level: ProtocolLevel) -> BoxedStrategy<Packet> {
    let unsuback_codes = if level.is_v5() {
        vec(prop::sample::select(vec![0x00u8, 0x11]), 1..4).boxed()
    } else {
        Just(Vec::new()).boxed()
    };
    prop_oneof![
        1 => (protocol_level(), "[A-Za-z0-9-]{0,23}", any::<u16>(), any::<bool>()).prop_map(
            |(protocol_level, client_id, keep_alive, clean_start)| Packet::Connect(Connect {
                protocol_level,
                client_id,
                keep_alive,
                clean_start,
            })
        ),
        1 => (any::<bool>(), any::<u8>()).prop_map(|(session_present, code)| Packet::Connack(Connack { session_present, code })),
        3 => publish(level).prop_map(Packet::Publish),
        1 => packet_id().prop_map(|packet_id| Packet::Puback(Puback { packet_id })),
        1 => (packet_id(), vec((topic_filter(), qos()), 1..4))
            .prop_map(|(packet_id, entries)| Packet::Subscribe(Subscribe { packet_id, entries })),
        1 => (packet_id(), vec(prop::sample::select(vec![0u8, 1, 0x80]), 1..4))
            .prop_map(|(packet_id, reason_codes)| Packet::Suback(Suback { packet_id, reason_codes })),
        1 => (packet_id(), vec(topic_filter(), 1..4))
            .prop_map(|(packet_id, filters)| Packet::Unsubscribe(Unsubscribe { packet_id, filters })),
        1 => (packet_id(), unsuback_codes)
            .prop_map(|(packet_id, reason_codes)| Packet::Unsuback(Unsuback { packet_id, reason_codes })),
        1 => Just(Packet::Pingreq),
        1 => Just(Packet::Pingresp),
        1 => Just(Packet::Disconnect),
    ]
    .boxed()
}

pub fn level_and_packet() -> impl Strategy<Value = (ProtocolLevel, Packet)> {
    protocol_level().prop_flat_map(|l| (Just(l), packet_for(l)))
}

/// Draws `n` values from `strategy` with a deterministic runner.
pub fn sample<S: Strategy>(strategy: S, n: usize) -> Vec<S::Value> {
    let mut runner = TestRunner::deterministic();
    (0..n)
        .map(|_| {
            strategy
                .new_tree(&mut runner)
                .expect("strategy generates")
                .current()
        })
        .collect()
}

/// Reference matcher, written independently of the library: recursive
/// descent over the split levels.
pub fn naive_matches(filter: &str, topic: &str) -> bool {
    fn go(f: &[&str], t: &[&str]) -> bool {
        match (f.split_first(), t.split_first()) {
            (Some((&"#", _)), _) => true,
            (Some((&"+", fr)), Some((_, tr))) => go(fr, tr),
            (Some((a, fr)), Some((b, tr))) => a == b && go(fr, tr),
            (None, None) => true,
            _ => false,
        }
    }
    if topic.starts_with('$') && (filter.starts_with('+') || filter.starts_with('#')) {
        return false;
    }
    let f: Vec<&str> = filter.split('/').collect();
    let t: Vec<&str> = topic.split('/').collect();
    go(&f, &t)
}
