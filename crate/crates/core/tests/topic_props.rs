mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use mqtt_testbed::codec::QoS;
use mqtt_testbed::topic::{matches, SubscriptionTree, TopicFilter, TopicName};

fn routed(tree: &SubscriptionTree<usize>, topic: &TopicName) -> BTreeSet<usize> {
    tree.route(topic).into_iter().map(|(s, _)| s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn matcher_agrees_with_reference(f in common::filter_string(), t in common::topic_string()) {
        let filter = TopicFilter::parse(f.as_str()).unwrap();
        let topic = TopicName::parse(t.as_str()).unwrap();
        prop_assert_eq!(matches(&filter, &topic), common::naive_matches(&f, &t), "{} vs {}", f, t);
    }

    #[test]
    fn trie_equals_linear_scan(
        filters in proptest::collection::vec(common::filter_string(), 1..40),
        topics in proptest::collection::vec(common::topic_string(), 1..40),
    ) {
        let mut tree = SubscriptionTree::new();
        for (i, f) in filters.iter().enumerate() {
            tree.subscribe(&TopicFilter::parse(f.as_str()).unwrap(), i, QoS::AtMostOnce);
        }
        for t in &topics {
            let expected: BTreeSet<usize> =
                filters.iter().enumerate().filter(|(_, f)| common::naive_matches(f, t)).map(|(i, _)| i).collect();
            prop_assert_eq!(routed(&tree, &TopicName::parse(t.as_str()).unwrap()), expected);
        }
    }

    #[test]
    fn unsubscribe_removes_exactly_one(
        filters in proptest::collection::vec(common::filter_string(), 1..20),
        topics in proptest::collection::vec(common::topic_string(), 1..20),
        drop in any::<prop::sample::Index>(),
    ) {
        let mut tree = SubscriptionTree::new();
        for (i, f) in filters.iter().enumerate() {
            tree.subscribe(&TopicFilter::parse(f.as_str()).unwrap(), i, QoS::AtLeastOnce);
        }
        let gone = drop.index(filters.len());
        prop_assert!(tree.unsubscribe(&TopicFilter::parse(filters[gone].as_str()).unwrap(), &gone));
        for t in &topics {
            let expected: BTreeSet<usize> = filters
                .iter()
                .enumerate()
                .filter(|&(i, f)| i != gone && common::naive_matches(f, t))
                .map(|(i, _)| i)
                .collect();
            prop_assert_eq!(routed(&tree, &TopicName::parse(t.as_str()).unwrap()), expected);
        }
    }
}

#[test]
fn reference_matcher_sanity() {
    assert!(common::naive_matches("sport/#", "sport"));
    assert!(common::naive_matches("+/+", "/finance"));
    assert!(!common::naive_matches("sport/+", "sport"));
    assert!(!common::naive_matches("#", "$SYS/x"));
    assert!(common::naive_matches("$SYS/#", "$SYS/x"));
}
