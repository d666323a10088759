use std::collections::HashMap;
use std::hash::Hash;

use super::{Segment, TopicFilter, TopicName};
use crate::codec::QoS;

#[derive(Debug)]
struct Node<S> {
    children: HashMap<String, Node<S>>,
    plus_child: Option<Box<Node<S>>>,
    /// Subscribers of `<path to this node>/#`.
    hash_subscribers: HashMap<S, QoS>,
    /// Subscribers whose filter ends exactly at this node.
    subscribers: HashMap<S, QoS>,
}

impl<S> Default for Node<S> {
    fn default() -> Self {
        Node {
            children: HashMap::new(),
            plus_child: None,
            hash_subscribers: HashMap::new(),
            subscribers: HashMap::new(),
        }
    }
}

impl<S> Node<S> {
    fn is_empty(&self) -> bool {
        self.children.is_empty()
            && self.plus_child.is_none()
            && self.hash_subscribers.is_empty()
            && self.subscribers.is_empty()
    }
}

/// Trie of subscriptions keyed by filter level.
///
/// [`route`](Self::route) returns one entry per matching `(subscriber,
/// filter)` pair; a subscriber matched through two overlapping filters
/// appears twice. Callers deduplicate per subscriber.
#[derive(Debug)]
pub struct SubscriptionTree<S> {
    root: Node<S>,
    len: usize,
}

impl<S> Default for SubscriptionTree<S> {
    fn default() -> Self {
        SubscriptionTree {
            root: Node::default(),
            len: 0,
        }
    }
}

impl<S: Clone + Eq + Hash> SubscriptionTree<S> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of `(subscriber, filter)` pairs stored.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Adds or replaces a subscription; returns the previously granted QoS.
    pub fn subscribe(&mut self, filter: &TopicFilter, subscriber: S, qos: QoS) -> Option<QoS> {
        let mut node = &mut self.root;
        for seg in filter.segments() {
            match seg {
                Segment::Literal(l) => node = node.children.entry(l.clone()).or_default(),
                Segment::SingleLevel => node = node.plus_child.get_or_insert_with(Default::default),
                Segment::MultiLevel => {
                    let prev = node.hash_subscribers.insert(subscriber, qos);
                    self.len += usize::from(prev.is_none());
                    return prev;
                }
            }
        }
        let prev = node.subscribers.insert(subscriber, qos);
        self.len += usize::from(prev.is_none());
        prev
    }

    /// Removes a subscription, pruning emptied branches. Returns whether it
    /// existed.
    pub fn unsubscribe(&mut self, filter: &TopicFilter, subscriber: &S) -> bool {
        let removed = Self::remove_at(&mut self.root, filter.segments(), subscriber);
        self.len -= usize::from(removed);
        removed
    }

    fn remove_at(node: &mut Node<S>, segs: &[Segment], subscriber: &S) -> bool {
        let Some((first, rest)) = segs.split_first() else {
            return node.subscribers.remove(subscriber).is_some();
        };
        match first {
            Segment::MultiLevel => node.hash_subscribers.remove(subscriber).is_some(),
            Segment::SingleLevel => {
                let Some(child) = node.plus_child.as_mut() else {
                    return false;
                };
                let removed = Self::remove_at(child, rest, subscriber);
                if child.is_empty() {
                    node.plus_child = None;
                }
                removed
            }
            Segment::Literal(l) => {
                let Some(child) = node.children.get_mut(l) else {
                    return false;
                };
                let removed = Self::remove_at(child, rest, subscriber);
                if child.is_empty() {
                    node.children.remove(l);
                }
                removed
            }
        }
    }

    /// All `(subscriber, granted qos)` entries whose filter matches `topic`.
    pub fn route(&self, topic: &TopicName) -> Vec<(S, QoS)> {
        let levels: Vec<&str> = topic.levels().collect();
        let mut out = Vec::new();
        Self::collect(&self.root, &levels, 0, topic.is_system(), &mut out);
        out
    }

    fn collect(
        node: &Node<S>,
        levels: &[&str],
        depth: usize,
        system: bool,
        out: &mut Vec<(S, QoS)>,
    ) {
        let wildcards_allowed = !(depth == 0 && system);
        if wildcards_allowed {
            out.extend(node.hash_subscribers.iter().map(|(s, q)| (s.clone(), *q)));
        }
        let Some(level) = levels.get(depth) else {
            out.extend(node.subscribers.iter().map(|(s, q)| (s.clone(), *q)));
            return;
        };
        if let Some(child) = node.children.get(*level) {
            Self::collect(child, levels, depth + 1, system, out);
        }
        if wildcards_allowed {
            if let Some(plus) = &node.plus_child {
                Self::collect(plus, levels, depth + 1, system, out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(s: &str) -> TopicFilter {
        TopicFilter::parse(s).unwrap()
    }

    fn t(s: &str) -> TopicName {
        TopicName::parse(s).unwrap()
    }

    fn ids(mut v: Vec<(&'static str, QoS)>) -> Vec<&'static str> {
        v.sort();
        v.into_iter().map(|(s, _)| s).collect()
    }

    #[test]
    fn wildcard_subscriber_routed() {
        let mut tree = SubscriptionTree::new();
        tree.subscribe(&f("s1t/#"), "c1", QoS::AtLeastOnce);
        assert_eq!(tree.route(&t("s1t/x/y")), vec![("c1", QoS::AtLeastOnce)]);
    }

    #[test]
    fn empty_tree_routes_nothing() {
        let tree: SubscriptionTree<u32> = SubscriptionTree::new();
        assert!(tree.route(&t("anything")).is_empty());
    }

    #[test]
    fn overlapping_filters_appear_once_each() {
        let mut tree = SubscriptionTree::new();
        tree.subscribe(&f("a/#"), "c1", QoS::AtMostOnce);
        tree.subscribe(&f("a/+"), "c1", QoS::AtLeastOnce);
        tree.subscribe(&f("a/b"), "c2", QoS::AtMostOnce);
        assert_eq!(ids(tree.route(&t("a/b"))), ["c1", "c1", "c2"]);
        assert_eq!(tree.len(), 3);
    }

    #[test]
    fn resubscribe_replaces_qos() {
        let mut tree = SubscriptionTree::new();
        assert_eq!(tree.subscribe(&f("a"), 1, QoS::AtMostOnce), None);
        assert_eq!(
            tree.subscribe(&f("a"), 1, QoS::AtLeastOnce),
            Some(QoS::AtMostOnce)
        );
        assert_eq!(tree.len(), 1);
        assert_eq!(tree.route(&t("a")), vec![(1, QoS::AtLeastOnce)]);
    }

    #[test]
    fn unsubscribe_restores_and_prunes() {
        let mut tree = SubscriptionTree::new();
        tree.subscribe(&f("a/+/c"), "x", QoS::AtMostOnce);
        let before = tree.route(&t("a/b/c"));
        tree.subscribe(&f("a/+/#"), "y", QoS::AtMostOnce);
        assert!(tree.unsubscribe(&f("a/+/#"), &"y"));
        assert!(!tree.unsubscribe(&f("a/+/#"), &"y"));
        assert_eq!(tree.route(&t("a/b/c")), before);
        assert!(tree.unsubscribe(&f("a/+/c"), &"x"));
        assert!(tree.root.is_empty());
        assert!(tree.is_empty());
    }

    #[test]
    fn hash_matches_parent_level() {
        let mut tree = SubscriptionTree::new();
        tree.subscribe(&f("a/#"), 1, QoS::AtMostOnce);
        tree.subscribe(&f("#"), 2, QoS::AtMostOnce);
        let mut r: Vec<_> = tree.route(&t("a")).into_iter().map(|(s, _)| s).collect();
        r.sort();
        assert_eq!(r, [1, 2]);
        assert!(tree.route(&t("$SYS/a")).is_empty());
    }
}
