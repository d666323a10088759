//! Topic names, topic filters and wildcard routing.

mod tree;

pub use tree::SubscriptionTree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAX_TOPIC_LEN: usize = u16::MAX as usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopicError {
    #[error("topic is empty")]
    Empty,
    #[error("topic exceeds 65535 bytes")]
    TooLong,
    #[error("topic contains NUL")]
    Nul,
    #[error("topic name contains wildcard character")]
    WildcardInName,
    #[error("'#' must be the last level of a filter")]
    HashNotLast,
    #[error("wildcard must occupy an entire level")]
    EmbeddedWildcard,
}

fn check_common(s: &str) -> Result<(), TopicError> {
    if s.is_empty() {
        return Err(TopicError::Empty);
    }
    if s.len() > MAX_TOPIC_LEN {
        return Err(TopicError::TooLong);
    }
    if s.contains('\0') {
        return Err(TopicError::Nul);
    }
    Ok(())
}

/// A concrete topic a message is published to. Never contains wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TopicName(String);

impl TopicName {
    pub fn parse(s: impl Into<String>) -> Result<Self, TopicError> {
        let s = s.into();
        check_common(&s)?;
        if s.contains(['+', '#']) {
            return Err(TopicError::WildcardInName);
        }
        Ok(TopicName(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn levels(&self) -> std::str::Split<'_, char> {
        self.0.split('/')
    }

    pub fn is_system(&self) -> bool {
        self.0.starts_with('$')
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for TopicName {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TopicName::parse(s)
    }
}

impl TryFrom<String> for TopicName {
    type Error = TopicError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        TopicName::parse(s)
    }
}

impl From<TopicName> for String {
    fn from(t: TopicName) -> String {
        t.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Segment {
    Literal(String),
    /// `+`
    SingleLevel,
    /// `#`
    MultiLevel,
}

/// A subscription pattern. `+` matches exactly one level, a trailing `#`
/// matches zero or more remaining levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TopicFilter {
    raw: String,
    segments: Vec<Segment>,
}

impl TopicFilter {
    pub fn parse(s: impl Into<String>) -> Result<Self, TopicError> {
        let raw = s.into();
        check_common(&raw)?;
        let mut segments = Vec::new();
        let mut levels = raw.split('/').peekable();
        while let Some(level) = levels.next() {
            let seg = match level {
                "#" if levels.peek().is_some() => return Err(TopicError::HashNotLast),
                "#" => Segment::MultiLevel,
                "+" => Segment::SingleLevel,
                l if l.contains(['+', '#']) => return Err(TopicError::EmbeddedWildcard),
                l => Segment::Literal(l.to_owned()),
            };
            segments.push(seg);
        }
        Ok(TopicFilter { raw, segments })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn has_wildcards(&self) -> bool {
        self.segments
            .iter()
            .any(|s| !matches!(s, Segment::Literal(_)))
    }

    pub fn matches(&self, topic: &TopicName) -> bool {
        matches(self, topic)
    }
}

impl PartialEq for TopicFilter {
    fn eq(&self, other: &Self) -> bool {
        self.raw == other.raw
    }
}

impl Eq for TopicFilter {}

impl std::hash::Hash for TopicFilter {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.raw.hash(state);
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl FromStr for TopicFilter {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TopicFilter::parse(s)
    }
}

impl TryFrom<String> for TopicFilter {
    type Error = TopicError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        TopicFilter::parse(s)
    }
}

impl From<TopicFilter> for String {
    fn from(f: TopicFilter) -> String {
        f.raw
    }
}

/// Standard MQTT matching. Topics starting with `$` are not matched by a
/// wildcard in the first level.
pub fn matches(filter: &TopicFilter, topic: &TopicName) -> bool {
    let segs = filter.segments();
    if topic.is_system() && !matches!(segs.first(), Some(Segment::Literal(_))) {
        return false;
    }
    let mut levels = topic.levels();
    for seg in segs {
        match seg {
            Segment::MultiLevel => return true,
            Segment::SingleLevel => {
                if levels.next().is_none() {
                    return false;
                }
            }
            Segment::Literal(lit) => match levels.next() {
                Some(level) if level == lit => {}
                _ => return false,
            },
        }
    }
    levels.next().is_none()
}
