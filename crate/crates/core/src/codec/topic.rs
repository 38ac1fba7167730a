use std::fmt;

use super::CodecError;

/// One level of a subscription filter.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FilterLevel {
    Literal(String),
    /// `+`: exactly one level.
    SingleLevel,
    /// `#`: the remaining levels, including none.
    MultiLevel,
}

/// A validated subscription filter.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TopicFilter {
    raw: String,
    levels: Vec<FilterLevel>,
}

impl TopicFilter {
    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn levels(&self) -> &[FilterLevel] {
        &self.levels
    }

    pub fn matches(&self, topic: &str) -> bool {
        topic_matches(self, topic)
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl std::str::FromStr for TopicFilter {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        validate_filter(s)
    }
}

/// Parses a subscription filter, enforcing the wildcard placement rules.
pub fn validate_filter(s: &str) -> Result<TopicFilter, CodecError> {
    let invalid = || CodecError::InvalidFilter(s.to_owned());
    if s.is_empty() || s.len() > u16::MAX as usize || s.contains('\0') {
        return Err(invalid());
    }
    let parts: Vec<&str> = s.split('/').collect();
    let last = parts.len() - 1;
    let mut levels = Vec::with_capacity(parts.len());
    for (i, part) in parts.into_iter().enumerate() {
        let level = match part {
            "#" if i == last => FilterLevel::MultiLevel,
            "#" => return Err(invalid()),
            "+" => FilterLevel::SingleLevel,
            lit if lit.contains(['+', '#']) => return Err(invalid()),
            lit => FilterLevel::Literal(lit.to_owned()),
        };
        levels.push(level);
    }
    Ok(TopicFilter {
        raw: s.to_owned(),
        levels,
    })
}

/// Checks a topic name used in PUBLISH or a will message.
pub fn validate_topic_name(s: &str) -> Result<(), CodecError> {
    if s.is_empty() || s.len() > u16::MAX as usize || s.contains(['+', '#', '\0']) {
        return Err(CodecError::InvalidTopicName(s.to_owned()));
    }
    Ok(())
}

/// Segment-wise match of `topic` against `filter`.
pub fn topic_matches(filter: &TopicFilter, topic: &str) -> bool {
    let mut names = topic.split('/');
    for level in &filter.levels {
        match level {
            FilterLevel::MultiLevel => return true,
            FilterLevel::SingleLevel => {
                if names.next().is_none() {
                    return false;
                }
            }
            FilterLevel::Literal(lit) => match names.next() {
                Some(name) if name == lit => {}
                _ => return false,
            },
        }
    }
    names.next().is_none()
}
