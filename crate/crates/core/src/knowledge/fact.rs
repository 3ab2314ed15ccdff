use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Object position value: an entity reference, a number, or literal text.
///
/// JSON form: entities are bare strings, numbers are numbers, text is
/// `{"text": "..."}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Term {
    Number(f64),
    Entity(String),
    Text { text: String },
}

impl Term {
    pub fn entity(s: impl Into<String>) -> Self {
        Term::Entity(s.into())
    }

    pub fn text(s: impl Into<String>) -> Self {
        Term::Text { text: s.into() }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Term::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_entity(&self) -> Option<&str> {
        match self {
            Term::Entity(e) => Some(e),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Term::Number(_) => 0,
            Term::Entity(_) => 1,
            Term::Text { .. } => 2,
        }
    }
}

impl From<f64> for Term {
    fn from(v: f64) -> Self {
        Term::Number(v)
    }
}

impl From<i64> for Term {
    fn from(v: i64) -> Self {
        Term::Number(v as f64)
    }
}

impl From<&str> for Term {
    fn from(v: &str) -> Self {
        Term::Entity(v.to_string())
    }
}

impl Ord for Term {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Term::Number(a), Term::Number(b)) => a.total_cmp(b),
            (Term::Entity(a), Term::Entity(b)) => a.cmp(b),
            (Term::Text { text: a }, Term::Text { text: b }) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Term {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Term {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Term {}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Number(n) => write!(f, "{n}"),
            Term::Entity(e) => write!(f, "{e}"),
            Term::Text { text } => write!(f, "{text:?}"),
        }
    }
}

/// Predicate used for class membership: `Fact { s, TYPE, Entity(class) }`.
pub const TYPE_PREDICATE: &str = "rdf:type";

/// A subject/predicate/object triple. Ordered by (predicate, subject, object)
/// so lookups by predicate, or predicate and subject, are range scans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub subject: String,
    pub predicate: String,
    pub object: Term,
}

impl Fact {
    pub fn new(subject: impl Into<String>, predicate: impl Into<String>, object: impl Into<Term>) -> Self {
        Self {
            subject: subject.into(),
            predicate: predicate.into(),
            object: object.into(),
        }
    }

    pub fn class(subject: impl Into<String>, class: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            predicate: TYPE_PREDICATE.into(),
            object: Term::Entity(class.into()),
        }
    }
}

impl Ord for Fact {
    fn cmp(&self, other: &Self) -> Ordering {
        self.predicate
            .cmp(&other.predicate)
            .then_with(|| self.subject.cmp(&other.subject))
            .then_with(|| self.object.cmp(&other.object))
    }
}

impl PartialOrd for Fact {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.predicate == TYPE_PREDICATE {
            write!(f, "{}({})", self.object, self.subject)
        } else {
            write!(f, "{}({}, {})", self.predicate, self.subject, self.object)
        }
    }
}
