use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::fact::{Term, TYPE_PREDICATE};
use super::store::Schema;
use super::KnowledgeError;

/// A rule argument: a `?variable` or a constant term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arg {
    Var(String),
    Const(Term),
}

impl Arg {
    pub fn var(name: &str) -> Self {
        Arg::Var(name.trim_start_matches('?').to_string())
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Arg::Var(v) => Some(v),
            Arg::Const(_) => None,
        }
    }
}

impl Serialize for Arg {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Arg::Var(v) => s.serialize_str(&format!("?{v}")),
            Arg::Const(t) => t.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Arg {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let t = Term::deserialize(d)?;
        Ok(match t {
            Term::Entity(s) if s.starts_with('?') => {
                if s.len() == 1 {
                    return Err(D::Error::custom("empty variable name"));
                }
                Arg::var(&s)
            }
            other => Arg::Const(other),
        })
    }
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Var(v) => write!(f, "?{v}"),
            Arg::Const(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BuiltinOp {
    #[serde(rename = "lessThanOrEqual")]
    LessThanOrEqual,
    #[serde(rename = "greaterThanOrEqual")]
    GreaterThanOrEqual,
    #[serde(rename = "lessThan")]
    LessThan,
    #[serde(rename = "greaterThan")]
    GreaterThan,
    #[serde(rename = "equal")]
    Equal,
    #[serde(rename = "notEqual")]
    NotEqual,
}

impl BuiltinOp {
    pub fn holds(self, a: &Term, b: &Term) -> bool {
        use BuiltinOp::*;
        match self {
            Equal => a == b,
            NotEqual => a != b,
            _ => match (a.as_number(), b.as_number()) {
                (Some(x), Some(y)) => match self {
                    LessThanOrEqual => x <= y,
                    GreaterThanOrEqual => x >= y,
                    LessThan => x < y,
                    GreaterThan => x > y,
                    Equal | NotEqual => unreachable!(),
                },
                _ => false,
            },
        }
    }
}

/// One antecedent or consequent atom. JSON:
/// `{"class": "Failure", "args": ["?f"]}`,
/// `{"property": "humidityValue", "args": ["?h", "?v"]}`,
/// `{"builtin": "lessThanOrEqual", "args": ["?v", 25]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Atom {
    Class { class: String, args: [Arg; 1] },
    Property { property: String, args: [Arg; 2] },
    Builtin { builtin: BuiltinOp, args: [Arg; 2] },
}

impl Atom {
    pub fn class(class: &str, a: Arg) -> Self {
        Atom::Class {
            class: class.into(),
            args: [a],
        }
    }

    pub fn property(p: &str, s: Arg, o: Arg) -> Self {
        Atom::Property {
            property: p.into(),
            args: [s, o],
        }
    }

    pub fn builtin(op: BuiltinOp, a: Arg, b: Arg) -> Self {
        Atom::Builtin { builtin: op, args: [a, b] }
    }

    pub fn is_builtin(&self) -> bool {
        matches!(self, Atom::Builtin { .. })
    }

    /// (predicate, subject, object) pattern for a positive atom.
    pub(crate) fn pattern(&self) -> Option<(&str, &Arg, PatternObject<'_>)> {
        match self {
            Atom::Class { class, args } => Some((TYPE_PREDICATE, &args[0], PatternObject::Class(class))),
            Atom::Property { property, args } => Some((property, &args[0], PatternObject::Arg(&args[1]))),
            Atom::Builtin { .. } => None,
        }
    }

    pub fn args(&self) -> &[Arg] {
        match self {
            Atom::Class { args, .. } => args,
            Atom::Property { args, .. } => args,
            Atom::Builtin { args, .. } => args,
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.args().iter().filter_map(Arg::as_var)
    }
}

pub(crate) enum PatternObject<'a> {
    Class(&'a str),
    Arg(&'a Arg),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub antecedent: Vec<Atom>,
    pub consequent: Vec<Atom>,
    /// When set, every new fact derived by this rule raises an alert with
    /// this code on the consequent's subject.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alert_code: Option<i64>,
}

impl Rule {
    /// Checks that the rule is range-restricted and uses known vocabulary.
    pub fn validate(&self, schema: &Schema) -> Result<(), KnowledgeError> {
        let bad = |msg: String| KnowledgeError::InvalidRule {
            rule: self.name.clone(),
            reason: msg,
        };
        if self.name.is_empty() {
            return Err(bad("rule name is empty".into()));
        }
        if !self.antecedent.iter().any(|a| !a.is_builtin()) {
            return Err(bad("antecedent needs at least one class or property atom".into()));
        }
        if self.consequent.is_empty() {
            return Err(bad("consequent is empty".into()));
        }
        let bound: BTreeSet<&str> = self
            .antecedent
            .iter()
            .filter(|a| !a.is_builtin())
            .flat_map(|a| a.vars())
            .collect();
        for atom in &self.antecedent {
            if atom.is_builtin() {
                if let Some(v) = atom.vars().find(|v| !bound.contains(v)) {
                    return Err(bad(format!("builtin variable ?{v} is not bound by a class or property atom")));
                }
            }
        }
        for atom in self.antecedent.iter().chain(&self.consequent) {
            match atom {
                Atom::Class { class, .. } if !schema.classes.contains(class) => {
                    return Err(KnowledgeError::UnknownClass(class.clone()));
                }
                Atom::Property { property, .. } if !schema.properties.contains(property) => {
                    return Err(KnowledgeError::UnknownPredicate(property.clone()));
                }
                _ => {}
            }
        }
        for atom in &self.consequent {
            if atom.is_builtin() {
                return Err(bad("builtins are not allowed in the consequent".into()));
            }
            if let Some(v) = atom.vars().find(|v| !bound.contains(v)) {
                return Err(bad(format!("consequent variable ?{v} does not occur in the antecedent")));
            }
            if let Some(Arg::Const(t)) = atom.args().first() {
                if t.as_entity().is_none() {
                    return Err(bad("consequent subject must be an entity".into()));
                }
            }
        }
        Ok(())
    }
}

/// A rule file: the vocabulary it needs plus its rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub format_version: u32,
    #[serde(default)]
    pub schema: Schema,
    pub rules: Vec<Rule>,
}

pub const RULES_FORMAT_VERSION: u32 = 1;

impl RuleSet {
    pub fn new(schema: Schema, rules: Vec<Rule>) -> Result<Self, KnowledgeError> {
        let set = Self {
            format_version: RULES_FORMAT_VERSION,
            schema,
            rules,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), KnowledgeError> {
        if self.format_version != RULES_FORMAT_VERSION {
            return Err(KnowledgeError::InvalidRule {
                rule: String::new(),
                reason: format!("unsupported format_version {}", self.format_version),
            });
        }
        let mut names = BTreeSet::new();
        for r in &self.rules {
            if !names.insert(r.name.as_str()) {
                return Err(KnowledgeError::InvalidRule {
                    rule: r.name.clone(),
                    reason: "duplicate rule name".into(),
                });
            }
            r.validate(&self.schema)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, KnowledgeError> {
        let set: RuleSet = serde_json::from_str(text).map_err(|e| KnowledgeError::InvalidRule {
            rule: String::new(),
            reason: e.to_string(),
        })?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        let text = std::fs::read_to_string(path).map_err(|e| KnowledgeError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Concatenates rule sets, merging their vocabularies.
    pub fn merge(sets: impl IntoIterator<Item = RuleSet>) -> Result<Self, KnowledgeError> {
        let mut schema = Schema::default();
        let mut rules = Vec::new();
        for s in sets {
            schema = schema.union(&s.schema);
            rules.extend(s.rules);
        }
        Self::new(schema, rules)
    }

    pub fn rule(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }
}

fn v(name: &str) -> Arg {
    Arg::var(name)
}

fn c(t: impl Into<Term>) -> Arg {
    Arg::Const(t.into())
}

/// The two furnace failure rules: dry heat and repeated type-4 failures.
pub fn smart_maintenance_rules() -> RuleSet {
    use BuiltinOp::*;
    let r01 = Rule {
        name: "smartmaintenance-01".into(),
        description: "low humidity with high temperature".into(),
        antecedent: vec![
            Atom::class("Failure", v("f")),
            Atom::property("hasHumidity", v("f"), v("h")),
            Atom::property("humidityValue", v("h"), v("humid")),
            Atom::builtin(LessThanOrEqual, v("humid"), c(25.0)),
            Atom::property("hasTemperature", v("f"), v("t")),
            Atom::property("temperatureValue", v("t"), v("temp")),
            Atom::builtin(GreaterThanOrEqual, v("temp"), c(35.0)),
        ],
        consequent: vec![Atom::property("alertCode", v("f"), c(100.0))],
        alert_code: None,
    };
    let r02 = Rule {
        name: "smartmaintenance-02".into(),
        description: "recurring type 4 failures in heat".into(),
        antecedent: vec![
            Atom::class("Failure", v("f")),
            Atom::property("hasTemperature", v("f"), v("t")),
            Atom::property("temperatureValue", v("t"), v("temp")),
            Atom::builtin(GreaterThanOrEqual, v("temp"), c(30.0)),
            Atom::property("typeOfFailure", v("f"), c(4.0)),
            Atom::property("numberOfOccurrences", v("f"), v("n")),
            Atom::builtin(GreaterThanOrEqual, v("n"), c(4.0)),
        ],
        consequent: vec![Atom::property("alertCode", v("f"), c(200.0))],
        alert_code: None,
    };
    RuleSet::new(Schema::smart_maintenance(), vec![r01, r02]).expect("built-in rules are valid")
}

/// Maintenance rules over labelled sensor readings.
pub fn sensor_equipment_rules() -> RuleSet {
    let reading = |sensor_class: &str, tag: &str, ts: Arg| -> Vec<Atom> {
        let s = v(&format!("sensor{tag}"));
        let r = v(&format!("reading{tag}"));
        let val = v(&format!("value{tag}"));
        vec![
            Atom::property("hasSensor", v("machine"), s.clone()),
            Atom::class(sensor_class, s.clone()),
            Atom::property("generatesReading", s, r.clone()),
            Atom::property("readingAt", r.clone(), ts),
            Atom::property("hasValue", r, val.clone()),
            Atom::class("SensorValue", val.clone()),
            Atom::property("sensorReadingValue", val, c(1.0)),
        ]
    };
    let mut a01 = vec![Atom::class("Machine", v("machine"))];
    a01.extend(reading("S1", "1", v("t")));
    let r01 = Rule {
        name: "sensorequipment-01".into(),
        description: "S1 out of range".into(),
        antecedent: a01,
        consequent: vec![Atom::property("indicatesMaintenance", v("machine"), c(1.0))],
        alert_code: Some(301),
    };
    let mut a02 = vec![Atom::class("Machine", v("machine"))];
    for (class, tag) in [("S5", "5"), ("S6", "6"), ("S7", "7")] {
        a02.extend(reading(class, tag, v("t")));
    }
    let r02 = Rule {
        name: "sensorequipment-02".into(),
        description: "S5, S6 and S7 out of range at the same instant".into(),
        antecedent: a02,
        consequent: vec![Atom::property("indicatesMaintenance", v("machine"), c(1.0))],
        alert_code: Some(302),
    };
    RuleSet::new(Schema::sensor_equipment(), vec![r01, r02]).expect("built-in rules are valid")
}
