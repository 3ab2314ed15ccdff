use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::fact::{Fact, Term, TYPE_PREDICATE};
use super::KnowledgeError;

/// Vocabulary a fact store accepts: class names and property names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub classes: BTreeSet<String>,
    #[serde(default)]
    pub properties: BTreeSet<String>,
}

impl Schema {
    pub fn new<C, P>(classes: C, properties: P) -> Self
    where
        C: IntoIterator,
        C::Item: Into<String>,
        P: IntoIterator,
        P::Item: Into<String>,
    {
        Self {
            classes: classes.into_iter().map(Into::into).collect(),
            properties: properties.into_iter().map(Into::into).collect(),
        }
    }

    /// Failure-centred vocabulary for the furnace maintenance domain.
    pub fn smart_maintenance() -> Self {
        Self::new(
            [
                "Failure",
                "Machine",
                "Humidity",
                "Temperature",
                "Alert",
                "Shift",
            ],
            [
                "hasHumidity",
                "hasTemperature",
                "humidityValue",
                "temperatureValue",
                "typeOfFailure",
                "numberOfOccurrences",
                "criticality",
                "timestamp",
                "occursOn",
                "duringShift",
                "alertCode",
            ],
        )
    }

    /// Sensor/reading vocabulary for the equipment domain.
    pub fn sensor_equipment() -> Self {
        let mut classes: Vec<String> = ["Machine", "Sensor", "SensorReading", "SensorValue", "MaintenanceEvent"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        classes.extend((1..=7).map(|i| format!("S{i}")));
        Self::new(
            classes,
            [
                "hasSensor",
                "generatesReading",
                "hasValue",
                "sensorReadingValue",
                "readingAt",
                "indicatesMaintenance",
                "maintenanceOf",
                "maintenanceAt",
                "causedByError",
            ],
        )
    }

    pub fn union(mut self, other: &Schema) -> Self {
        self.classes.extend(other.classes.iter().cloned());
        self.properties.extend(other.properties.iter().cloned());
        self
    }

    pub fn has_predicate(&self, predicate: &str) -> bool {
        predicate == TYPE_PREDICATE || self.properties.contains(predicate)
    }

    pub fn check(&self, fact: &Fact) -> Result<(), KnowledgeError> {
        if fact.predicate == TYPE_PREDICATE {
            match &fact.object {
                Term::Entity(c) if self.classes.contains(c) => Ok(()),
                other => Err(KnowledgeError::UnknownClass(other.to_string())),
            }
        } else if self.properties.contains(&fact.predicate) {
            match &fact.object {
                Term::Number(n) if !n.is_finite() => Err(KnowledgeError::InvalidFact(format!(
                    "{}: non-finite number",
                    fact.predicate
                ))),
                _ => Ok(()),
            }
        } else {
            Err(KnowledgeError::UnknownPredicate(fact.predicate.clone()))
        }
    }
}

/// Why an inferred fact exists: the rule and the variable bindings that fired it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub rule: String,
    pub bindings: BTreeMap<String, Term>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactMeta {
    pub version: u64,
    pub provenance: Option<Provenance>,
}

/// Immutable view of the store at one version. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub version: u64,
    facts: Arc<BTreeMap<Fact, FactMeta>>,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn contains(&self, fact: &Fact) -> bool {
        self.facts.contains_key(fact)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Fact, &FactMeta)> {
        self.facts.iter()
    }
}

/// Versioned set of facts. Every insert that adds a new fact bumps the version.
#[derive(Debug, Clone)]
pub struct FactStore {
    schema: Schema,
    facts: Arc<BTreeMap<Fact, FactMeta>>,
    /// (predicate, object, subject) for lookups with a bound object.
    by_object: BTreeSet<(String, Term, String)>,
    version: u64,
    pub(crate) inferred_through: u64,
}

fn lower_bound(predicate: &str, subject: &str) -> Fact {
    Fact {
        subject: subject.to_string(),
        predicate: predicate.to_string(),
        object: Term::Number(f64::NEG_INFINITY),
    }
}

impl FactStore {
    pub fn new(schema: Schema) -> Self {
        Self {
            schema,
            facts: Arc::new(BTreeMap::new()),
            by_object: BTreeSet::new(),
            version: 0,
            inferred_through: 0,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn extend_schema(&mut self, other: &Schema) {
        self.schema = std::mem::take(&mut self.schema).union(other);
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            version: self.version,
            facts: Arc::clone(&self.facts),
        }
    }

    /// Adds an asserted fact. Returns false if it was already present.
    pub fn assert_fact(&mut self, fact: Fact) -> Result<bool, KnowledgeError> {
        self.schema.check(&fact)?;
        Ok(self.insert(fact, None))
    }

    pub fn assert_all<I: IntoIterator<Item = Fact>>(&mut self, facts: I) -> Result<usize, KnowledgeError> {
        let mut added = 0;
        for f in facts {
            if self.assert_fact(f)? {
                added += 1;
            }
        }
        Ok(added)
    }

    pub(crate) fn insert(&mut self, fact: Fact, provenance: Option<Provenance>) -> bool {
        if self.facts.contains_key(&fact) {
            return false;
        }
        self.version += 1;
        let meta = FactMeta {
            version: self.version,
            provenance,
        };
        self.by_object
            .insert((fact.predicate.clone(), fact.object.clone(), fact.subject.clone()));
        Arc::make_mut(&mut self.facts).insert(fact, meta);
        true
    }

    pub fn contains(&self, fact: &Fact) -> bool {
        self.facts.contains_key(fact)
    }

    pub fn meta(&self, fact: &Fact) -> Option<&FactMeta> {
        self.facts.get(fact)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Fact, &FactMeta)> {
        self.facts.iter()
    }

    /// All facts with the given predicate, in order.
    pub fn with_predicate<'a>(&'a self, predicate: &str) -> impl Iterator<Item = &'a Fact> + 'a {
        let start = lower_bound(predicate, "");
        let predicate = predicate.to_string();
        self.facts
            .range(start..)
            .map(|(f, _)| f)
            .take_while(move |f| f.predicate == predicate)
    }

    /// All objects of `predicate` for `subject`.
    pub fn objects<'a>(&'a self, subject: &str, predicate: &str) -> impl Iterator<Item = &'a Term> + 'a {
        let start = lower_bound(predicate, subject);
        let (subject, predicate) = (subject.to_string(), predicate.to_string());
        self.facts
            .range(start..)
            .map(|(f, _)| f)
            .take_while(move |f| f.predicate == predicate && f.subject == subject)
            .map(|f| &f.object)
    }

    pub fn object<'a>(&'a self, subject: &str, predicate: &str) -> Option<&'a Term> {
        self.objects(subject, predicate).next()
    }

    pub fn number(&self, subject: &str, predicate: &str) -> Option<f64> {
        self.objects(subject, predicate).find_map(Term::as_number)
    }

    pub fn is_a(&self, subject: &str, class: &str) -> bool {
        self.contains(&Fact::class(subject, class))
    }

    /// Subjects `s` with `(s, predicate, object)` in the store.
    pub fn subjects<'a>(&'a self, predicate: &str, object: &Term) -> impl Iterator<Item = &'a str> + 'a {
        let start = (predicate.to_string(), object.clone(), String::new());
        let (predicate, object) = (predicate.to_string(), object.clone());
        self.by_object
            .range(start..)
            .take_while(move |(p, o, _)| *p == predicate && o.cmp(&object).is_eq())
            .map(|(_, _, s)| s.as_str())
    }

    /// Subjects that are members of `class`.
    pub fn instances<'a>(&'a self, class: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.subjects(TYPE_PREDICATE, &Term::Entity(class.to_string()))
    }

    /// Facts added after `version`, in fact order.
    pub(crate) fn since(&self, version: u64) -> BTreeSet<Fact> {
        self.facts
            .iter()
            .filter(|(_, m)| m.version > version)
            .map(|(f, _)| f.clone())
            .collect()
    }

    /// Writes one JSON triple per line, preceded by a header line.
    pub fn export_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = serde_json::json!({ "format_version": SNAPSHOT_FORMAT_VERSION, "version": self.version });
        writeln!(w, "{header}")?;
        for (fact, meta) in self.facts.iter() {
            let line = SnapshotLine {
                fact: fact.clone(),
                provenance: meta.provenance.clone(),
            };
            serde_json::to_writer(&mut w, &line).map_err(std::io::Error::other)?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads triples written by [`FactStore::export_jsonl`] or hand-written
    /// triple files. Blank lines and lines starting with `#` are skipped.
    pub fn import_jsonl<R: BufRead>(&mut self, r: R) -> Result<usize, KnowledgeError> {
        let mut added = 0;
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| KnowledgeError::Io(e.to_string()))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(trimmed)
                .map_err(|e| KnowledgeError::InvalidFact(format!("line {}: {e}", i + 1)))?;
            if let Some(v) = value.get("format_version") {
                if v.as_u64() != Some(SNAPSHOT_FORMAT_VERSION) {
                    return Err(KnowledgeError::InvalidFact(format!(
                        "unsupported snapshot format_version {v}"
                    )));
                }
                continue;
            }
            let parsed: SnapshotLine = serde_json::from_value(value)
                .map_err(|e| KnowledgeError::InvalidFact(format!("line {}: {e}", i + 1)))?;
            self.schema.check(&parsed.fact)?;
            if self.insert(parsed.fact, parsed.provenance) {
                added += 1;
            }
        }
        Ok(added)
    }
}

pub const SNAPSHOT_FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct SnapshotLine {
    #[serde(flatten)]
    fact: Fact,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}
