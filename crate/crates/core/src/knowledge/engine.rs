use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::fact::{Fact, Term};
use super::rule::{Arg, Atom, PatternObject, Rule, RuleSet};
use super::store::{FactStore, Provenance};
use super::KnowledgeError;

pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;
pub const ALERT_PREDICATE: &str = "alertCode";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Alert {
    pub code: i64,
    pub subject: String,
    pub fired_by: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferredFact {
    pub fact: Fact,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub inferred: Vec<InferredFact>,
    pub alerts: Vec<Alert>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct InferenceOptions {
    pub max_iterations: usize,
    /// Timestamp used for alerts whose subject carries no `timestamp` fact.
    pub now: i64,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            now: 0,
        }
    }
}

type Bindings = BTreeMap<String, Term>;

fn resolve<'a>(arg: &'a Arg, b: &'a Bindings) -> Option<&'a Term> {
    match arg {
        Arg::Const(t) => Some(t),
        Arg::Var(v) => b.get(v),
    }
}

/// Extends `b` so that `arg` equals `value`. False on conflict.
fn unify(arg: &Arg, value: &Term, b: &mut Bindings) -> bool {
    match arg {
        Arg::Const(t) => t == value,
        Arg::Var(v) => match b.get(v) {
            Some(existing) => existing == value,
            None => {
                b.insert(v.clone(), value.clone());
                true
            }
        },
    }
}

fn match_fact(atom: &Atom, fact: &Fact, b: &Bindings) -> Option<Bindings> {
    let (pred, subj, obj) = atom.pattern()?;
    if fact.predicate != pred {
        return None;
    }
    let mut nb = b.clone();
    if !unify(subj, &Term::Entity(fact.subject.clone()), &mut nb) {
        return None;
    }
    let ok = match obj {
        PatternObject::Class(c) => fact.object.as_entity() == Some(c),
        PatternObject::Arg(a) => unify(a, &fact.object, &mut nb),
    };
    ok.then_some(nb)
}

/// Bindings for `atom` against the store, given bindings so far. Facts in
/// `exclude` are skipped.
fn match_store(atom: &Atom, store: &FactStore, b: &Bindings, exclude: Option<&BTreeSet<Fact>>) -> Vec<Bindings> {
    let Some((pred, subj, obj)) = atom.pattern() else {
        return Vec::new();
    };
    let object = match obj {
        PatternObject::Class(c) => Some(Term::Entity(c.to_string())),
        PatternObject::Arg(a) => resolve(a, b).cloned(),
    };
    let admit = |f: &Fact| exclude.map_or(true, |ex| !ex.contains(f));
    let fact = |subject: &str, object: &Term| Fact {
        subject: subject.to_string(),
        predicate: pred.to_string(),
        object: object.clone(),
    };
    match (resolve(subj, b), object) {
        (Some(Term::Entity(s)), Some(o)) => {
            let f = fact(s, &o);
            if store.contains(&f) && admit(&f) {
                match_fact(atom, &f, b).into_iter().collect()
            } else {
                Vec::new()
            }
        }
        (Some(Term::Entity(s)), None) => store
            .objects(s, pred)
            .map(|o| fact(s, o))
            .filter(|f| admit(f))
            .filter_map(|f| match_fact(atom, &f, b))
            .collect(),
        (Some(_), _) => Vec::new(),
        (None, Some(o)) => store
            .subjects(pred, &o)
            .map(|s| fact(s, &o))
            .filter(|f| admit(f))
            .filter_map(|f| match_fact(atom, &f, b))
            .collect(),
        (None, None) => store
            .with_predicate(pred)
            .filter(|f| admit(f))
            .filter_map(|f| match_fact(atom, f, b))
            .collect(),
    }
}

/// Number of store facts `atom` could match under `b`, counting at most `cap`.
fn candidates(atom: &Atom, store: &FactStore, b: &Bindings, cap: usize) -> usize {
    let Some((pred, subj, obj)) = atom.pattern() else { return 0 };
    let object = match obj {
        PatternObject::Class(c) => Some(Term::Entity(c.to_string())),
        PatternObject::Arg(a) => resolve(a, b).cloned(),
    };
    match (resolve(subj, b), object) {
        (Some(Term::Entity(s)), Some(o)) => {
            let f = Fact {
                subject: s.clone(),
                predicate: pred.to_string(),
                object: o,
            };
            usize::from(store.contains(&f))
        }
        (Some(Term::Entity(s)), None) => store.objects(s, pred).take(cap).count(),
        (Some(_), _) => 0,
        (None, Some(o)) => store.subjects(pred, &o).take(cap).count(),
        (None, None) => store.with_predicate(pred).take(cap).count(),
    }
}

/// Atoms with more bound positions are counted first so the cap tightens early.
fn boundness(atom: &Atom, b: &Bindings) -> u8 {
    let Some((_, subj, obj)) = atom.pattern() else { return 0 };
    let o = match obj {
        PatternObject::Class(_) => true,
        PatternObject::Arg(a) => resolve(a, b).is_some(),
    };
    2 * u8::from(resolve(subj, b).is_some()) + u8::from(o)
}

/// False only if a builtin is fully bound and fails.
fn builtins_ok(rule: &Rule, b: &Bindings) -> bool {
    rule.antecedent.iter().all(|a| match a {
        Atom::Builtin { builtin, args } => match (resolve(&args[0], b), resolve(&args[1], b)) {
            (Some(x), Some(y)) => builtin.holds(x, y),
            _ => true,
        },
        _ => true,
    })
}

fn instantiate(atom: &Atom, b: &Bindings) -> Option<Fact> {
    let (pred, subj, obj) = atom.pattern()?;
    let subject = resolve(subj, b)?.as_entity()?.to_string();
    let object = match obj {
        PatternObject::Class(c) => Term::Entity(c.to_string()),
        PatternObject::Arg(a) => resolve(a, b)?.clone(),
    };
    Some(Fact {
        subject,
        predicate: pred.to_string(),
        object,
    })
}

/// Complete antecedent matches in which the atom at `seed` matched a delta
/// fact. Atoms before `seed` only match older facts, so a match using several
/// delta facts is produced once, from its first delta position.
fn rule_matches(rule: &Rule, seed: usize, delta: &BTreeSet<Fact>, store: &FactStore) -> Vec<Bindings> {
    let seed_atom = &rule.antecedent[seed];
    let mut partial: Vec<Bindings> = delta
        .iter()
        .filter_map(|f| match_fact(seed_atom, f, &Bindings::new()))
        .filter(|b| builtins_ok(rule, b))
        .collect();
    // Partial matches at each step bind the same variables, so the first one
    // decides which remaining atom joins next.
    let mut remaining: Vec<(usize, &Atom)> = rule
        .antecedent
        .iter()
        .enumerate()
        .filter(|(i, a)| *i != seed && !a.is_builtin())
        .collect();
    while !remaining.is_empty() && !partial.is_empty() {
        let probe = &partial[0];
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        order.sort_by_key(|&j| std::cmp::Reverse(boundness(remaining[j].1, probe)));
        let mut pick = order[0];
        let mut best = usize::MAX;
        for j in order {
            let n = candidates(remaining[j].1, store, probe, best);
            if n < best {
                best = n;
                pick = j;
            }
        }
        let (i, atom) = remaining.remove(pick);
        let exclude = (i < seed).then_some(delta);
        partial = partial
            .iter()
            .flat_map(|b| match_store(atom, store, b, exclude))
            .filter(|b| builtins_ok(rule, b))
            .collect();
    }
    partial
}

/// Forward-chains `rules` over `store` to a fixpoint.
///
/// Only matches that use at least one fact added since the previous run are
/// considered, so repeated calls are incremental. Derived facts carry the
/// rule name and bindings of their first derivation.
pub fn run_inference(store: &mut FactStore, rules: &RuleSet) -> Result<InferenceResult, KnowledgeError> {
    run_inference_with(store, rules, InferenceOptions::default())
}

pub fn run_inference_with(
    store: &mut FactStore,
    rules: &RuleSet,
    opts: InferenceOptions,
) -> Result<InferenceResult, KnowledgeError> {
    store.extend_schema(&rules.schema);
    let mut delta = store.since(store.inferred_through);
    let mut result = InferenceResult::default();
    let mut rule_alerts: BTreeSet<(i64, String, String)> = BTreeSet::new();

    while !delta.is_empty() {
        if result.iterations >= opts.max_iterations {
            return Err(KnowledgeError::NonTermination(opts.max_iterations));
        }
        result.iterations += 1;
        let mut new: BTreeMap<Fact, Provenance> = BTreeMap::new();
        for rule in &rules.rules {
            for seed in 0..rule.antecedent.len() {
                if rule.antecedent[seed].is_builtin() {
                    continue;
                }
                for b in rule_matches(rule, seed, &delta, store) {
                    for atom in &rule.consequent {
                        let Some(fact) = instantiate(atom, &b) else { continue };
                        if let Some(code) = rule.alert_code {
                            rule_alerts.insert((code, fact.subject.clone(), rule.name.clone()));
                        }
                        if store.contains(&fact) || new.contains_key(&fact) {
                            continue;
                        }
                        new.insert(
                            fact,
                            Provenance {
                                rule: rule.name.clone(),
                                bindings: b.clone(),
                            },
                        );
                    }
                }
            }
        }
        let mut next = BTreeSet::new();
        for (fact, prov) in new {
            store.insert(fact.clone(), Some(prov.clone()));
            result.inferred.push(InferredFact {
                fact: fact.clone(),
                provenance: prov,
            });
            next.insert(fact);
        }
        delta = next;
    }
    store.inferred_through = store.version();

    let mut alerts: BTreeMap<(i64, String), Alert> = BTreeMap::new();
    let stamp = |subject: &str| {
        store
            .number(subject, "timestamp")
            .map(|t| t as i64)
            .unwrap_or(opts.now)
    };
    for inf in &result.inferred {
        if inf.fact.predicate != ALERT_PREDICATE {
            continue;
        }
        if let Some(code) = inf.fact.object.as_number() {
            let key = (code as i64, inf.fact.subject.clone());
            alerts.entry(key).or_insert_with(|| Alert {
                code: code as i64,
                subject: inf.fact.subject.clone(),
                fired_by: inf.provenance.rule.clone(),
                timestamp: stamp(&inf.fact.subject),
            });
        }
    }
    for (code, subject, rule) in rule_alerts {
        let ts = stamp(&subject);
        alerts.entry((code, subject.clone())).or_insert(Alert {
            code,
            subject,
            fired_by: rule,
            timestamp: ts,
        });
    }
    result.alerts = alerts.into_values().collect();
    Ok(result)
}

/// Re-checks that `fact`'s recorded bindings satisfy its rule against `store`.
pub fn provenance_holds(store: &FactStore, rules: &RuleSet, fact: &Fact) -> bool {
    let Some(meta) = store.meta(fact) else { return false };
    let Some(prov) = &meta.provenance else { return true };
    let Some(rule) = rules.rule(&prov.rule) else { return false };
    let b = &prov.bindings;
    let antecedent_ok = rule.antecedent.iter().all(|atom| match atom {
        Atom::Builtin { builtin, args } => match (resolve(&args[0], b), resolve(&args[1], b)) {
            (Some(x), Some(y)) => builtin.holds(x, y),
            _ => false,
        },
        _ => instantiate(atom, b).is_some_and(|f| store.contains(&f)),
    });
    antecedent_ok && rule.consequent.iter().any(|a| instantiate(a, b).as_ref() == Some(fact))
}
