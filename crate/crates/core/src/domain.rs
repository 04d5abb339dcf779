//! Core value types shared by the predictor, trust and simulation modules.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("peer id must not be empty")]
    EmptyPeerId,
    #[error("query id must not be empty")]
    EmptyQueryId,
    #[error("unknown semantic type `{0}`")]
    UnknownType(String),
    #[error("semantic type `{child}` references missing parent `{parent}`")]
    DanglingParent { child: String, parent: String },
    #[error("semantic type `{0}` is declared more than once")]
    DuplicateType(String),
    #[error("ontology contains a cycle through `{0}`")]
    Cycle(String),
    #[error("ontology must have exactly one root, found {0}")]
    RootCount(usize),
    #[error("ontology line {line}: {reason}")]
    OntologySyntax { line: usize, reason: String },
    #[error("record holds more than one value for context type `{0}`")]
    DuplicateContextType(String),
    #[error("importance weight must be finite and >= 0, got {0}")]
    NegativeWeight(f64),
    #[error("filter rule for `{0}` ignores no context types")]
    EmptyFilter(String),
    #[error("interpreting rule for `{ctype}` has min > max")]
    InvertedRule { ctype: String },
    #[error("rating value {0} is not one of 0.6, 0.8, 1.0")]
    InvalidRating(f64),
    #[error("rating level `{0}` is not recognised")]
    UnknownRatingLabel(String),
    #[error("service `{0}` appears twice in one description")]
    DuplicateService(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Identity of a participant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PeerId(String);

impl PeerId {
    pub fn new(id: impl Into<String>) -> Result<Self, DomainError> {
        let id = id.into();
        if id.is_empty() {
            return Err(DomainError::EmptyPeerId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for PeerId {
    type Error = DomainError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<PeerId> for String {
    fn from(value: PeerId) -> Self {
        value.0
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Label of an ontology concept. Subsumption between labels is resolved
/// through an [`Ontology`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SemanticType(String);

impl SemanticType {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SemanticType {
    fn from(value: &str) -> Self {
        Self::new(value)
    }
}

/// A rooted tree of semantic types.
#[derive(Debug, Clone, Default)]
pub struct Ontology {
    parents: BTreeMap<SemanticType, Option<SemanticType>>,
}

impl Ontology {
    /// Builds an ontology from `(concept, parent)` pairs, rejecting dangling
    /// parents, duplicates, cycles and forests.
    pub fn from_concepts<I, S>(concepts: I) -> Result<Self, DomainError>
    where
        I: IntoIterator<Item = (S, Option<S>)>,
        S: Into<String>,
    {
        let mut parents = BTreeMap::new();
        for (child, parent) in concepts {
            let child = SemanticType::new(child);
            let parent = parent.map(SemanticType::new);
            if parents.insert(child.clone(), parent).is_some() {
                return Err(DomainError::DuplicateType(child.0));
            }
        }
        let ontology = Self { parents };
        ontology.validate()?;
        Ok(ontology)
    }

    /// Parses the `child<TAB>parent` text format. The root has an empty
    /// parent field; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, DomainError> {
        let mut concepts = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let child = fields.next().unwrap_or("").trim();
            let parent = fields.next().unwrap_or("").trim();
            if fields.next().is_some() {
                return Err(DomainError::OntologySyntax {
                    line: idx + 1,
                    reason: "expected at most two tab-separated fields".into(),
                });
            }
            if child.is_empty() {
                return Err(DomainError::OntologySyntax {
                    line: idx + 1,
                    reason: "empty concept name".into(),
                });
            }
            let parent = (!parent.is_empty()).then(|| parent.to_string());
            concepts.push((child.to_string(), parent));
        }
        Self::from_concepts(concepts)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DomainError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| DomainError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<(), DomainError> {
        let roots = self.parents.values().filter(|p| p.is_none()).count();
        for (child, parent) in &self.parents {
            if let Some(parent) = parent {
                if !self.parents.contains_key(parent) {
                    return Err(DomainError::DanglingParent {
                        child: child.0.clone(),
                        parent: parent.0.clone(),
                    });
                }
            }
        }
        for start in self.parents.keys() {
            let mut steps = 0usize;
            let mut cursor = self.parents[start].as_ref();
            while let Some(p) = cursor {
                steps += 1;
                if p == start || steps > self.parents.len() {
                    return Err(DomainError::Cycle(start.0.clone()));
                }
                cursor = self.parents[p].as_ref();
            }
        }
        if roots != 1 {
            return Err(DomainError::RootCount(roots));
        }
        Ok(())
    }

    pub fn contains(&self, ty: &SemanticType) -> bool {
        self.parents.contains_key(ty)
    }

    pub fn parent(&self, ty: &SemanticType) -> Option<&SemanticType> {
        self.parents.get(ty).and_then(Option::as_ref)
    }

    pub fn types(&self) -> impl Iterator<Item = &SemanticType> {
        self.parents.keys()
    }

    /// True iff `offered` is `required` or one of its descendants.
    pub fn type_matches(&self, required: &SemanticType, offered: &SemanticType) -> Result<bool, DomainError> {
        for ty in [required, offered] {
            if !self.contains(ty) {
                return Err(DomainError::UnknownType(ty.0.clone()));
            }
        }
        let mut cursor = Some(offered);
        while let Some(ty) = cursor {
            if ty == required {
                return Ok(true);
            }
            cursor = self.parent(ty);
        }
        Ok(false)
    }

    /// Serialises back to the tab-separated format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (child, parent) in &self.parents {
            out.push_str(&child.0);
            out.push('\t');
            if let Some(p) = parent {
                out.push_str(&p.0);
            }
            out.push('\n');
        }
        out
    }
}

/// A provider's advertised services and the sizes of its metadata documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceDescription {
    pub provider: PeerId,
    pub services: Vec<Service>,
    pub sdm_bytes: u64,
    pub owl_bytes: u64,
    pub cached_sdm_available: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Service {
    pub sname: String,
    pub stype: SemanticType,
}

pub const DEFAULT_SDM_BYTES: u64 = 6 * 1024;
pub const DEFAULT_OWL_BYTES: u64 = 12 * 1024;

impl ServiceDescription {
    pub fn new(provider: PeerId, services: Vec<Service>) -> Result<Self, DomainError> {
        let mut seen = BTreeSet::new();
        for s in &services {
            if !seen.insert(s.sname.as_str()) {
                return Err(DomainError::DuplicateService(s.sname.clone()));
            }
        }
        Ok(Self {
            provider,
            services,
            sdm_bytes: DEFAULT_SDM_BYTES,
            owl_bytes: DEFAULT_OWL_BYTES,
            cached_sdm_available: false,
        })
    }

    /// Whether any advertised service satisfies `required`.
    pub fn offers(&self, required: &SemanticType, ontology: &Ontology) -> Result<bool, DomainError> {
        for s in &self.services {
            if ontology.type_matches(required, &s.stype)? {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// An interpreted context value, e.g. `location = MeetingRoom`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextValue {
    pub ctype: String,
    pub value: String,
}

impl ContextValue {
    pub fn new(ctype: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            ctype: ctype.into(),
            value: value.into(),
        }
    }
}

impl fmt::Display for ContextValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.ctype, self.value)
    }
}

/// Raw sensor reading fed to the interpreter.
#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Text(String),
    Number(f64),
}

impl From<&str> for RawValue {
    fn from(value: &str) -> Self {
        RawValue::Text(value.to_string())
    }
}

impl From<f64> for RawValue {
    fn from(value: f64) -> Self {
        RawValue::Number(value)
    }
}

/// Inclusive input range of an interpreting rule; the variant fixes the
/// ordering used to test containment.
#[derive(Debug, Clone, PartialEq)]
pub enum RuleRange {
    Lexicographic { min: String, max: String },
    Numeric { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpretingRule {
    pub ctype: String,
    pub range: RuleRange,
    pub output: String,
}

impl InterpretingRule {
    pub fn lexicographic(
        ctype: impl Into<String>,
        min: impl Into<String>,
        max: impl Into<String>,
        output: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let (ctype, min, max) = (ctype.into(), min.into(), max.into());
        if min > max {
            return Err(DomainError::InvertedRule { ctype });
        }
        Ok(Self {
            ctype,
            range: RuleRange::Lexicographic { min, max },
            output: output.into(),
        })
    }

    pub fn numeric(
        ctype: impl Into<String>,
        min: f64,
        max: f64,
        output: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let ctype = ctype.into();
        if min.is_nan() || max.is_nan() || min > max {
            return Err(DomainError::InvertedRule { ctype });
        }
        Ok(Self {
            ctype,
            range: RuleRange::Numeric { min, max },
            output: output.into(),
        })
    }

    fn contains(&self, raw: &RawValue) -> bool {
        match (&self.range, raw) {
            (RuleRange::Lexicographic { min, max }, RawValue::Text(v)) => {
                min.as_str() <= v.as_str() && v.as_str() <= max.as_str()
            }
            (RuleRange::Lexicographic { min, max }, RawValue::Number(n)) => {
                let v = n.to_string();
                *min <= v && v <= *max
            }
            (RuleRange::Numeric { min, max }, RawValue::Number(n)) => *min <= *n && *n <= *max,
            (RuleRange::Numeric { min, max }, RawValue::Text(v)) => v
                .trim()
                .parse::<f64>()
                .map(|n| *min <= n && n <= *max)
                .unwrap_or(false),
        }
    }
}

/// Maps a raw reading onto an interpreted context using the first matching rule.
pub fn interpret_context(ctype: &str, raw: &RawValue, rules: &[InterpretingRule]) -> Option<ContextValue> {
    rules
        .iter()
        .find(|r| r.ctype == ctype && r.contains(raw))
        .map(|r| ContextValue::new(ctype, r.output.clone()))
}

/// A user query. Identity is the query id alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Query {
    pub qid: String,
    pub stype: SemanticType,
    #[serde(default)]
    pub parameters: Vec<String>,
}

impl Query {
    pub fn new(qid: impl Into<String>, stype: SemanticType) -> Result<Self, DomainError> {
        let qid = qid.into();
        if qid.is_empty() {
            return Err(DomainError::EmptyQueryId);
        }
        Ok(Self {
            qid,
            stype,
            parameters: Vec::new(),
        })
    }

    /// Query whose semantic type is named after its id.
    pub fn labelled(qid: impl Into<String>) -> Result<Self, DomainError> {
        let qid = qid.into();
        let stype = SemanticType::new(qid.clone());
        Self::new(qid, stype)
    }
}

impl PartialEq for Query {
    fn eq(&self, other: &Self) -> bool {
        self.qid == other.qid
    }
}

impl Eq for Query {}

impl Hash for Query {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.qid.hash(state);
    }
}

impl PartialOrd for Query {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Query {
    fn cmp(&self, other: &Self) -> Ordering {
        self.qid.cmp(&other.qid)
    }
}

/// One historical query with the contexts observed when it was issued.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: Query,
    pub contexts: BTreeSet<ContextValue>,
}

impl QueryRecord {
    pub fn new(query: Query, contexts: impl IntoIterator<Item = ContextValue>) -> Result<Self, DomainError> {
        let contexts: BTreeSet<ContextValue> = contexts.into_iter().collect();
        check_one_per_type(&contexts)?;
        Ok(Self { query, contexts })
    }
}

pub(crate) fn check_one_per_type(contexts: &BTreeSet<ContextValue>) -> Result<(), DomainError> {
    let mut types = BTreeSet::new();
    for c in contexts {
        if !types.insert(c.ctype.as_str()) {
            return Err(DomainError::DuplicateContextType(c.ctype.clone()));
        }
    }
    Ok(())
}

/// Importance weight of a context type, optionally scoped to one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRule {
    pub ctype: String,
    pub qid: Option<String>,
    pub weight: f64,
}

impl ImportanceRule {
    pub fn new(ctype: impl Into<String>, qid: Option<String>, weight: f64) -> Result<Self, DomainError> {
        if !weight.is_finite() || weight < 0.0 {
            return Err(DomainError::NegativeWeight(weight));
        }
        Ok(Self {
            ctype: ctype.into(),
            qid,
            weight,
        })
    }
}

/// Context types to ignore when scoring one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterRule {
    pub qid: String,
    pub ignored_ctypes: BTreeSet<String>,
}

impl FilterRule {
    pub fn new<I, S>(qid: impl Into<String>, ignored: I) -> Result<Self, DomainError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let qid = qid.into();
        let ignored_ctypes: BTreeSet<String> = ignored.into_iter().map(Into::into).collect();
        if ignored_ctypes.is_empty() {
            return Err(DomainError::EmptyFilter(qid));
        }
        Ok(Self { qid, ignored_ctypes })
    }
}

/// Three-level trust rating. Serialised as its score; either the score or
/// the label is accepted on input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RatingRepr", into = "f64")]
pub enum RatingLevel {
    Apprentice,
    Journeyer,
    Master,
}

impl RatingLevel {
    pub const ALL: [RatingLevel; 3] = [Self::Apprentice, Self::Journeyer, Self::Master];

    pub fn value(self) -> f64 {
        match self {
            Self::Apprentice => 0.6,
            Self::Journeyer => 0.8,
            Self::Master => 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Apprentice => "apprentice",
            Self::Journeyer => "journeyer",
            Self::Master => "master",
        }
    }

    pub fn from_value(v: f64) -> Result<Self, DomainError> {
        Self::ALL
            .into_iter()
            .find(|l| (l.value() - v).abs() < 1e-9)
            .ok_or(DomainError::InvalidRating(v))
    }

    pub fn from_label(label: &str) -> Result<Self, DomainError> {
        match label.to_ascii_lowercase().as_str() {
            "apprentice" => Ok(Self::Apprentice),
            "journeyer" => Ok(Self::Journeyer),
            "master" => Ok(Self::Master),
            other => other
                .parse::<f64>()
                .map_err(|_| DomainError::UnknownRatingLabel(label.to_string()))
                .and_then(Self::from_value),
        }
    }

    /// Level closest to `score`; exact midpoints resolve upward.
    pub fn nearest(score: f64) -> Self {
        let mut best = Self::Apprentice;
        let mut best_dist = f64::INFINITY;
        for level in Self::ALL {
            let d = (level.value() - score).abs();
            if d <= best_dist + 1e-12 {
                best = level;
                best_dist = d.min(best_dist);
            }
        }
        best
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RatingRepr {
    Score(f64),
    Label(String),
}

impl TryFrom<RatingRepr> for RatingLevel {
    type Error = DomainError;
    fn try_from(r: RatingRepr) -> Result<Self, Self::Error> {
        match r {
            RatingRepr::Score(v) => Self::from_value(v),
            RatingRepr::Label(l) => Self::from_label(&l),
        }
    }
}

impl TryFrom<f64> for RatingLevel {
    type Error = DomainError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::from_value(value)
    }
}

impl From<RatingLevel> for f64 {
    fn from(value: RatingLevel) -> Self {
        value.value()
    }
}

impl fmt::Display for RatingLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    /// Parent index per node; node 0 is the root.
    fn tree() -> impl Strategy<Value = Vec<usize>> {
        (1usize..12).prop_flat_map(|n| {
            (0..n)
                .map(|i| if i == 0 { Just(0).boxed() } else { (0..i).boxed() })
                .collect::<Vec<_>>()
        })
    }

    fn build(parents: &[usize]) -> Ontology {
        Ontology::from_concepts(
            parents
                .iter()
                .enumerate()
                .map(|(i, &p)| (format!("T{i}"), (i > 0).then(|| format!("T{p}")))),
        )
        .unwrap()
    }

    fn ancestor_or_self(parents: &[usize], a: usize, mut b: usize) -> bool {
        loop {
            if a == b {
                return true;
            }
            if b == 0 {
                return false;
            }
            b = parents[b];
        }
    }

    proptest! {
        #[test]
        fn matching_is_subsumption(parents in tree()) {
            let o = build(&parents);
            let n = parents.len();
            let t = |i: usize| SemanticType::new(format!("T{i}"));
            for a in 0..n {
                prop_assert!(o.type_matches(&t(a), &t(a)).unwrap());
                for b in 0..n {
                    let ab = o.type_matches(&t(a), &t(b)).unwrap();
                    prop_assert_eq!(ab, ancestor_or_self(&parents, a, b));
                    if ab && o.type_matches(&t(b), &t(a)).unwrap() {
                        prop_assert_eq!(a, b);
                    }
                    for c in 0..n {
                        if ab && o.type_matches(&t(b), &t(c)).unwrap() {
                            prop_assert!(o.type_matches(&t(a), &t(c)).unwrap());
                        }
                    }
                }
            }
        }

        #[test]
        fn text_roundtrip(parents in tree()) {
            let o = build(&parents);
            let back = Ontology::parse(&o.to_text()).unwrap();
            prop_assert_eq!(back.to_text(), o.to_text());
            for ty in o.types() {
                prop_assert_eq!(back.parent(ty), o.parent(ty));
            }
        }

        #[test]
        fn cycles_are_rejected(parents in tree(), k in 0usize..12) {
            // Re-parent the root under one of its descendants.
            let n = parents.len();
            prop_assume!(n > 1);
            let child = 1 + k % (n - 1);
            let mut pairs: Vec<(String, Option<String>)> = parents
                .iter()
                .enumerate()
                .map(|(i, &p)| (format!("T{i}"), (i > 0).then(|| format!("T{p}"))))
                .collect();
            pairs[0].1 = Some(format!("T{child}"));
            prop_assert!(Ontology::from_concepts(pairs).is_err());
        }

        #[test]
        fn interpretation_is_deterministic(v in 0.0f64..100.0, cuts in prop::collection::vec(0.0f64..100.0, 1..5)) {
            let rules: Vec<InterpretingRule> = cuts
                .iter()
                .enumerate()
                .map(|(i, c)| InterpretingRule::numeric("temp", *c * 0.5, *c, format!("band{i}")).unwrap())
                .collect();
            let raw = RawValue::Number(v);
            let first = interpret_context("temp", &raw, &rules);
            prop_assert_eq!(&first, &interpret_context("temp", &raw, &rules));
            let expect = cuts
                .iter()
                .position(|c| *c * 0.5 <= v && v <= *c)
                .map(|i| ContextValue::new("temp", format!("band{i}")));
            prop_assert_eq!(first, expect);
        }
    }
}
