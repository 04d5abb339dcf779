//! Dataset ingestion and generation: trust graphs, synthetic query records
//! and location/action sequence data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    ContextValue, DomainError, PeerId, Query, QueryRecord, RatingLevel, SemanticType, Service,
};
use crate::trust::ReputationData;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("no valid edges ({malformed} malformed lines)")]
    NoEdges { malformed: usize },
    #[error("ratee `{0}` has no service assignment")]
    Unassigned(PeerId),
    #[error("generator spec: {0}")]
    BadSpec(String),
    #[error("record count must be at least 1")]
    NoRecords,
    #[error("sequence data is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("sequence data has no rows")]
    EmptySequence,
    #[error("sequence row {row}: {reason}")]
    SequenceRow { row: usize, reason: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_error(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustEdge {
    pub rater: PeerId,
    pub ratee: PeerId,
    pub level: RatingLevel,
}

/// Directed rated edges, at most one per `(rater, ratee)`, in first-seen
/// order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustGraph {
    edges: Vec<TrustEdge>,
    index: BTreeMap<(PeerId, PeerId), usize>,
}

impl TrustGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an edge. An existing `(rater, ratee)` edge keeps its position
    /// but takes the new level; returns true in that case.
    pub fn insert(&mut self, rater: PeerId, ratee: PeerId, level: RatingLevel) -> bool {
        match self.index.get(&(rater.clone(), ratee.clone())) {
            Some(&i) => {
                self.edges[i].level = level;
                true
            }
            None => {
                self.index
                    .insert((rater.clone(), ratee.clone()), self.edges.len());
                self.edges.push(TrustEdge { rater, ratee, level });
                false
            }
        }
    }

    pub fn edges(&self) -> &[TrustEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn level(&self, rater: &PeerId, ratee: &PeerId) -> Option<RatingLevel> {
        self.index
            .get(&(rater.clone(), ratee.clone()))
            .map(|&i| self.edges[i].level)
    }

    pub fn out_degree(&self) -> BTreeMap<&PeerId, usize> {
        let mut deg = BTreeMap::new();
        for e in &self.edges {
            *deg.entry(&e.rater).or_insert(0) += 1;
        }
        deg
    }

    /// Every id appearing as rater or ratee.
    pub fn nodes(&self) -> BTreeSet<&PeerId> {
        self.edges.iter().flat_map(|e| [&e.rater, &e.ratee]).collect()
    }

    /// One `rater ratee level` line per edge.
    pub fn to_text(&self) -> String {
        self.edges
            .iter()
            .map(|e| format!("{} {} {}\n", e.rater, e.ratee, e.level.label()))
            .collect()
    }
}

impl FromIterator<TrustEdge> for TrustGraph {
    fn from_iter<T: IntoIterator<Item = TrustEdge>>(iter: T) -> Self {
        let mut g = TrustGraph::new();
        for e in iter {
            g.insert(e.rater, e.ratee, e.level);
        }
        g
    }
}

/// A parsed graph plus what was skipped on the way.
#[derive(Debug, Clone)]
pub struct GraphLoad {
    pub graph: TrustGraph,
    pub malformed: usize,
    pub duplicates: usize,
}

fn parse_edge(line: &str) -> Option<(PeerId, PeerId, RatingLevel)> {
    if let Some((lhs, rhs)) = line.split_once("->") {
        // "alice" -> "bob" [level="Master"];
        let unquote = |s: &str| s.trim().trim_matches('"').to_string();
        let rater = unquote(lhs);
        let (ratee, attrs) = rhs.split_once('[')?;
        let ratee = unquote(ratee);
        let level = attrs.split_once("level")?.1;
        let level = level
            .trim_start_matches([' ', '='])
            .split(['"', ']', ';', ' '])
            .find(|s| !s.is_empty())?;
        return Some((
            PeerId::new(rater).ok()?,
            PeerId::new(ratee).ok()?,
            RatingLevel::from_label(level).ok()?,
        ));
    }
    let mut parts = line.split_whitespace();
    let (rater, ratee, level) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    Some((
        PeerId::new(rater).ok()?,
        PeerId::new(ratee).ok()?,
        RatingLevel::from_label(level).ok()?,
    ))
}

/// Parses `rater ratee level` lines or trustlet-style
/// `"a" -> "b" [level="Master"];` lines. Blank lines, `#` comments and
/// `digraph`/brace lines are skipped; anything else that fails is counted as
/// malformed. Duplicate pairs keep the last level.
pub fn parse_trust_graph(text: &str) -> Result<GraphLoad, DataError> {
    let mut graph = TrustGraph::new();
    let (mut malformed, mut duplicates) = (0, 0);
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty()
            || line.starts_with("digraph")
            || line.starts_with("//")
            || line == "{"
            || line == "}"
        {
            continue;
        }
        match parse_edge(line) {
            Some((a, b, l)) if a != b => {
                if graph.insert(a, b, l) {
                    duplicates += 1;
                }
            }
            _ => malformed += 1,
        }
    }
    if graph.is_empty() {
        return Err(DataError::NoEdges { malformed });
    }
    Ok(GraphLoad {
        graph,
        malformed,
        duplicates,
    })
}

pub fn load_trust_graph(path: &Path) -> Result<GraphLoad, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_trust_graph(&text)
}

/// Keeps only edges whose rater has at least `min` out-edges. One pass: the
/// surviving raters are not re-checked after removal.
pub fn filter_min_ratings(g: &TrustGraph, min: usize) -> TrustGraph {
    let deg = g.out_degree();
    g.edges
        .iter()
        .filter(|e| deg.get(&e.rater).copied().unwrap_or(0) >= min)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FriendSplit {
    pub friends: BTreeSet<PeerId>,
    pub non_friends: BTreeSet<PeerId>,
}

/// Two users are friends when each rated the other Master. Everyone else a
/// user rated is a non-friend. Every node gets an entry.
pub fn classify_friends(g: &TrustGraph) -> BTreeMap<PeerId, FriendSplit> {
    let mut out: BTreeMap<PeerId, FriendSplit> = g
        .nodes()
        .into_iter()
        .map(|id| (id.clone(), FriendSplit::default()))
        .collect();
    for e in &g.edges {
        let mutual =
            e.level == RatingLevel::Master && g.level(&e.ratee, &e.rater) == Some(RatingLevel::Master);
        let split = out.get_mut(&e.rater).expect("rater is a node");
        if mutual {
            split.friends.insert(e.ratee.clone());
        } else {
            split.non_friends.insert(e.ratee.clone());
        }
    }
    out
}

/// Which service each rated user stands for.
#[derive(Debug, Clone)]
pub enum ServiceAssignment {
    /// Every user offers the same single service.
    Uniform(Service),
    Explicit(BTreeMap<PeerId, Service>),
}

impl ServiceAssignment {
    pub fn uniform(sname: &str, stype: &str) -> Self {
        Self::Uniform(Service {
            sname: sname.to_string(),
            stype: SemanticType::new(stype),
        })
    }

    pub fn service_of(&self, id: &PeerId) -> Option<&Service> {
        match self {
            Self::Uniform(s) => Some(s),
            Self::Explicit(m) => m.get(id),
        }
    }
}

/// Builds one RD per node. Each out-edge becomes a rating plus an
/// interaction record stamped with the edge index. A user's recommended
/// references for a type are the friends who gave at least one Master rating
/// to a provider of that type.
pub fn trust_graph_to_rds(
    g: &TrustGraph,
    assignment: &ServiceAssignment,
) -> Result<Vec<ReputationData>, DataError> {
    let mut rds: BTreeMap<PeerId, ReputationData> = g
        .nodes()
        .into_iter()
        .map(|id| (id.clone(), ReputationData::new(id.clone())))
        .collect();
    let mut master_types: BTreeMap<&PeerId, BTreeSet<&SemanticType>> = BTreeMap::new();
    for (i, e) in g.edges.iter().enumerate() {
        let svc = assignment
            .service_of(&e.ratee)
            .ok_or_else(|| DataError::Unassigned(e.ratee.clone()))?;
        rds.get_mut(&e.rater)
            .expect("rater is a node")
            .record_rating(&e.ratee, &svc.sname, &svc.stype, e.level, i as u64);
        if e.level == RatingLevel::Master {
            master_types.entry(&e.rater).or_default().insert(&svc.stype);
        }
    }
    for (id, split) in classify_friends(g) {
        let rd = rds.get_mut(&id).expect("node has an RD");
        for f in &split.friends {
            for stype in master_types.get(f).into_iter().flatten() {
                rd.recommend(stype, f.clone());
            }
        }
    }
    Ok(rds.into_values().collect())
}

/// Value choice for one context dimension of a generator row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DimSpec {
    Fixed(String),
    /// Uniform over the listed values.
    OneOf(Vec<String>),
}

impl DimSpec {
    /// `L1` or `L1..L5` (same prefix, numeric suffix range).
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let text = text.trim();
        let Some((lo, hi)) = text.split_once("..") else {
            if text.is_empty() {
                return Err(DataError::BadSpec("empty value".to_string()));
            }
            return Ok(Self::Fixed(text.to_string()));
        };
        let split = |s: &str| {
            let at = s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len());
            let (p, n) = s.split_at(at);
            n.parse::<u32>().ok().map(|n| (p.to_string(), n))
        };
        match (split(lo), split(hi)) {
            (Some((p1, a)), Some((p2, b))) if p1 == p2 && a <= b => {
                Ok(Self::OneOf((a..=b).map(|i| format!("{p1}{i}")).collect()))
            }
            _ => Err(DataError::BadSpec(format!("bad range `{text}`"))),
        }
    }
}

impl fmt::Display for DimSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DimSpec::Fixed(v) => f.write_str(v),
            DimSpec::OneOf(vs) => f.write_str(&vs.join("|")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorRow {
    pub qid: String,
    pub dims: BTreeMap<String, DimSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub dimensions: Vec<String>,
    pub rows: Vec<GeneratorRow>,
}

impl GeneratorSpec {
    pub const TABLE1_DIMENSIONS: [&'static str; 5] = ["CL", "CT", "CA", "CW", "CP"];

    /// Five record types over location, time, activity, weather and people.
    pub fn table1() -> Self {
        Self::parse(
            "Q1 CL=L1 CT=T1 CA=A1..A5 CW=W1..W5 CP=P1..P5\n\
             Q2 CL=L1..L5 CT=T2 CA=A2 CW=W1..W5 CP=P1..P5\n\
             Q3 CL=L1..L5 CT=T1..T5 CA=A3 CW=W3 CP=P1..P5\n\
             Q4 CL=L1..L5 CT=T1..T5 CA=A1..A5 CW=W4 CP=P4\n\
             Q5 CL=L5 CT=T1..T5 CA=A1..A5 CW=W1..W5 CP=P5\n",
        )
        .expect("built-in spec is valid")
    }

    /// One row per line: `qid DIM=value DIM=lo..hi ...`. Dimensions are taken
    /// from the first row and every row must name exactly those.
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut rows = Vec::new();
        let mut dimensions: Option<Vec<String>> = None;
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let qid = parts.next().expect("non-empty line").to_string();
            let mut dims = BTreeMap::new();
            let mut order = Vec::new();
            for p in parts {
                let (k, v) = p
                    .split_once('=')
                    .ok_or_else(|| DataError::BadSpec(format!("expected DIM=value, got `{p}`")))?;
                if dims.insert(k.to_string(), DimSpec::parse(v)?).is_some() {
                    return Err(DataError::BadSpec(format!("{qid} names {k} twice")));
                }
                order.push(k.to_string());
            }
            match &dimensions {
                None => dimensions = Some(order),
                Some(d) => {
                    let want: BTreeSet<_> = d.iter().collect();
                    let got: BTreeSet<_> = order.iter().collect();
                    if want != got {
                        return Err(DataError::BadSpec(format!(
                            "{qid} must name exactly {}",
                            d.join(", ")
                        )));
                    }
                }
            }
            rows.push(GeneratorRow { qid, dims });
        }
        let spec = Self {
            dimensions: dimensions.unwrap_or_default(),
            rows,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.rows.is_empty() || self.dimensions.is_empty() {
            return Err(DataError::BadSpec("no rows or no dimensions".to_string()));
        }
        for row in &self.rows {
            Query::labelled(row.qid.clone())?;
            for d in &self.dimensions {
                match row.dims.get(d) {
                    None => return Err(DataError::BadSpec(format!("{} lacks {d}", row.qid))),
                    Some(DimSpec::OneOf(v)) if v.is_empty() => {
                        return Err(DataError::BadSpec(format!("{} has an empty {d}", row.qid)))
                    }
                    Some(_) => {}
                }
            }
            if row.dims.len() != self.dimensions.len() {
                return Err(DataError::BadSpec(format!("{} names extra dimensions", row.qid)));
            }
        }
        Ok(())
    }
}

/// Draws `n` records: a row uniformly, then each dimension's value.
pub fn generate_records(spec: &GeneratorSpec, n: usize, seed: u64) -> Result<Vec<QueryRecord>, DataError> {
    spec.validate()?;
    if n == 0 {
        return Err(DataError::NoRecords);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let row = &spec.rows[rng.random_range(0..spec.rows.len())];
        let mut contexts = BTreeSet::new();
        for d in &spec.dimensions {
            let value = match &row.dims[d] {
                DimSpec::Fixed(v) => v.clone(),
                DimSpec::OneOf(vs) => vs[rng.random_range(0..vs.len())].clone(),
            };
            contexts.insert(ContextValue::new(d.clone(), value));
        }
        out.push(QueryRecord::new(Query::labelled(row.qid.clone())?, contexts)?);
    }
    Ok(out)
}

/// Reads `location,action,object` CSV (columns found by header name) into
/// records whose query is the object.
pub fn read_sequence_csv<R: Read>(reader: R) -> Result<Vec<QueryRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or(DataError::MissingColumn(name))
    };
    let (loc, act, obj) = (col("location")?, col("action")?, col("object")?);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let get = |c: usize| row.get(c).filter(|v| !v.is_empty());
        let (Some(l), Some(a), Some(o)) = (get(loc), get(act), get(obj)) else {
            return Err(DataError::SequenceRow {
                row: i + 1,
                reason: "empty field".to_string(),
            });
        };
        let contexts = BTreeSet::from([ContextValue::new("location", l), ContextValue::new("action", a)]);
        out.push(QueryRecord::new(Query::labelled(o)?, contexts)?);
    }
    if out.is_empty() {
        return Err(DataError::EmptySequence);
    }
    Ok(out)
}

pub fn load_sequence_dataset(path: &Path) -> Result<Vec<QueryRecord>, DataError> {
    read_sequence_csv(std::fs::File::open(path).map_err(|e| io_error(path, e))?)
}

/// Household activities: each action belongs to exactly one object, and
/// some actions happen in several rooms.
const SEQUENCE_PAIRS: [(&str, &str, &str); 12] = [
    ("livingroom", "sitting", "HiFi"),
    ("livingroom", "watching", "TV"),
    ("livingroom", "reading", "Lamp"),
    ("bedroom", "reading", "Lamp"),
    ("bedroom", "sleeping", "AirConditioner"),
    ("kitchen", "cooking", "Oven"),
    ("kitchen", "washing", "Dishwasher"),
    ("kitchen", "brewing", "CoffeeMaker"),
    ("bathroom", "showering", "WaterHeater"),
    ("bathroom", "brushing", "Mirror"),
    ("study", "typing", "Computer"),
    ("study", "printing", "Printer"),
];

/// `n` deterministic sequence rows: the twelve activity pairs repeated in a
/// seeded order per cycle, so every pair occurs within each run of twelve.
pub fn synthetic_sequence(n: usize, seed: u64) -> Vec<(String, String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut cycle: Vec<usize> = (0..SEQUENCE_PAIRS.len()).collect();
        cycle.shuffle(&mut rng);
        for i in cycle.into_iter().take(n - out.len()) {
            let (l, a, o) = SEQUENCE_PAIRS[i];
            out.push((l.to_string(), a.to_string(), o.to_string()));
        }
    }
    out
}

pub fn sequence_to_csv(rows: &[(String, String, String)]) -> String {
    let mut s = String::from("location,action,object\n");
    for (l, a, o) in rows {
        s.push_str(&format!("{l},{a},{o}\n"));
    }
    s
}

/// Parameters of a synthetic trust graph with a planted ground truth.
///
/// Every user has a hidden quality level. Experts rate it faithfully and
/// rate many users; novices rate fewer users and report the true level only
/// with probability `novice_accuracy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub communities: usize,
    pub community_size: usize,
    pub experts_per_community: usize,
    pub expert_out_degree: usize,
    pub novice_out_degree: usize,
    pub expert_accuracy: f64,
    pub novice_accuracy: f64,
    /// Weights of the Apprentice, Journeyer and Master quality levels among
    /// novices.
    pub quality_weights: [f64; 3],
    pub expert_quality_weights: [f64; 3],
    /// Share of a user's ratings aimed outside its community.
    pub cross_community: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            communities: 20,
            community_size: 25,
            experts_per_community: 10,
            expert_out_degree: 20,
            novice_out_degree: 10,
            expert_accuracy: 0.95,
            novice_accuracy: 0.5,
            quality_weights: [0.6, 0.4, 0.0],
            expert_quality_weights: [0.0, 0.0, 1.0],
            cross_community: 0.1,
            seed: 7,
        }
    }
}

pub fn planted_user(i: usize) -> PeerId {
    PeerId::new(format!("u{i:05}")).expect("non-empty id")
}

/// Generates a planted graph. Each user rates `out_degree` distinct others.
pub fn planted_trust_graph(spec: &PlantedSpec) -> Result<TrustGraph, DataError> {
    let n = spec.communities * spec.community_size;
    if spec.community_size < 2
        || spec.experts_per_community > spec.community_size
        || spec.expert_out_degree >= n
        || spec.novice_out_degree >= n
    {
        return Err(DataError::BadSpec(
            "planted graph dimensions are inconsistent".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let is_expert = |i: usize| i % spec.community_size < spec.experts_per_community;
    let quality: Vec<RatingLevel> = (0..n)
        .map(|i| {
            let weights = if is_expert(i) {
                spec.expert_quality_weights
            } else {
                spec.quality_weights
            };
            let mut x = rng.random::<f64>() * weights.iter().sum::<f64>();
            for (level, w) in RatingLevel::ALL.into_iter().zip(weights) {
                if x < w {
                    return level;
                }
                x -= w;
            }
            RatingLevel::Master
        })
        .collect();
    let mut g = TrustGraph::new();
    for u in 0..n {
        let (degree, accuracy) = if is_expert(u) {
            (spec.expert_out_degree, spec.expert_accuracy)
        } else {
            (spec.novice_out_degree, spec.novice_accuracy)
        };
        let community = u / spec.community_size;
        let base = community * spec.community_size;
        let mut inside: Vec<usize> = (base..base + spec.community_size).filter(|&v| v != u).collect();
        inside.shuffle(&mut rng);
        let mut targets = BTreeSet::new();
        let mut k = 0;
        while targets.len() < degree {
            let v = if rng.random::<f64>() < spec.cross_community || k >= inside.len() {
                rng.random_range(0..n)
            } else {
                k += 1;
                inside[k - 1]
            };
            if v != u {
                targets.insert(v);
            }
        }
        for v in targets {
            let level = if rng.random::<f64>() < accuracy {
                quality[v]
            } else {
                let others: Vec<RatingLevel> = RatingLevel::ALL
                    .into_iter()
                    .filter(|l| *l != quality[v])
                    .collect();
                others[rng.random_range(0..others.len())]
            };
            g.insert(planted_user(u), planted_user(v), level);
        }
    }
    Ok(g)
}
