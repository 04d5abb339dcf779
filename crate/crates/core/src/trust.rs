//! Reputation data and recommender selection.
//!
//! A requester estimates a provider's trust score from other participants'
//! [`ReputationData`]. Friend-based selection (HEF, HEFHEF, MSF) needs only
//! one up-to-date rating fetch because friends' RDs are replicated ahead of
//! time; the public scheme has to fetch every proximal RD to rank strangers
//! by credibility and type experience.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{PeerId, RatingLevel, SemanticType};

#[derive(Debug, Error, PartialEq)]
pub enum TrustError {
    #[error("no recommender has rated the provider")]
    NoRecommender,
    #[error("{0} found no recommender; fall through to the next stage")]
    FallThrough(Stage),
    #[error("insufficient overlap: {0} commonly rated services, need at least 2")]
    InsufficientOverlap(usize),
    #[error("undefined correlation: a rating vector has no variance")]
    UndefinedCorrelation,
    #[error("the RD of `{0}` must be excluded from its own credibility set")]
    OwnRdIncluded(PeerId),
    #[error("the provider's own RD must not be among the proximal RDs")]
    ProviderInProximal,
    #[error("`{0}` is not among the candidate recommenders")]
    UnknownCandidate(PeerId),
    #[error("transaction count must be at least 1, got {0}")]
    TooFewTransactions(f64),
    #[error("invalid RD for `{owner}`: {reason}")]
    InvalidRd { owner: String, reason: String },
    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),
    #[error("json: {0}")]
    Json(String),
}

/// One consumed service, as logged by the consumer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub provider: PeerId,
    pub sname: String,
    pub stype: SemanticType,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRate {
    pub sname: String,
    pub stype: SemanticType,
    pub rate: RatingLevel,
}

/// Ratings given to one provider's services.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderRating {
    pub provider: PeerId,
    pub rates: Vec<ServiceRate>,
}

/// Peers whose judgement the owner trusts for one service type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendedReference {
    pub stype: SemanticType,
    pub ids: BTreeSet<PeerId>,
}

/// A participant's rating ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReputationData {
    pub owner: PeerId,
    #[serde(default)]
    pub spr: Vec<ProviderRating>,
    #[serde(default)]
    pub rr: Vec<RecommendedReference>,
    #[serde(default)]
    pub ir: Vec<InteractionRecord>,
}

impl ReputationData {
    pub fn new(owner: PeerId) -> Self {
        Self {
            owner,
            spr: Vec::new(),
            rr: Vec::new(),
            ir: Vec::new(),
        }
    }

    /// Logs an interaction with `provider` and rates the service. A second
    /// rating of the same service replaces the first.
    pub fn record_rating(
        &mut self,
        provider: &PeerId,
        sname: &str,
        stype: &SemanticType,
        rate: RatingLevel,
        timestamp: u64,
    ) {
        self.ir.push(InteractionRecord {
            provider: provider.clone(),
            sname: sname.to_string(),
            stype: stype.clone(),
            timestamp,
        });
        let entry = match self.spr.iter_mut().position(|p| p.provider == *provider) {
            Some(i) => &mut self.spr[i],
            None => {
                self.spr.push(ProviderRating {
                    provider: provider.clone(),
                    rates: Vec::new(),
                });
                self.spr.last_mut().expect("just pushed")
            }
        };
        match entry.rates.iter_mut().find(|r| r.sname == sname) {
            Some(r) => {
                r.rate = rate;
                r.stype = stype.clone();
            }
            None => entry.rates.push(ServiceRate {
                sname: sname.to_string(),
                stype: stype.clone(),
                rate,
            }),
        }
    }

    /// Adds `id` to the recommended references for `stype`.
    pub fn recommend(&mut self, stype: &SemanticType, id: PeerId) {
        match self.rr.iter_mut().find(|r| r.stype == *stype) {
            Some(r) => {
                r.ids.insert(id);
            }
            None => self.rr.push(RecommendedReference {
                stype: stype.clone(),
                ids: BTreeSet::from([id]),
            }),
        }
    }

    pub fn rating(&self, provider: &PeerId, sname: &str) -> Option<RatingLevel> {
        self.spr
            .iter()
            .find(|p| p.provider == *provider)
            .and_then(|p| p.rates.iter().find(|r| r.sname == sname))
            .map(|r| r.rate)
    }

    pub fn has_rated(&self, provider: &PeerId) -> bool {
        self.spr
            .iter()
            .any(|p| p.provider == *provider && !p.rates.is_empty())
    }

    /// Number of rating entries across all providers.
    pub fn rating_records(&self) -> usize {
        self.spr.iter().map(|p| p.rates.len()).sum()
    }

    pub fn recommended(&self, stype: &SemanticType) -> Option<&BTreeSet<PeerId>> {
        self.rr.iter().find(|r| r.stype == *stype).map(|r| &r.ids)
    }

    /// Every rated service keyed by `(provider, sname)`.
    pub fn rated_services(&self) -> BTreeMap<(&PeerId, &str), f64> {
        self.spr
            .iter()
            .flat_map(|p| {
                p.rates
                    .iter()
                    .map(move |r| ((&p.provider, r.sname.as_str()), r.rate.value()))
            })
            .collect()
    }

    /// Copy with every rating of and interaction with `provider` removed.
    pub fn without_provider(&self, provider: &PeerId) -> Self {
        let mut rd = self.clone();
        rd.spr.retain(|p| p.provider != *provider);
        rd.ir.retain(|i| i.provider != *provider);
        rd
    }

    pub fn validate(&self) -> Result<(), TrustError> {
        let invalid = |reason: String| TrustError::InvalidRd {
            owner: self.owner.to_string(),
            reason,
        };
        let mut seen = BTreeSet::new();
        for p in &self.spr {
            for r in &p.rates {
                if !seen.insert((&p.provider, r.sname.as_str())) {
                    return Err(invalid(format!("({}, {}) rated twice", p.provider, r.sname)));
                }
            }
            if !p.rates.is_empty() && !self.ir.iter().any(|i| i.provider == p.provider) {
                return Err(invalid(format!(
                    "provider {} is rated without an interaction record",
                    p.provider
                )));
            }
        }
        let mut types = BTreeSet::new();
        for r in &self.rr {
            if !types.insert(&r.stype) {
                return Err(invalid(format!("two RR entries for {}", r.stype)));
            }
            if r.ids.is_empty() {
                return Err(invalid(format!("empty RR entry for {}", r.stype)));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TrustError> {
        let rd: Self = serde_json::from_str(text).map_err(|e| TrustError::Json(e.to_string()))?;
        rd.validate()?;
        Ok(rd)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("RD serialises")
    }
}

/// Count of interaction records whose service type is `stype`.
pub fn stype_experience(rd: &ReputationData, stype: &SemanticType) -> usize {
    rd.ir.iter().filter(|i| i.stype == *stype).count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PscEntry {
    pub cid: PeerId,
    #[serde(default)]
    pub interactions: Vec<InteractionRecord>,
}

/// Consumers a provider claims to have served.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PscList {
    pub provider: PeerId,
    pub entries: Vec<PscEntry>,
}

impl PscList {
    pub fn new(provider: PeerId, entries: Vec<PscEntry>) -> Result<Self, TrustError> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(&e.cid) {
                return Err(TrustError::InvalidRd {
                    owner: provider.to_string(),
                    reason: format!("consumer {} listed twice in PSC", e.cid),
                });
            }
        }
        Ok(Self { provider, entries })
    }

    pub fn contains(&self, cid: &PeerId) -> bool {
        self.entries.iter().any(|e| e.cid == *cid)
    }

    pub fn cids(&self) -> BTreeSet<&PeerId> {
        self.entries.iter().map(|e| &e.cid).collect()
    }

    /// The PSC file is a bare JSON list of `{cid, interactions}`.
    pub fn from_json(provider: PeerId, text: &str) -> Result<Self, TrustError> {
        let entries: Vec<PscEntry> =
            serde_json::from_str(text).map_err(|e| TrustError::Json(e.to_string()))?;
        Self::new(provider, entries)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("PSC serialises")
    }
}

/// Algorithm stage that produced (or failed to produce) a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Friends,
    FriendsOfFriends,
    Public,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Friends => "friend stage",
            Stage::FriendsOfFriends => "FOAF stage",
            Stage::Public => "public stage",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Af,
    Afoaf,
    Hef,
    Hefhef,
    Msf,
    Naive,
    ExpOnly,
    CreditOnly,
    Proposed,
}

impl Scheme {
    pub const ALL: [Scheme; 9] = [
        Scheme::Af,
        Scheme::Afoaf,
        Scheme::Hef,
        Scheme::Hefhef,
        Scheme::Msf,
        Scheme::Naive,
        Scheme::ExpOnly,
        Scheme::CreditOnly,
        Scheme::Proposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Af => "af",
            Scheme::Afoaf => "afoaf",
            Scheme::Hef => "hef",
            Scheme::Hefhef => "hefhef",
            Scheme::Msf => "msf",
            Scheme::Naive => "naive",
            Scheme::ExpOnly => "exponly",
            Scheme::CreditOnly => "creditonly",
            Scheme::Proposed => "proposed",
        }
    }

    /// Schemes that take one recommender's rating verbatim.
    pub fn single_recommender(self) -> bool {
        !matches!(self, Scheme::Af | Scheme::Afoaf | Scheme::Naive)
    }

    pub fn public(self) -> Option<PublicScheme> {
        match self {
            Scheme::Naive => Some(PublicScheme::Naive),
            Scheme::ExpOnly => Some(PublicScheme::ExpOnly),
            Scheme::CreditOnly => Some(PublicScheme::CreditOnly),
            Scheme::Proposed => Some(PublicScheme::Proposed),
            _ => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = TrustError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == key)
            .ok_or_else(|| TrustError::UnknownScheme(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PublicScheme {
    Proposed,
    Naive,
    ExpOnly,
    CreditOnly,
}

impl From<PublicScheme> for Scheme {
    fn from(value: PublicScheme) -> Self {
        match value {
            PublicScheme::Proposed => Scheme::Proposed,
            PublicScheme::Naive => Scheme::Naive,
            PublicScheme::ExpOnly => Scheme::ExpOnly,
            PublicScheme::CreditOnly => Scheme::CreditOnly,
        }
    }
}

/// A trust estimate with the recommenders it came from and the number of
/// RD fetches it needed at runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustVerdict {
    pub score: f64,
    pub recommenders: Vec<PeerId>,
    pub transactions: u64,
    pub scheme: Scheme,
}

impl TrustVerdict {
    /// Score snapped onto the three rating levels.
    pub fn level(&self) -> RatingLevel {
        RatingLevel::nearest(self.score)
    }
}

/// Lookup of (replicated or fetched) RDs and friend lists.
pub trait RdDirectory {
    fn rd(&self, id: &PeerId) -> Option<&ReputationData>;
    fn friends(&self, id: &PeerId) -> Option<&BTreeSet<PeerId>>;
}

/// In-memory directory of RDs and friendships.
#[derive(Debug, Clone, Default)]
pub struct Community {
    pub rds: BTreeMap<PeerId, ReputationData>,
    pub friends: BTreeMap<PeerId, BTreeSet<PeerId>>,
}

impl Community {
    pub fn insert(&mut self, rd: ReputationData) {
        self.rds.insert(rd.owner.clone(), rd);
    }

    /// Records a mutual friendship.
    pub fn befriend(&mut self, a: &PeerId, b: &PeerId) {
        self.friends.entry(a.clone()).or_default().insert(b.clone());
        self.friends.entry(b.clone()).or_default().insert(a.clone());
    }
}

impl RdDirectory for Community {
    fn rd(&self, id: &PeerId) -> Option<&ReputationData> {
        self.rds.get(id)
    }

    fn friends(&self, id: &PeerId) -> Option<&BTreeSet<PeerId>> {
        self.friends.get(id)
    }
}

static NO_FRIENDS: BTreeSet<PeerId> = BTreeSet::new();

fn friends_of<'d, D: RdDirectory + ?Sized>(dir: &'d D, id: &PeerId) -> &'d BTreeSet<PeerId> {
    dir.friends(id).unwrap_or(&NO_FRIENDS)
}

/// Pearson correlation between two rating ledgers over the services both
/// have rated. Each side is centred on its mean over all of its own ratings.
pub fn rating_similarity(a: &ReputationData, b: &ReputationData) -> Result<f64, TrustError> {
    let ra = a.rated_services();
    let rb = b.rated_services();
    let common: Vec<_> = ra.keys().filter(|k| rb.contains_key(*k)).collect();
    if common.len() < 2 {
        return Err(TrustError::InsufficientOverlap(common.len()));
    }
    let mean = |m: &BTreeMap<(&PeerId, &str), f64>| m.values().sum::<f64>() / m.len() as f64;
    let (mean_a, mean_b) = (mean(&ra), mean(&rb));
    let (mut num, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for k in common {
        let da = ra[k] - mean_a;
        let db = rb[k] - mean_b;
        num += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    let denom = (var_a * var_b).sqrt();
    if denom <= 1e-15 {
        return Err(TrustError::UndefinedCorrelation);
    }
    Ok((num / denom).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PscStatus {
    Usable,
    Suspicious,
    NewParticipant,
}

/// What the requester knows when judging a provider's PSC list.
#[derive(Debug, Clone, Copy)]
pub struct PscCheck<'a> {
    pub friends: &'a BTreeSet<PeerId>,
    pub creditable_strangers: &'a BTreeSet<PeerId>,
    pub known_rds: &'a [&'a ReputationData],
}

/// Decides whether a provider's PSC list can be used.
///
/// A missing list is suspicious unless the provider has no history in any
/// known RD. A present list is usable only if it names at least one friend
/// or creditable stranger.
pub fn check_psc_plausibility(provider: &PeerId, psc: Option<&PscList>, ctx: &PscCheck<'_>) -> PscStatus {
    match psc {
        None => {
            if ctx.known_rds.iter().any(|rd| rd.has_rated(provider)) {
                PscStatus::Suspicious
            } else {
                PscStatus::NewParticipant
            }
        }
        Some(list) => {
            let vouched = list
                .entries
                .iter()
                .any(|e| ctx.friends.contains(&e.cid) || ctx.creditable_strangers.contains(&e.cid));
            if vouched {
                PscStatus::Usable
            } else {
                PscStatus::Suspicious
            }
        }
    }
}

/// Owners among `proximal` whose credibility for `stype` reaches the given
/// quantile of the population (0.75 selects the top quartile). Owners with
/// zero credibility never qualify.
pub fn creditable_strangers(
    proximal: &[&ReputationData],
    stype: &SemanticType,
    quantile: f64,
) -> BTreeSet<PeerId> {
    let scores = candidate_scores(proximal, stype);
    if scores.is_empty() {
        return BTreeSet::new();
    }
    let mut creds: Vec<usize> = scores.iter().map(|s| s.credibility).collect();
    creds.sort_unstable();
    let q = quantile.clamp(0.0, 1.0);
    let pos = ((q * creds.len() as f64).ceil() as usize).clamp(1, creds.len()) - 1;
    let threshold = creds[pos].max(1);
    scores
        .into_iter()
        .filter(|s| s.credibility >= threshold)
        .map(|s| s.id)
        .collect()
}

/// True when the rater claims to have rated `provider` but the provider's
/// PSC does not list the rater.
pub fn dishonesty_flag(provider_psc: &PscList, rater_rd: &ReputationData, provider: &PeerId) -> bool {
    rater_rd.has_rated(provider) && !provider_psc.contains(&rater_rd.owner)
}

fn mean_rating(ratings: &[RatingLevel]) -> f64 {
    ratings.iter().map(|r| r.value()).sum::<f64>() / ratings.len() as f64
}

/// Average of every friend's rating. Every friend's RD is fetched.
pub fn trust_af(
    provider: &PeerId,
    sname: &str,
    friends_rd: &[&ReputationData],
) -> Result<TrustVerdict, TrustError> {
    let raters: Vec<(&PeerId, RatingLevel)> = friends_rd
        .iter()
        .filter(|rd| rd.owner != *provider)
        .filter_map(|rd| rd.rating(provider, sname).map(|r| (&rd.owner, r)))
        .collect();
    if raters.is_empty() {
        return Err(TrustError::NoRecommender);
    }
    let ratings: Vec<RatingLevel> = raters.iter().map(|(_, r)| *r).collect();
    Ok(TrustVerdict {
        score: mean_rating(&ratings),
        recommenders: raters.into_iter().map(|(id, _)| id.clone()).collect(),
        transactions: friends_rd.len() as u64,
        scheme: Scheme::Af,
    })
}

/// Average over every friend-of-a-friend who rated the service. The RDs of
/// all friends' friends (other than the requester) are fetched.
pub fn trust_afoaf<D: RdDirectory + ?Sized>(
    requester: &PeerId,
    provider: &PeerId,
    sname: &str,
    friends: &BTreeSet<PeerId>,
    foaf_rds: &D,
) -> Result<TrustVerdict, TrustError> {
    let mut transactions = 0u64;
    let mut foafs = BTreeSet::new();
    for f in friends {
        for ff in friends_of(foaf_rds, f) {
            if ff != requester {
                transactions += 1;
                if ff != provider {
                    foafs.insert(ff);
                }
            }
        }
    }
    let raters: Vec<(&PeerId, RatingLevel)> = foafs
        .into_iter()
        .filter_map(|id| {
            foaf_rds
                .rd(id)
                .and_then(|rd| rd.rating(provider, sname))
                .map(|r| (id, r))
        })
        .collect();
    if raters.is_empty() {
        return Err(TrustError::NoRecommender);
    }
    let ratings: Vec<RatingLevel> = raters.iter().map(|(_, r)| *r).collect();
    Ok(TrustVerdict {
        score: mean_rating(&ratings),
        recommenders: raters.into_iter().map(|(id, _)| id.clone()).collect(),
        transactions,
        scheme: Scheme::Afoaf,
    })
}

/// Picks the key maximising `key`, ties to the smallest id.
fn argmax_by<'a, T, K: PartialOrd>(
    items: impl IntoIterator<Item = (&'a PeerId, T)>,
    key: impl Fn(&T) -> K,
) -> Option<(&'a PeerId, T)> {
    let mut best: Option<(&'a PeerId, T)> = None;
    for (id, item) in items {
        let better = match &best {
            None => true,
            Some((bid, b)) => match key(&item).partial_cmp(&key(b)) {
                Some(std::cmp::Ordering::Greater) => true,
                Some(std::cmp::Ordering::Equal) => id < *bid,
                _ => false,
            },
        };
        if better {
            best = Some((id, item));
        }
    }
    best
}

/// One high-experience friend.
///
/// Friends with experience of the provider come from its PSC list when one
/// is given, otherwise from the replicated RDs. The requester's recommended
/// references for `stype` narrow the set when they overlap it. The friend
/// with the most rating records is asked for an up-to-date rating (one
/// transaction).
pub fn trust_hef<D: RdDirectory + ?Sized>(
    requester: &ReputationData,
    provider: &PeerId,
    sname: &str,
    stype: &SemanticType,
    psc: Option<&PscList>,
    friends: &BTreeSet<PeerId>,
    replicated: &D,
) -> Result<TrustVerdict, TrustError> {
    let experienced: BTreeSet<&PeerId> = match psc {
        Some(list) => friends.iter().filter(|f| list.contains(f)).collect(),
        None => friends
            .iter()
            .filter(|f| replicated.rd(f).is_some_and(|rd| rd.has_rated(provider)))
            .collect(),
    };
    let mfid: BTreeSet<&PeerId> = experienced
        .into_iter()
        .filter(|f| *f != provider)
        .filter(|f| {
            replicated
                .rd(f)
                .is_some_and(|rd| rd.rating(provider, sname).is_some())
        })
        .collect();
    if mfid.is_empty() {
        return Err(TrustError::FallThrough(Stage::Friends));
    }
    let rrid: BTreeSet<&PeerId> = match requester.recommended(stype) {
        Some(rr) => mfid.iter().copied().filter(|f| rr.contains(f)).collect(),
        None => BTreeSet::new(),
    };
    let pool = if rrid.is_empty() { mfid } else { rrid };
    let (id, rd) = argmax_by(
        pool.into_iter()
            .filter_map(|f| replicated.rd(f).map(|rd| (f, rd))),
        |rd| rd.rating_records(),
    )
    .ok_or(TrustError::FallThrough(Stage::Friends))?;
    let rate = rd
        .rating(provider, sname)
        .ok_or(TrustError::FallThrough(Stage::Friends))?;
    Ok(TrustVerdict {
        score: rate.value(),
        recommenders: vec![id.clone()],
        transactions: 1,
        scheme: Scheme::Hef,
    })
}

/// One high-experience friend of the highest-experience friend.
///
/// The requester's friend with the most `stype` experience is the hub; among
/// the hub's friends who rated the service the one with the most `stype`
/// experience is used. All of the hub's friends' RDs are fetched.
pub fn trust_hefhef<D: RdDirectory + ?Sized>(
    requester: &PeerId,
    provider: &PeerId,
    sname: &str,
    stype: &SemanticType,
    friends: &BTreeSet<PeerId>,
    dir: &D,
) -> Result<TrustVerdict, TrustError> {
    let (hub, _) = argmax_by(
        friends
            .iter()
            .filter(|f| *f != provider)
            .filter_map(|f| dir.rd(f).map(|rd| (f, rd))),
        |rd| stype_experience(rd, stype),
    )
    .ok_or(TrustError::FallThrough(Stage::FriendsOfFriends))?;
    let hub_friends: Vec<&PeerId> = friends_of(dir, hub).iter().filter(|f| *f != requester).collect();
    let candidates = hub_friends
        .iter()
        .copied()
        .filter(|f| *f != provider)
        .filter_map(|f| {
            dir.rd(f)
                .and_then(|rd| rd.rating(provider, sname).map(|r| (f, (rd, r))))
        });
    let (id, (_, rate)) = argmax_by(candidates, |(rd, _)| stype_experience(rd, stype))
        .ok_or(TrustError::FallThrough(Stage::FriendsOfFriends))?;
    Ok(TrustVerdict {
        score: rate.value(),
        recommenders: vec![hub.clone(), id.clone()],
        transactions: hub_friends.len() as u64,
        scheme: Scheme::Hefhef,
    })
}

/// The friend whose past ratings correlate best with the requester's.
pub fn trust_msf<D: RdDirectory + ?Sized>(
    requester: &ReputationData,
    provider: &PeerId,
    sname: &str,
    friends: &BTreeSet<PeerId>,
    replicated: &D,
) -> Result<TrustVerdict, TrustError> {
    let eligible = friends.iter().filter(|f| *f != provider).filter_map(|f| {
        let rd = replicated.rd(f)?;
        let rate = rd.rating(provider, sname)?;
        let sim = rating_similarity(requester, rd).ok()?;
        Some((f, (sim, rate)))
    });
    let (id, (_, rate)) = argmax_by(eligible, |(sim, _)| *sim).ok_or(TrustError::NoRecommender)?;
    Ok(TrustVerdict {
        score: rate.value(),
        recommenders: vec![id.clone()],
        transactions: 1,
        scheme: Scheme::Msf,
    })
}

/// Number of RDs in `crrd` that list `p` as a recommended reference for
/// `stype`. `p`'s own RD must not be part of `crrd`.
pub fn credibility(p: &PeerId, stype: &SemanticType, crrd: &[&ReputationData]) -> Result<usize, TrustError> {
    if crrd.iter().any(|rd| rd.owner == *p) {
        return Err(TrustError::OwnRdIncluded(p.clone()));
    }
    Ok(crrd
        .iter()
        .filter(|rd| rd.recommended(stype).is_some_and(|ids| ids.contains(p)))
        .count())
}

/// Credibility, experience and combined trust of one candidate recommender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub id: PeerId,
    pub credibility: usize,
    pub experience: usize,
    pub trust: f64,
}

/// Scores every owner in `candidates` against the rest of the population.
/// A normalised term is 0 when its population sum is 0.
pub fn candidate_scores(candidates: &[&ReputationData], stype: &SemanticType) -> Vec<CandidateScore> {
    let partial: Vec<(PeerId, usize, usize)> = candidates
        .iter()
        .map(|rd| {
            let cr = candidates
                .iter()
                .filter(|other| other.owner != rd.owner)
                .filter(|other| {
                    other
                        .recommended(stype)
                        .is_some_and(|ids| ids.contains(&rd.owner))
                })
                .count();
            (rd.owner.clone(), cr, stype_experience(rd, stype))
        })
        .collect();
    let sum_cr: usize = partial.iter().map(|p| p.1).sum();
    let sum_ex: usize = partial.iter().map(|p| p.2).sum();
    let frac = |x: usize, total: usize| {
        if total == 0 {
            0.0
        } else {
            x as f64 / total as f64
        }
    };
    partial
        .into_iter()
        .map(|(id, cr, ex)| CandidateScore {
            trust: (frac(cr, sum_cr) + frac(ex, sum_ex)) / 2.0,
            id,
            credibility: cr,
            experience: ex,
        })
        .collect()
}

/// Average of `phi`'s normalised credibility and normalised experience.
pub fn recommender_trust_score(
    phi: &PeerId,
    candidates: &[&ReputationData],
    stype: &SemanticType,
) -> Result<f64, TrustError> {
    candidate_scores(candidates, stype)
        .into_iter()
        .find(|s| s.id == *phi)
        .map(|s| s.trust)
        .ok_or_else(|| TrustError::UnknownCandidate(phi.clone()))
}

/// Trust from proximal strangers. Every proximal RD is fetched, so all
/// variants cost `|proximal|` transactions.
pub fn trust_public(
    provider: &PeerId,
    sname: &str,
    stype: &SemanticType,
    proximal: &[&ReputationData],
    scheme: PublicScheme,
) -> Result<TrustVerdict, TrustError> {
    if proximal.iter().any(|rd| rd.owner == *provider) {
        return Err(TrustError::ProviderInProximal);
    }
    let scores = candidate_scores(proximal, stype);
    let raters: Vec<(&PeerId, (&CandidateScore, RatingLevel))> = proximal
        .iter()
        .zip(&scores)
        .filter_map(|(rd, s)| rd.rating(provider, sname).map(|r| (&rd.owner, (s, r))))
        .collect();
    if raters.is_empty() {
        return Err(TrustError::NoRecommender);
    }
    let pick = |key: fn(&CandidateScore) -> f64| {
        let (id, (_, rate)) =
            argmax_by(raters.iter().map(|(id, v)| (*id, *v)), |(s, _)| key(s)).expect("raters is non-empty");
        (rate.value(), vec![id.clone()])
    };
    let (score, recommenders) = match scheme {
        PublicScheme::Naive => {
            let ratings: Vec<RatingLevel> = raters.iter().map(|(_, (_, r))| *r).collect();
            (
                mean_rating(&ratings),
                raters.iter().map(|(id, _)| (*id).clone()).collect(),
            )
        }
        PublicScheme::ExpOnly => pick(|s| s.experience as f64),
        PublicScheme::CreditOnly => pick(|s| s.credibility as f64),
        PublicScheme::Proposed => pick(|s| s.trust),
    };
    Ok(TrustVerdict {
        score,
        recommenders,
        transactions: proximal.len() as u64,
        scheme: scheme.into(),
    })
}

/// Cost-performance index: accuracy per runtime transaction.
pub fn cpi(accuracy: f64, transactions: f64) -> Result<f64, TrustError> {
    if transactions.is_nan() || transactions < 1.0 {
        return Err(TrustError::TooFewTransactions(transactions));
    }
    Ok(accuracy / transactions)
}

/// A request to rate one service of one provider.
#[derive(Debug, Clone, Copy)]
pub struct TrustRequest<'a> {
    pub requester: &'a ReputationData,
    pub provider: &'a PeerId,
    pub sname: &'a str,
    pub stype: &'a SemanticType,
    pub psc: Option<&'a PscList>,
}

/// Runs the full cascade: one high-experience friend, then a friend of the
/// highest-experience friend, then the proposed public scheme. Exactly one
/// stage produces the verdict.
pub fn select_trust<D: RdDirectory + ?Sized>(
    req: &TrustRequest<'_>,
    friends: &BTreeSet<PeerId>,
    dir: &D,
    proximal: &[&ReputationData],
) -> Result<(Stage, TrustVerdict), TrustError> {
    let owner = &req.requester.owner;
    match trust_hef(
        req.requester,
        req.provider,
        req.sname,
        req.stype,
        req.psc,
        friends,
        dir,
    ) {
        Ok(v) => return Ok((Stage::Friends, v)),
        Err(TrustError::FallThrough(_)) => {}
        Err(e) => return Err(e),
    }
    match trust_hefhef(owner, req.provider, req.sname, req.stype, friends, dir) {
        Ok(v) => return Ok((Stage::FriendsOfFriends, v)),
        Err(TrustError::FallThrough(_)) => {}
        Err(e) => return Err(e),
    }
    let proximal: Vec<&ReputationData> = proximal
        .iter()
        .copied()
        .filter(|rd| rd.owner != *req.provider && rd.owner != *owner)
        .collect();
    trust_public(
        req.provider,
        req.sname,
        req.stype,
        &proximal,
        PublicScheme::Proposed,
    )
    .map(|v| (Stage::Public, v))
}
