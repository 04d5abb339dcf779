//! Discrete-event simulation of the four discovery process models.
//!
//! One requester looks for providers of a semantic type among `n_providers`
//! newcomers. Latency is `rtt + bytes / bandwidth` per transfer plus a
//! linear parse cost per KB; the requester owns a single serial CPU. The
//! deployment (join times, push delays, which providers match) is drawn up
//! front from the seed so every model sees the same population.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    Ontology, PeerId, SemanticType, Service, ServiceDescription, DEFAULT_OWL_BYTES, DEFAULT_SDM_BYTES,
};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("config line {line}: {reason}")]
    ConfigSyntax { line: usize, reason: String },
    #[error("hybrid support fraction must be in [0, 1], got {0}")]
    BadFraction(f64),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("io: {0}")]
    Io(String),
}

/// How providers enter the requester's environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Deployment {
    /// Everyone joins within the announcement window.
    Burst,
    /// `batch_size` providers join every `batch_interval_ms`.
    Steady {
        batch_size: usize,
        batch_interval_ms: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_providers: usize,
    pub matched_fraction: f64,
    pub sdm_bytes: u64,
    pub owl_bytes: u64,
    pub rtt_ms: f64,
    pub bandwidth_bytes_per_ms: f64,
    pub parse_ms_per_kb: f64,
    pub match_ms: f64,
    pub trust_ms: f64,
    /// Join jitter within a burst or batch.
    pub announce_window_ms: f64,
    /// Providers push at a uniform delay in `[0, push_window_ms]` after joining.
    pub push_window_ms: f64,
    pub pref_bytes: u64,
    pub discovery_timeout_ms: f64,
    /// Share of providers offering a cached-SDM service.
    pub cached_sdm_fraction: f64,
    /// Most SDMs a provider hands over from its cache.
    pub cache_capacity: usize,
    pub requested_type: String,
    pub deployment: Deployment,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_providers: 50,
            matched_fraction: 0.2,
            sdm_bytes: DEFAULT_SDM_BYTES,
            owl_bytes: DEFAULT_OWL_BYTES,
            rtt_ms: 20.0,
            bandwidth_bytes_per_ms: 1000.0,
            parse_ms_per_kb: 0.5,
            match_ms: 3.0,
            trust_ms: 5.0,
            announce_window_ms: 200.0,
            push_window_ms: 3000.0,
            pref_bytes: 256,
            discovery_timeout_ms: 120_000.0,
            cached_sdm_fraction: 0.0,
            cache_capacity: 8,
            requested_type: "Food".to_string(),
            deployment: Deployment::Burst,
            seed: 0,
        }
    }
}

/// Types offered by providers that do not match the request.
const OTHER_TYPES: [&str; 3] = ["Taxi", "Hotel", "Music"];

impl SimConfig {
    /// Providers joining at 5 per second for 100 seconds.
    pub fn steady_default() -> Self {
        Self {
            n_providers: 500,
            deployment: Deployment::Steady {
                batch_size: 5,
                batch_interval_ms: 1000.0,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        let positive = [
            ("rtt_ms", self.rtt_ms),
            ("bandwidth_bytes_per_ms", self.bandwidth_bytes_per_ms),
            ("parse_ms_per_kb", self.parse_ms_per_kb),
            ("match_ms", self.match_ms),
            ("discovery_timeout_ms", self.discovery_timeout_ms),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("trust_ms", self.trust_ms),
            ("announce_window_ms", self.announce_window_ms),
            ("push_window_ms", self.push_window_ms),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.matched_fraction > 0.0 && self.matched_fraction < 1.0) {
            return bad("matched_fraction must lie strictly between 0 and 1");
        }
        if !(0.0..=1.0).contains(&self.cached_sdm_fraction) {
            return bad("cached_sdm_fraction must lie in [0, 1]");
        }
        if self.sdm_bytes == 0 {
            return bad("sdm_bytes must be > 0");
        }
        if self.requested_type.trim().is_empty() || OTHER_TYPES.contains(&self.requested_type.as_str()) {
            return bad("requested_type must be non-empty and distinct from the filler types");
        }
        if let Deployment::Steady {
            batch_size,
            batch_interval_ms,
        } = self.deployment
        {
            if batch_size == 0 || batch_interval_ms.is_nan() || batch_interval_ms <= 0.0 {
                return bad("steady deployment needs batch_size > 0 and batch_interval_ms > 0");
            }
        }
        Ok(())
    }

    /// `key = value` pairs in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("n_providers", self.n_providers.to_string()),
            ("matched_fraction", self.matched_fraction.to_string()),
            ("sdm_bytes", self.sdm_bytes.to_string()),
            ("owl_bytes", self.owl_bytes.to_string()),
            ("rtt_ms", self.rtt_ms.to_string()),
            ("bandwidth_bytes_per_ms", self.bandwidth_bytes_per_ms.to_string()),
            ("parse_ms_per_kb", self.parse_ms_per_kb.to_string()),
            ("match_ms", self.match_ms.to_string()),
            ("trust_ms", self.trust_ms.to_string()),
            ("announce_window_ms", self.announce_window_ms.to_string()),
            ("push_window_ms", self.push_window_ms.to_string()),
            ("pref_bytes", self.pref_bytes.to_string()),
            ("discovery_timeout_ms", self.discovery_timeout_ms.to_string()),
            ("cached_sdm_fraction", self.cached_sdm_fraction.to_string()),
            ("cache_capacity", self.cache_capacity.to_string()),
            ("requested_type", self.requested_type.clone()),
        ];
        match self.deployment {
            Deployment::Burst => out.push(("deployment", "burst".to_string())),
            Deployment::Steady {
                batch_size,
                batch_interval_ms,
            } => {
                out.push(("deployment", "steady".to_string()));
                out.push(("batch_size", batch_size.to_string()));
                out.push(("batch_interval_ms", batch_interval_ms.to_string()));
            }
        }
        out.push(("seed", self.seed.to_string()));
        out
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut cfg = Self::default();
        let mut steady = None;
        let mut batch_size = 5usize;
        let mut batch_interval_ms = 1000.0;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| SimError::ConfigSyntax {
                line: line_no,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".to_string()))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: FromStr>(v: &str) -> Result<T, String> {
                v.parse::<T>().map_err(|_| format!("bad number `{v}`"))
            }
            let r: Result<(), String> = (|| {
                match key {
                    "n_providers" => cfg.n_providers = num(value)?,
                    "matched_fraction" => cfg.matched_fraction = num(value)?,
                    "sdm_bytes" => cfg.sdm_bytes = num(value)?,
                    "owl_bytes" => cfg.owl_bytes = num(value)?,
                    "rtt_ms" => cfg.rtt_ms = num(value)?,
                    "bandwidth_bytes_per_ms" => cfg.bandwidth_bytes_per_ms = num(value)?,
                    "parse_ms_per_kb" => cfg.parse_ms_per_kb = num(value)?,
                    "match_ms" => cfg.match_ms = num(value)?,
                    "trust_ms" => cfg.trust_ms = num(value)?,
                    "announce_window_ms" => cfg.announce_window_ms = num(value)?,
                    "push_window_ms" => cfg.push_window_ms = num(value)?,
                    "pref_bytes" => cfg.pref_bytes = num(value)?,
                    "discovery_timeout_ms" => cfg.discovery_timeout_ms = num(value)?,
                    "cached_sdm_fraction" => cfg.cached_sdm_fraction = num(value)?,
                    "cache_capacity" => cfg.cache_capacity = num(value)?,
                    "requested_type" => cfg.requested_type = value.to_string(),
                    "seed" => cfg.seed = num(value)?,
                    "batch_size" => batch_size = num(value)?,
                    "batch_interval_ms" => batch_interval_ms = num(value)?,
                    "deployment" => {
                        steady = Some(match value.to_ascii_lowercase().as_str() {
                            "burst" => false,
                            "steady" => true,
                            other => return Err(format!("unknown deployment `{other}`")),
                        })
                    }
                    other => return Err(format!("unknown key `{other}`")),
                }
                Ok(())
            })();
            r.map_err(err)?;
        }
        if steady == Some(true) {
            cfg.deployment = Deployment::Steady {
                batch_size,
                batch_interval_ms,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn matched_in(&self, group: usize) -> usize {
        (self.matched_fraction * group as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Pull,
    Push,
    PrefPush,
    /// Providers with a support draw below the fraction use PrefPush; the
    /// rest are pulled.
    Hybrid(f64),
}

impl Model {
    pub fn label(&self) -> String {
        match self {
            Model::Pull => "pull".to_string(),
            Model::Push => "push".to_string(),
            Model::PrefPush => "prefpush".to_string(),
            Model::Hybrid(f) => format!("hybrid{f}"),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Model {
    type Err = SimError;

    /// `pull`, `push`, `prefpush`, `hybrid` (half support) or `hybrid0.3`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        match key.as_str() {
            "pull" => Ok(Model::Pull),
            "push" => Ok(Model::Push),
            "prefpush" | "pref-push" => Ok(Model::PrefPush),
            "hybrid" => Ok(Model::Hybrid(0.5)),
            _ => {
                let frac = key
                    .strip_prefix("hybrid")
                    .and_then(|f| f.trim_start_matches([':', '=']).parse::<f64>().ok())
                    .ok_or_else(|| SimError::UnknownModel(s.to_string()))?;
                if !(0.0..=1.0).contains(&frac) {
                    return Err(SimError::BadFraction(frac));
                }
                Ok(Model::Hybrid(frac))
            }
        }
    }
}

/// One simulated provider.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderPlan {
    pub sdm: ServiceDescription,
    pub join_ms: f64,
    pub push_delay_ms: f64,
    /// Uniform draw compared against the hybrid support fraction.
    pub support_u: f64,
}

/// The population of one run. Drawn once per seed and shared by all models.
#[derive(Debug, Clone)]
pub struct DeploymentPlan {
    pub ontology: Ontology,
    pub providers: Vec<ProviderPlan>,
}

pub fn provider_id(i: usize) -> PeerId {
    PeerId::new(format!("p{i:04}")).expect("non-empty id")
}

pub fn requester_id() -> PeerId {
    PeerId::new("requester").expect("non-empty id")
}

impl DeploymentPlan {
    /// Ontology with root `Service` and the requested plus filler types.
    pub fn ontology_for(config: &SimConfig) -> Ontology {
        let mut pairs = vec![(config.requested_type.as_str(), Some("Service"))];
        pairs.extend(OTHER_TYPES.iter().map(|t| (*t, Some("Service"))));
        pairs.push(("Service", None));
        Ontology::from_concepts(pairs).expect("fixed simulation ontology is valid")
    }

    pub fn provider(config: &SimConfig, i: usize, stype: &str) -> ServiceDescription {
        let mut sd = ServiceDescription::new(
            provider_id(i),
            vec![Service {
                sname: format!("svc{i}"),
                stype: SemanticType::new(stype),
            }],
        )
        .expect("one service per provider");
        sd.sdm_bytes = config.sdm_bytes;
        sd.owl_bytes = config.owl_bytes;
        sd
    }

    /// Draws joins, push delays, support and cache flags from the seed.
    pub fn draw(config: &SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.n_providers;
        let group = match config.deployment {
            Deployment::Burst => n.max(1),
            Deployment::Steady { batch_size, .. } => batch_size,
        };
        let mut matched = vec![false; n];
        for start in (0..n).step_by(group) {
            let end = (start + group).min(n);
            let mut idx: Vec<usize> = (start..end).collect();
            idx.shuffle(&mut rng);
            for &i in idx.iter().take(config.matched_in(end - start)) {
                matched[i] = true;
            }
        }
        let mut providers = Vec::with_capacity(n);
        for (i, &is_match) in matched.iter().enumerate() {
            let base = match config.deployment {
                Deployment::Burst => 0.0,
                Deployment::Steady {
                    batch_size,
                    batch_interval_ms,
                } => (i / batch_size) as f64 * batch_interval_ms,
            };
            let join_ms = base + rng.random::<f64>() * config.announce_window_ms;
            let push_delay_ms = rng.random::<f64>() * config.push_window_ms;
            let support_u = rng.random::<f64>();
            let cached = rng.random::<f64>() < config.cached_sdm_fraction;
            let filler = OTHER_TYPES[rng.random_range(0..OTHER_TYPES.len())];
            let stype = if is_match {
                config.requested_type.as_str()
            } else {
                filler
            };
            let mut sdm = Self::provider(config, i, stype);
            sdm.cached_sdm_available = cached;
            providers.push(ProviderPlan {
                sdm,
                join_ms,
                push_delay_ms,
                support_u,
            });
        }
        Ok(Self {
            ontology: Self::ontology_for(config),
            providers,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Announce,
    FetchSdm,
    SdmArrived,
    MatchDone,
    AdvertisePush,
    PrefRequest,
    PrefReply,
    TrustDone,
    /// Never scheduled: invocation happens after the makespan ends.
    Invoke,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time_ms: f64,
    pub kind: EventKind,
    pub src: PeerId,
    pub dst: PeerId,
    pub payload_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub model: String,
    pub n_providers: usize,
    pub matched: usize,
    pub makespan_ms: f64,
    pub cpu_ms: f64,
    pub ram_bytes_peak: u64,
    pub messages: u64,
    pub discovered: BTreeSet<PeerId>,
    pub timed_out: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Pull,
    Push,
    PrefPush,
}

#[derive(Debug, Clone)]
enum Payload {
    /// One provider's documents; `full` when the OWL came along.
    Docs {
        provider: usize,
        full: bool,
    },
    /// A batch handed over by a cached-SDM service.
    Cached {
        via: usize,
        providers: Vec<usize>,
    },
    Provider(usize),
}

#[derive(Debug)]
struct Queued {
    time: f64,
    seq: u64,
    kind: EventKind,
    payload: Payload,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // Reversed so the max-heap pops the earliest event, ties by insertion.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    plan: &'a DeploymentPlan,
    modes: Vec<Mode>,
    matched: Vec<bool>,
    queue: BinaryHeap<Queued>,
    seq: u64,
    cpu_free_at: f64,
    cpu_ms: f64,
    ram: u64,
    ram_peak: u64,
    messages: u64,
    seen: Vec<bool>,
    fetch_queue: VecDeque<usize>,
    fetcher_busy: bool,
    current_fetch: Option<usize>,
    discovered: BTreeSet<PeerId>,
    last_trust: f64,
    trace: Option<Vec<SimEvent>>,
}

impl<'a> Sim<'a> {
    fn push(&mut self, time: f64, kind: EventKind, payload: Payload) {
        self.seq += 1;
        self.queue.push(Queued {
            time,
            seq: self.seq,
            kind,
            payload,
        });
    }

    fn transfer(&self, bytes: u64) -> f64 {
        self.cfg.rtt_ms + bytes as f64 / self.cfg.bandwidth_bytes_per_ms
    }

    fn one_way(&self, bytes: u64) -> f64 {
        self.cfg.rtt_ms / 2.0 + bytes as f64 / self.cfg.bandwidth_bytes_per_ms
    }

    fn docs(&self, p: usize) -> u64 {
        let sd = &self.plan.providers[p].sdm;
        sd.sdm_bytes + sd.owl_bytes
    }

    fn parse_cost(&self, bytes: u64) -> f64 {
        bytes as f64 / 1024.0 * self.cfg.parse_ms_per_kb + self.cfg.match_ms
    }

    /// Queues `dur` on the serial CPU and returns the completion time.
    fn cpu(&mut self, now: f64, dur: f64) -> f64 {
        let start = self.cpu_free_at.max(now);
        self.cpu_free_at = start + dur;
        self.cpu_ms += dur;
        self.cpu_free_at
    }

    fn retain(&mut self, bytes: u64) {
        self.ram += bytes;
        self.ram_peak = self.ram_peak.max(self.ram);
    }

    fn release(&mut self, bytes: u64) {
        self.ram -= bytes;
    }

    fn start_fetch(&mut self, now: f64) {
        while let Some(p) = self.fetch_queue.pop_front() {
            if self.seen[p] {
                continue;
            }
            self.seen[p] = true;
            self.fetcher_busy = true;
            self.current_fetch = Some(p);
            self.messages += 2;
            self.push(now, EventKind::FetchSdm, Payload::Provider(p));
            let arrive = now + self.transfer(self.docs(p));
            self.push(
                arrive,
                EventKind::SdmArrived,
                Payload::Docs {
                    provider: p,
                    full: true,
                },
            );
            return;
        }
        self.fetcher_busy = false;
    }

    fn arrive_for_matching(&mut self, now: f64, p: usize) {
        let bytes = self.docs(p);
        self.retain(bytes);
        let done = self.cpu(now, self.parse_cost(bytes));
        self.push(
            done,
            EventKind::MatchDone,
            Payload::Docs {
                provider: p,
                full: true,
            },
        );
    }

    fn trust(&mut self, now: f64, p: usize) {
        let done = self.cpu(now, self.cfg.trust_ms);
        self.push(done, EventKind::TrustDone, Payload::Provider(p));
    }

    fn record(&mut self, ev: &Queued) {
        if let Some(trace) = self.trace.as_mut() {
            let (src, dst, bytes) = match &ev.payload {
                Payload::Docs { provider, full } => {
                    let sd = &self.plan.providers[*provider].sdm;
                    let b = if *full {
                        sd.sdm_bytes + sd.owl_bytes
                    } else {
                        sd.sdm_bytes
                    };
                    (provider_id(*provider), requester_id(), b)
                }
                Payload::Cached { via, providers } => {
                    let b = providers.iter().map(|&p| {
                        let sd = &self.plan.providers[p].sdm;
                        sd.sdm_bytes + sd.owl_bytes
                    });
                    (provider_id(*via), requester_id(), b.sum())
                }
                Payload::Provider(p) => (provider_id(*p), requester_id(), 0),
            };
            trace.push(SimEvent {
                time_ms: ev.time,
                kind: ev.kind,
                src,
                dst,
                payload_bytes: bytes,
            });
        }
    }

    fn handle(&mut self, ev: Queued) {
        let now = ev.time;
        match (ev.kind, ev.payload) {
            (EventKind::Announce, Payload::Provider(p)) => {
                self.messages += 1;
                let sd = &self.plan.providers[p];
                match self.modes[p] {
                    Mode::Pull => {
                        self.fetch_queue.push_back(p);
                        if !self.fetcher_busy {
                            self.start_fetch(now);
                        }
                    }
                    Mode::Push => {
                        // Provider fetches the requester's SDM, waits, then pushes.
                        self.messages += 3;
                        let at = now
                            + self.transfer(self.cfg.sdm_bytes)
                            + sd.push_delay_ms
                            + self.one_way(sd.sdm.sdm_bytes + sd.sdm.owl_bytes);
                        self.push(
                            at,
                            EventKind::AdvertisePush,
                            Payload::Docs {
                                provider: p,
                                full: true,
                            },
                        );
                    }
                    Mode::PrefPush => {
                        self.messages += 1;
                        self.push(now, EventKind::PrefRequest, Payload::Provider(p));
                    }
                }
            }
            (EventKind::PrefRequest, Payload::Provider(p)) => {
                self.messages += 1;
                let at = now + self.transfer(self.cfg.pref_bytes);
                self.push(at, EventKind::PrefReply, Payload::Provider(p));
            }
            (EventKind::PrefReply, Payload::Provider(p)) => {
                // Provider-side matchmaking; only matches push their SDM.
                if self.matched[p] {
                    self.messages += 1;
                    let sd = &self.plan.providers[p];
                    let at = now + self.cfg.match_ms + sd.push_delay_ms + self.one_way(sd.sdm.sdm_bytes);
                    self.push(
                        at,
                        EventKind::AdvertisePush,
                        Payload::Docs {
                            provider: p,
                            full: false,
                        },
                    );
                }
            }
            (EventKind::AdvertisePush, Payload::Docs { provider, full }) => {
                self.seen[provider] = true;
                if full {
                    self.arrive_for_matching(now, provider);
                } else {
                    self.retain(self.plan.providers[provider].sdm.sdm_bytes);
                    self.trust(now, provider);
                }
            }
            (EventKind::FetchSdm, _) => {}
            (EventKind::SdmArrived, Payload::Docs { provider, .. }) => {
                self.arrive_for_matching(now, provider);
            }
            (EventKind::SdmArrived, Payload::Cached { providers, .. }) => {
                for p in providers {
                    self.arrive_for_matching(now, p);
                }
                self.start_fetch(now);
            }
            (EventKind::MatchDone, Payload::Docs { provider: p, .. }) => {
                let sd = &self.plan.providers[p].sdm;
                let (sdm_b, owl_b) = (sd.sdm_bytes, sd.owl_bytes);
                let pulled = self.modes[p] == Mode::Pull;
                if self.matched[p] {
                    self.trust(now, p);
                } else if pulled {
                    self.release(owl_b);
                } else {
                    self.release(sdm_b + owl_b);
                }
                if pulled && self.fetcher_busy && self.fetch_is_current(p) {
                    self.after_pull_match(now, p);
                }
            }
            (EventKind::TrustDone, Payload::Provider(p)) => {
                self.discovered.insert(provider_id(p));
                self.last_trust = self.last_trust.max(now);
            }
            _ => unreachable!("event kind and payload disagree"),
        }
    }

    /// The sequential fetcher waits on the provider it fetched directly.
    fn fetch_is_current(&self, p: usize) -> bool {
        self.current_fetch == Some(p)
    }

    fn after_pull_match(&mut self, now: f64, p: usize) {
        self.current_fetch = None;
        let sd = &self.plan.providers[p];
        if sd.sdm.cached_sdm_available && self.cfg.cache_capacity > 0 {
            // The provider has exchanged SDMs with everyone present so far.
            let batch: Vec<usize> = (0..self.plan.providers.len())
                .filter(|&q| q != p && !self.seen[q] && self.modes[q] == Mode::Pull)
                .filter(|&q| self.plan.providers[q].join_ms <= now)
                .take(self.cfg.cache_capacity)
                .collect();
            if !batch.is_empty() {
                for &q in &batch {
                    self.seen[q] = true;
                }
                let bytes: u64 = batch.iter().map(|&q| self.docs(q)).sum();
                self.messages += 2;
                let at = now + self.transfer(bytes);
                self.push(
                    at,
                    EventKind::SdmArrived,
                    Payload::Cached {
                        via: p,
                        providers: batch,
                    },
                );
                return;
            }
        }
        self.start_fetch(now);
    }
}

/// Runs one model over an explicit population.
pub fn simulate(
    config: &SimConfig,
    plan: &DeploymentPlan,
    model: Model,
    required: &SemanticType,
) -> Result<SimResult, SimError> {
    run(config, plan, model, required, false).map(|(r, _)| r)
}

/// As [`simulate`], also returning every processed event in order.
pub fn simulate_traced(
    config: &SimConfig,
    plan: &DeploymentPlan,
    model: Model,
    required: &SemanticType,
) -> Result<(SimResult, Vec<SimEvent>), SimError> {
    run(config, plan, model, required, true).map(|(r, t)| (r, t.unwrap_or_default()))
}

fn run(
    config: &SimConfig,
    plan: &DeploymentPlan,
    model: Model,
    required: &SemanticType,
    traced: bool,
) -> Result<(SimResult, Option<Vec<SimEvent>>), SimError> {
    config.validate()?;
    if let Model::Hybrid(f) = model {
        if !(0.0..=1.0).contains(&f) {
            return Err(SimError::BadFraction(f));
        }
    }
    let n = plan.providers.len();
    let modes: Vec<Mode> = plan
        .providers
        .iter()
        .map(|p| match model {
            Model::Pull => Mode::Pull,
            Model::Push => Mode::Push,
            Model::PrefPush => Mode::PrefPush,
            Model::Hybrid(f) if p.support_u < f => Mode::PrefPush,
            Model::Hybrid(_) => Mode::Pull,
        })
        .collect();
    let matched: Vec<bool> = plan
        .providers
        .iter()
        .map(|p| p.sdm.offers(required, &plan.ontology).unwrap_or(false))
        .collect();
    let mut sim = Sim {
        cfg: config,
        plan,
        modes,
        matched,
        queue: BinaryHeap::new(),
        seq: 0,
        cpu_free_at: 0.0,
        cpu_ms: 0.0,
        ram: 0,
        ram_peak: 0,
        messages: 0,
        seen: vec![false; n],
        fetch_queue: VecDeque::new(),
        fetcher_busy: false,
        current_fetch: None,
        discovered: BTreeSet::new(),
        last_trust: 0.0,
        trace: traced.then(Vec::new),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        plan.providers[a]
            .join_ms
            .total_cmp(&plan.providers[b].join_ms)
            .then(a.cmp(&b))
    });
    for p in order {
        sim.push(
            plan.providers[p].join_ms,
            EventKind::Announce,
            Payload::Provider(p),
        );
    }
    let mut timed_out = false;
    while let Some(ev) = sim.queue.pop() {
        if ev.time > config.discovery_timeout_ms {
            timed_out = true;
            break;
        }
        sim.record(&ev);
        sim.handle(ev);
    }
    let matched_total = sim.matched.iter().filter(|m| **m).count();
    let makespan_ms = if timed_out && sim.discovered.len() < matched_total {
        config.discovery_timeout_ms
    } else {
        timed_out = false;
        sim.last_trust
    };
    Ok((
        SimResult {
            model: model.label(),
            n_providers: n,
            matched: matched_total,
            makespan_ms,
            cpu_ms: sim.cpu_ms,
            ram_bytes_peak: sim.ram_peak,
            messages: sim.messages,
            discovered: sim.discovered,
            timed_out,
        },
        sim.trace,
    ))
}

fn run_drawn(config: &SimConfig, model: Model, required: &SemanticType) -> Result<SimResult, SimError> {
    let plan = DeploymentPlan::draw(config)?;
    simulate(config, &plan, model, required)
}

pub fn run_pull(config: &SimConfig) -> Result<SimResult, SimError> {
    run_drawn(config, Model::Pull, &SemanticType::new(&config.requested_type))
}

pub fn run_push(config: &SimConfig) -> Result<SimResult, SimError> {
    run_drawn(config, Model::Push, &SemanticType::new(&config.requested_type))
}

pub fn run_prefpush(config: &SimConfig, predicted: &SemanticType) -> Result<SimResult, SimError> {
    run_drawn(config, Model::PrefPush, predicted)
}

pub fn run_hybrid(
    config: &SimConfig,
    predicted: &SemanticType,
    prefpush_support_fraction: f64,
) -> Result<SimResult, SimError> {
    run_drawn(config, Model::Hybrid(prefpush_support_fraction), predicted)
}

/// Runs `model` with the config's requested type as the target.
pub fn run_model(config: &SimConfig, model: Model) -> Result<SimResult, SimError> {
    run_drawn(config, model, &SemanticType::new(&config.requested_type))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SimConfig {
        SimConfig {
            announce_window_ms: 0.0,
            push_window_ms: 0.0,
            trust_ms: 0.0,
            ..SimConfig::default()
        }
    }

    fn single(config: &SimConfig, matched: bool) -> DeploymentPlan {
        let stype = if matched {
            config.requested_type.as_str()
        } else {
            "Taxi"
        };
        DeploymentPlan {
            ontology: DeploymentPlan::ontology_for(config),
            providers: vec![ProviderPlan {
                sdm: DeploymentPlan::provider(config, 0, stype),
                join_ms: 0.0,
                push_delay_ms: 0.0,
                support_u: 0.5,
            }],
        }
    }

    fn food() -> SemanticType {
        SemanticType::new("Food")
    }

    const DOCS: f64 = 18432.0;

    #[test]
    fn single_provider_pull() {
        let c = cfg();
        let r = simulate(&c, &single(&c, true), Model::Pull, &food()).unwrap();
        let expect = 20.0 + DOCS / 1000.0 + 18.0 * 0.5 + 3.0;
        assert!((r.makespan_ms - expect).abs() < 1e-9, "{}", r.makespan_ms);
        assert_eq!(r.discovered.len(), 1);
    }

    #[test]
    fn single_provider_push() {
        let c = cfg();
        let r = simulate(&c, &single(&c, true), Model::Push, &food()).unwrap();
        let fetch = 20.0 + 6144.0 / 1000.0;
        let push = 10.0 + DOCS / 1000.0;
        let expect = fetch + push + 18.0 * 0.5 + 3.0;
        assert!((r.makespan_ms - expect).abs() < 1e-9);
    }

    #[test]
    fn single_provider_prefpush() {
        let c = SimConfig {
            trust_ms: 5.0,
            ..cfg()
        };
        let r = simulate(&c, &single(&c, true), Model::PrefPush, &food()).unwrap();
        let expect = (20.0 + 0.256) + 3.0 + (10.0 + 6.144) + 5.0;
        assert!((r.makespan_ms - expect).abs() < 1e-9);
        assert_eq!(r.cpu_ms, 5.0);
    }

    #[test]
    fn no_providers() {
        let c = SimConfig {
            n_providers: 0,
            ..SimConfig::default()
        };
        for model in [Model::Pull, Model::Push, Model::PrefPush, Model::Hybrid(0.5)] {
            let r = run_model(&c, model).unwrap();
            assert_eq!(r.makespan_ms, 0.0);
            assert!(r.discovered.is_empty());
        }
    }

    #[test]
    fn unmatched_provider_is_not_discovered() {
        let c = cfg();
        let r = simulate(&c, &single(&c, false), Model::Pull, &food()).unwrap();
        assert!(r.discovered.is_empty());
        assert_eq!(r.ram_bytes_peak, DOCS as u64);
    }

    #[test]
    fn timeout_is_flagged() {
        let c = SimConfig {
            n_providers: 50,
            discovery_timeout_ms: 100.0,
            ..SimConfig::default()
        };
        let r = run_pull(&c).unwrap();
        assert!(r.timed_out);
        assert_eq!(r.makespan_ms, 100.0);
    }

    #[test]
    fn hybrid_degenerates() {
        let c = SimConfig {
            n_providers: 60,
            seed: 3,
            ..SimConfig::default()
        };
        let pull = run_pull(&c).unwrap();
        let pref = run_prefpush(&c, &food()).unwrap();
        let mut h0 = run_hybrid(&c, &food(), 0.0).unwrap();
        let mut h1 = run_hybrid(&c, &food(), 1.0).unwrap();
        h0.model = pull.model.clone();
        h1.model = pref.model.clone();
        assert_eq!(h0, pull);
        assert_eq!(h1, pref);
    }

    #[test]
    fn hybrid_between_extremes() {
        let c = SimConfig {
            n_providers: 200,
            seed: 1,
            ..SimConfig::default()
        };
        let pull = run_pull(&c).unwrap().makespan_ms;
        let pref = run_prefpush(&c, &food()).unwrap().makespan_ms;
        let hyb = run_hybrid(&c, &food(), 0.5).unwrap().makespan_ms;
        assert!(pref <= hyb && hyb <= pull, "{pref} {hyb} {pull}");
    }

    #[test]
    fn cached_sdm_avoids_refetch() {
        let c = SimConfig {
            n_providers: 40,
            cached_sdm_fraction: 0.5,
            seed: 9,
            ..SimConfig::default()
        };
        let plan = DeploymentPlan::draw(&c).unwrap();
        let (r, trace) = simulate_traced(&c, &plan, Model::Pull, &food()).unwrap();
        let fetched: Vec<_> = trace
            .iter()
            .filter(|e| e.kind == EventKind::FetchSdm)
            .map(|e| e.src.clone())
            .collect();
        let unique: BTreeSet<_> = fetched.iter().cloned().collect();
        assert_eq!(fetched.len(), unique.len());
        assert!(fetched.len() < 40);
        assert_eq!(r.discovered.len(), r.matched);
        let plain = run_pull(&SimConfig {
            cached_sdm_fraction: 0.0,
            ..c.clone()
        })
        .unwrap();
        assert!(r.messages < plain.messages);
    }

    #[test]
    fn config_text_roundtrip() {
        let c = SimConfig::steady_default();
        assert_eq!(SimConfig::parse(&c.to_text()).unwrap(), c);
        let d = SimConfig {
            seed: 17,
            rtt_ms: 12.5,
            ..SimConfig::default()
        };
        assert_eq!(SimConfig::parse(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(
            SimConfig::parse("rtt_ms 5"),
            Err(SimError::ConfigSyntax { line: 1, .. })
        ));
        assert!(matches!(
            SimConfig::parse("# c\nwat = 1"),
            Err(SimError::ConfigSyntax { line: 2, .. })
        ));
        assert!(matches!(
            SimConfig::parse("matched_fraction = 1"),
            Err(SimError::InvalidConfig(_))
        ));
        assert!(matches!(
            SimConfig::parse("rtt_ms = 0"),
            Err(SimError::InvalidConfig(_))
        ));
        assert!(matches!(
            SimConfig::parse("rtt_ms = x"),
            Err(SimError::ConfigSyntax { .. })
        ));
    }

    #[test]
    fn model_names() {
        assert_eq!("pull".parse::<Model>().unwrap(), Model::Pull);
        assert_eq!("PrefPush".parse::<Model>().unwrap(), Model::PrefPush);
        assert_eq!("hybrid0.25".parse::<Model>().unwrap(), Model::Hybrid(0.25));
        assert!("hybrid2".parse::<Model>().is_err());
        assert!("gossip".parse::<Model>().is_err());
    }

    #[test]
    fn matched_count_per_batch() {
        let c = SimConfig::steady_default();
        let plan = DeploymentPlan::draw(&c).unwrap();
        let matched = plan
            .providers
            .iter()
            .filter(|p| p.sdm.offers(&food(), &plan.ontology).unwrap())
            .count();
        assert_eq!(matched, 100);
        assert!(plan.providers[499].join_ms >= 99_000.0);
    }
}
