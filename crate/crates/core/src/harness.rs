//! Experiment orchestration: discovery sweeps, prediction accuracy curves
//! and trust scheme comparisons.
//!
//! Independent cells run on a rayon pool capped by `MSNP_SIM_THREADS`;
//! results are always assembled in input order so outputs are byte-stable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{
    classify_friends, filter_min_ratings, generate_records, trust_graph_to_rds, DataError, GeneratorSpec,
    ServiceAssignment, TrustGraph,
};
use crate::domain::{PeerId, QueryRecord, SemanticType};
use crate::predictor::{evaluate_accuracy_with, PredictError, RuleSet};
use crate::simnet::{run_model, Model, SimConfig, SimError, SimResult};
use crate::trust::{
    cpi, trust_af, trust_afoaf, trust_hef, trust_hefhef, trust_msf, trust_public, Community, ReputationData,
    Scheme, TrustError, TrustVerdict,
};

pub const THREADS_ENV: &str = "MSNP_SIM_THREADS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("training fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error("the trust graph is empty after filtering")]
    EmptyGraph,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Trust(#[from] TrustError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Runs `f` inside a pool sized by `MSNP_SIM_THREADS` (rayon's default when
/// unset or invalid).
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Fixed-schema row of a report.
pub trait ReportRow {
    fn header() -> Vec<&'static str>;
    fn fields(&self) -> Vec<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport<R> {
    pub experiment: String,
    #[serde(serialize_with = "ordered_map")]
    pub config_echo: Vec<(String, String)>,
    pub seeds: Vec<u64>,
    pub rows: Vec<R>,
}

impl<R: ReportRow + Serialize> ExperimentReport<R> {
    /// `# key = value` echo lines, then a header and one line per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# experiment = {}", self.experiment).unwrap();
        for (k, v) in &self.config_echo {
            writeln!(out, "# {k} = {v}").unwrap();
        }
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        writeln!(out, "# seeds = {}", seeds.join(",")).unwrap();
        out.push_str(&csv_rows(R::header(), self.rows.iter().map(ReportRow::fields)));
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

fn ordered_map<S: serde::Serializer>(pairs: &[(String, String)], s: S) -> Result<S::Ok, S::Error> {
    s.collect_map(pairs.iter().map(|(k, v)| (k, v)))
}

fn csv_rows(header: Vec<&str>, rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| x.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscoveryRow {
    pub n_providers: usize,
    pub model: String,
    pub makespan_ms: f64,
    pub cpu_ms: f64,
    pub ram_bytes_peak: f64,
    pub messages: f64,
    pub discovered: f64,
    pub timeouts: usize,
}

impl ReportRow for DiscoveryRow {
    fn header() -> Vec<&'static str> {
        vec![
            "n_providers",
            "model",
            "makespan_ms",
            "cpu_ms",
            "ram_bytes_peak",
            "messages",
            "discovered",
            "timeouts",
        ]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.n_providers.to_string(),
            self.model.clone(),
            self.makespan_ms.to_string(),
            self.cpu_ms.to_string(),
            self.ram_bytes_peak.to_string(),
            self.messages.to_string(),
            self.discovered.to_string(),
            self.timeouts.to_string(),
        ]
    }
}

/// One simulation run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub n_providers: usize,
    pub seed: u64,
    pub result: SimResult,
}

impl ReportRow for RunRow {
    fn header() -> Vec<&'static str> {
        vec![
            "n_providers",
            "model",
            "seed",
            "matched",
            "makespan_ms",
            "cpu_ms",
            "ram_bytes_peak",
            "messages",
            "discovered",
            "timed_out",
        ]
    }

    fn fields(&self) -> Vec<String> {
        let r = &self.result;
        vec![
            self.n_providers.to_string(),
            r.model.clone(),
            self.seed.to_string(),
            r.matched.to_string(),
            r.makespan_ms.to_string(),
            r.cpu_ms.to_string(),
            r.ram_bytes_peak.to_string(),
            r.messages.to_string(),
            r.discovered.len().to_string(),
            r.timed_out.to_string(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct DiscoverySweep {
    pub summary: ExperimentReport<DiscoveryRow>,
    pub runs: ExperimentReport<RunRow>,
}

/// Runs every `(n, model, seed)` cell; rows average over seeds.
pub fn exp_discovery_sweep(
    config_base: &SimConfig,
    n_values: &[usize],
    models: &[Model],
    seeds: &[u64],
) -> Result<DiscoverySweep, HarnessError> {
    if n_values.is_empty() {
        return Err(HarnessError::Empty("n_values"));
    }
    if models.is_empty() {
        return Err(HarnessError::Empty("models"));
    }
    if seeds.is_empty() {
        return Err(HarnessError::Empty("seeds"));
    }
    config_base.validate()?;
    let cells: Vec<(usize, Model, u64)> = n_values
        .iter()
        .flat_map(|&n| {
            models
                .iter()
                .flat_map(move |&m| seeds.iter().map(move |&s| (n, m, s)))
        })
        .collect();
    let results: Vec<Result<SimResult, SimError>> = with_pool(|| {
        cells
            .par_iter()
            .map(|&(n, model, seed)| {
                let cfg = SimConfig {
                    n_providers: n,
                    seed,
                    ..config_base.clone()
                };
                run_model(&cfg, model)
            })
            .collect()
    })?;
    let mut runs = Vec::with_capacity(cells.len());
    for (&(n, _, seed), r) in cells.iter().zip(results) {
        runs.push(RunRow {
            n_providers: n,
            seed,
            result: r?,
        });
    }
    let k = seeds.len() as f64;
    let rows = runs
        .chunks(seeds.len())
        .map(|chunk| {
            let mean = |f: &dyn Fn(&SimResult) -> f64| chunk.iter().map(|r| f(&r.result)).sum::<f64>() / k;
            DiscoveryRow {
                n_providers: chunk[0].n_providers,
                model: chunk[0].result.model.clone(),
                makespan_ms: mean(&|r| r.makespan_ms),
                cpu_ms: mean(&|r| r.cpu_ms),
                ram_bytes_peak: mean(&|r| r.ram_bytes_peak as f64),
                messages: mean(&|r| r.messages as f64),
                discovered: mean(&|r| r.discovered.len() as f64),
                timeouts: chunk.iter().filter(|r| r.result.timed_out).count(),
            }
        })
        .collect();
    let mut echo: Vec<(String, String)> = config_base
        .to_pairs()
        .into_iter()
        .filter(|(k, _)| *k != "n_providers" && *k != "seed")
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    echo.push((
        "n_values".to_string(),
        n_values
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(","),
    ));
    echo.push((
        "models".to_string(),
        models.iter().map(Model::label).collect::<Vec<_>>().join(","),
    ));
    Ok(DiscoverySweep {
        summary: ExperimentReport {
            experiment: "discovery_sweep".to_string(),
            config_echo: echo.clone(),
            seeds: seeds.to_vec(),
            rows,
        },
        runs: ExperimentReport {
            experiment: "discovery_runs".to_string(),
            config_echo: echo,
            seeds: seeds.to_vec(),
            rows: runs,
        },
    })
}

/// Where prediction records come from.
#[derive(Debug, Clone)]
pub enum RecordsSource {
    /// `n` records drawn from the generator, one draw per seed.
    Generated { spec: GeneratorSpec, n: usize },
    /// A fixed dataset; the chronological split makes seeds irrelevant.
    Fixed {
        label: String,
        records: Vec<QueryRecord>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub records: usize,
    pub fraction: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub runs: usize,
}

impl ReportRow for PredictionRow {
    fn header() -> Vec<&'static str> {
        vec!["records", "fraction", "mean_accuracy", "std_accuracy", "runs"]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.records.to_string(),
            self.fraction.to_string(),
            self.mean_accuracy.to_string(),
            self.std_accuracy.to_string(),
            self.runs.to_string(),
        ]
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Accuracy of a chronological train/test split per fraction, averaged over
/// seeds.
pub fn exp_prediction_curve(
    source: &RecordsSource,
    fractions: &[f64],
    seeds: &[u64],
    rules: &RuleSet,
) -> Result<ExperimentReport<PredictionRow>, HarnessError> {
    if fractions.is_empty() {
        return Err(HarnessError::Empty("fractions"));
    }
    if let Some(&f) = fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(HarnessError::BadFraction(f));
    }
    let (datasets, echo, used_seeds) = match source {
        RecordsSource::Generated { spec, n } => {
            if seeds.is_empty() {
                return Err(HarnessError::Empty("seeds"));
            }
            let sets = seeds
                .iter()
                .map(|&s| generate_records(spec, *n, s))
                .collect::<Result<Vec<_>, _>>()?;
            let rows: Vec<String> = spec
                .rows
                .iter()
                .map(|r| {
                    let dims: Vec<String> = spec
                        .dimensions
                        .iter()
                        .map(|d| format!("{d}={}", r.dims[d]))
                        .collect();
                    format!("{} {}", r.qid, dims.join(" "))
                })
                .collect();
            (
                sets,
                vec![
                    ("source".to_string(), "generator".to_string()),
                    ("records".to_string(), n.to_string()),
                    ("generator".to_string(), rows.join("; ")),
                ],
                seeds.to_vec(),
            )
        }
        RecordsSource::Fixed { label, records } => (
            vec![records.clone()],
            vec![
                ("source".to_string(), label.clone()),
                ("records".to_string(), records.len().to_string()),
            ],
            Vec::new(),
        ),
    };
    let cells: Vec<(usize, usize)> = (0..fractions.len())
        .flat_map(|f| (0..datasets.len()).map(move |d| (f, d)))
        .collect();
    let accs: Vec<Result<f64, PredictError>> = with_pool(|| {
        cells
            .par_iter()
            .map(|&(f, d)| evaluate_accuracy_with(&datasets[d], fractions[f], rules))
            .collect()
    })?;
    let accs = accs.into_iter().collect::<Result<Vec<f64>, _>>()?;
    let rows = accs
        .chunks(datasets.len())
        .zip(fractions)
        .map(|(chunk, &fraction)| {
            let (mean, std) = mean_std(chunk);
            PredictionRow {
                records: datasets[0].len(),
                fraction,
                mean_accuracy: mean,
                std_accuracy: std,
                runs: chunk.len(),
            }
        })
        .collect();
    let mut echo = echo;
    echo.push((
        "fractions".to_string(),
        fractions.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
    ));
    echo.push(("rules".to_string(), rules_summary(rules)));
    Ok(ExperimentReport {
        experiment: "prediction_curve".to_string(),
        config_echo: echo,
        seeds: used_seeds,
        rows,
    })
}

fn rules_summary(rules: &RuleSet) -> String {
    format!(
        "{} importance, {} filter, {} override",
        rules.importance.len(),
        rules.filters.len(),
        rules.overrides.len()
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustRow {
    pub scheme: Scheme,
    pub comparable: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
    pub mean_transactions: Option<f64>,
    pub cpi: Option<f64>,
    /// Evaluated pairs whose transaction count broke the scheme's rule.
    pub invariant_violations: usize,
}

impl ReportRow for TrustRow {
    fn header() -> Vec<&'static str> {
        vec![
            "scheme",
            "comparable",
            "correct",
            "accuracy",
            "mean_transactions",
            "cpi",
            "invariant_violations",
        ]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.scheme.to_string(),
            self.comparable.to_string(),
            self.correct.to_string(),
            fmt_opt(self.accuracy),
            fmt_opt(self.mean_transactions),
            fmt_opt(self.cpi),
            self.invariant_violations.to_string(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct TrustExperiment {
    pub min_ratings: usize,
    pub sname: String,
    pub stype: SemanticType,
}

impl Default for TrustExperiment {
    fn default() -> Self {
        Self {
            min_ratings: 10,
            sname: "profile".to_string(),
            stype: SemanticType::new("Rating"),
        }
    }
}

/// Outcome of one scheme on one `(requester, ratee)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub correct: bool,
    pub transactions: u64,
    pub invariant_ok: bool,
}

/// Everything the schemes need about one trust graph.
pub struct TrustWorld {
    pub community: Community,
    pub non_friends: BTreeMap<PeerId, BTreeSet<PeerId>>,
    pub graph: TrustGraph,
    pub setup: TrustExperiment,
}

impl TrustWorld {
    /// Filters the graph, splits friends and builds RDs.
    pub fn build(graph: &TrustGraph, setup: TrustExperiment) -> Result<Self, HarnessError> {
        let graph = filter_min_ratings(graph, setup.min_ratings);
        if graph.is_empty() {
            return Err(HarnessError::EmptyGraph);
        }
        let assignment = ServiceAssignment::Uniform(crate::domain::Service {
            sname: setup.sname.clone(),
            stype: setup.stype.clone(),
        });
        let rds = trust_graph_to_rds(&graph, &assignment)?;
        let mut community = Community::default();
        for rd in rds {
            community.insert(rd);
        }
        let mut non_friends = BTreeMap::new();
        for (id, split) in classify_friends(&graph) {
            community.friends.insert(id.clone(), split.friends);
            non_friends.insert(id, split.non_friends);
        }
        Ok(Self {
            community,
            non_friends,
            graph,
            setup,
        })
    }

    /// `(requester, ratee)` pairs to predict: every rated non-friend.
    pub fn pairs(&self) -> Vec<(&PeerId, &PeerId)> {
        self.non_friends
            .iter()
            .flat_map(|(u, nf)| nf.iter().map(move |v| (u, v)))
            .collect()
    }

    fn friends(&self, u: &PeerId) -> BTreeSet<PeerId> {
        self.community.friends.get(u).cloned().unwrap_or_default()
    }

    /// Runs `scheme` for `requester` on `provider`. `None` when the scheme
    /// has no recommender for the pair.
    pub fn evaluate(&self, scheme: Scheme, requester: &PeerId, provider: &PeerId) -> Option<PairOutcome> {
        let truth = self.graph.level(requester, provider)?;
        let (sname, stype) = (self.setup.sname.as_str(), &self.setup.stype);
        let me = self.community.rds.get(requester)?.without_provider(provider);
        let friends = self.friends(requester);
        let c = &self.community;
        let mut proximal_len = 0u64;
        let verdict: Result<TrustVerdict, TrustError> = match scheme {
            Scheme::Af => {
                let rds: Vec<&ReputationData> = friends.iter().filter_map(|f| c.rds.get(f)).collect();
                trust_af(provider, sname, &rds)
            }
            Scheme::Afoaf => trust_afoaf(requester, provider, sname, &friends, c),
            Scheme::Hef => trust_hef(&me, provider, sname, stype, None, &friends, c),
            Scheme::Hefhef => trust_hefhef(requester, provider, sname, stype, &friends, c),
            Scheme::Msf => trust_msf(&me, provider, sname, &friends, c),
            Scheme::Naive | Scheme::ExpOnly | Scheme::CreditOnly | Scheme::Proposed => {
                let proximal: Vec<&ReputationData> = self
                    .non_friends
                    .get(requester)
                    .into_iter()
                    .flatten()
                    .filter(|id| *id != provider)
                    .filter_map(|id| c.rds.get(id))
                    .collect();
                proximal_len = proximal.len() as u64;
                let public = scheme.public().expect("public scheme");
                trust_public(provider, sname, stype, &proximal, public)
            }
        };
        let v = verdict.ok()?;
        let invariant_ok = match scheme {
            Scheme::Hef | Scheme::Msf => v.transactions == 1,
            Scheme::Af => v.transactions == friends.len() as u64,
            Scheme::Naive | Scheme::ExpOnly | Scheme::CreditOnly | Scheme::Proposed => {
                v.transactions == proximal_len
            }
            Scheme::Afoaf => {
                let expect: usize = friends
                    .iter()
                    .map(|f| self.friends(f).iter().filter(|ff| *ff != requester).count())
                    .sum();
                v.transactions == expect as u64
            }
            Scheme::Hefhef => {
                let hub = &v.recommenders[0];
                v.transactions == self.friends(hub).iter().filter(|f| *f != requester).count() as u64
            }
        };
        Some(PairOutcome {
            correct: v.level() == truth,
            transactions: v.transactions,
            invariant_ok,
        })
    }
}

/// Predicts each requester's rating of each rated non-friend with every
/// scheme. Pairs a scheme cannot handle are left out of its row.
pub fn exp_trust_comparison(
    graph: &TrustGraph,
    schemes: &[Scheme],
    setup: TrustExperiment,
) -> Result<ExperimentReport<TrustRow>, HarnessError> {
    if schemes.is_empty() {
        return Err(HarnessError::Empty("schemes"));
    }
    let world = TrustWorld::build(graph, setup)?;
    let pairs = world.pairs();
    let outcomes: Vec<Vec<Option<PairOutcome>>> = with_pool(|| {
        pairs
            .par_iter()
            .map(|(u, v)| schemes.iter().map(|&s| world.evaluate(s, u, v)).collect())
            .collect()
    })?;
    let rows = schemes
        .iter()
        .enumerate()
        .map(|(i, &scheme)| {
            let done: Vec<&PairOutcome> = outcomes.iter().filter_map(|o| o[i].as_ref()).collect();
            let comparable = done.len();
            let correct = done.iter().filter(|o| o.correct).count();
            let (accuracy, mean_tx) = if comparable == 0 {
                (None, None)
            } else {
                let tx = done.iter().map(|o| o.transactions as f64).sum::<f64>() / comparable as f64;
                (Some(correct as f64 / comparable as f64), Some(tx))
            };
            TrustRow {
                scheme,
                comparable,
                correct,
                accuracy,
                mean_transactions: mean_tx,
                cpi: accuracy.zip(mean_tx).and_then(|(a, t)| cpi(a, t).ok()),
                invariant_violations: done.iter().filter(|o| !o.invariant_ok).count(),
            }
        })
        .collect();
    let users = world.community.rds.len();
    Ok(ExperimentReport {
        experiment: "trust_comparison".to_string(),
        config_echo: vec![
            ("min_ratings".to_string(), world.setup.min_ratings.to_string()),
            ("edges".to_string(), world.graph.len().to_string()),
            ("users".to_string(), users.to_string()),
            ("pairs".to_string(), pairs.len().to_string()),
            (
                "service".to_string(),
                format!("{}:{}", world.setup.sname, world.setup.stype),
            ),
        ],
        seeds: Vec::new(),
        rows,
    })
}
