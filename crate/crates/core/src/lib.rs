//! Service discovery, context-aware preference prediction and lightweight
//! trust for proximity-based mobile social networks.
//!
//! - [`domain`]: peers, services, semantic types, contexts, queries, ratings.
//! - [`predictor`]: Bayesian next-query prediction from context history.
//! - [`trust`]: reputation data and recommender selection schemes.
//! - [`simnet`]: discrete-event simulation of the discovery models.
//! - [`data`]: trust graphs, synthetic records and sequence datasets.
//! - [`harness`]: experiment sweeps and reports.

pub mod data;
pub mod domain;
pub mod harness;
pub mod predictor;
pub mod simnet;
pub mod trust;

pub use domain::{
    ContextValue, DomainError, Ontology, PeerId, Query, QueryRecord, RatingLevel, SemanticType,
    ServiceDescription,
};
pub use predictor::{PredictError, Prediction, PredictionModel};
pub use simnet::{Model, SimConfig, SimError, SimResult};
pub use trust::{ReputationData, Scheme, TrustError, TrustVerdict};

use thiserror::Error;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Trust(#[from] TrustError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
    #[error("io: {0}")]
    Io(String),
}
