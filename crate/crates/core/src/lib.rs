//! Nonparametric query routing over a pool of language models.
//!
//! A router summarizes each model's accuracy and cost on a reference set
//! built from training queries, then estimates `acc - λ·cost` at a new query
//! as a weighted average over nearby reference elements.

pub mod bench;
pub mod data;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod geometry;
pub mod reference;
pub mod types;

pub use error::{Error, Result, ValidationKind};
pub use estimator::{EstimateReport, ModelEstimate, Router, TiltingConfig};
pub use geometry::DistanceMetric;
pub use reference::{
    build_cluster_reference, build_point_reference, kmeans_fit, ClusteringResult, KMeansParams,
    NeighborIndex, ReferenceSet,
};
pub use types::{
    ModelPool, ModelSpec, ObjectiveParams, Observation, ProximityPenalty, QueryEncoding,
    QueryRecord, ReferenceKind, RouterConfig, RouterMode, WeightVector,
};
pub use data::{
    load_corpus, make_split, save_corpus, synth_generate, Corpus, Scenario, SplitSpec,
    SyntheticConfig, SyntheticOracle,
};
pub use eval::{CurvePoint, JaccardReport, RoutingPolicy, SweepResult};
