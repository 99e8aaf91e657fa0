//! Domain types shared by every other module.
//!
//! All of these are immutable once constructed; the validating constructors
//! are the only way to obtain them, so downstream code can rely on their
//! invariants without re-checking.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DistanceMetric;

/// Absolute tolerance on the sum of a [`WeightVector`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// A sentence-encoder output vector. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct QueryEncoding(Vec<f32>);

impl QueryEncoding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("encoding has no entries".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("encoding has a non-finite entry".into()));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl TryFrom<Vec<f32>> for QueryEncoding {
    type Error = Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<QueryEncoding> for Vec<f32> {
    fn from(e: QueryEncoding) -> Self {
        e.0
    }
}

impl AsRef<[f32]> for QueryEncoding {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// One model in the pool. Prices are dollars per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    pub price_in: f64,
    pub price_out: f64,
}

impl ModelSpec {
    pub fn new(id: impl Into<String>, price_in: f64, price_out: f64) -> Self {
        Self {
            id: id.into(),
            price_in,
            price_out,
        }
    }

    /// Build from prices quoted in dollars per million tokens.
    pub fn per_million(id: impl Into<String>, price_in: f64, price_out: f64) -> Self {
        Self::new(id, price_in * 1e-6, price_out * 1e-6)
    }

    pub fn total_price(&self) -> f64 {
        self.price_in + self.price_out
    }
}

/// Ordered set of candidate models.
///
/// Construction stable-sorts the models cheapest-first by
/// `price_in + price_out`. Every per-model vector in the crate is aligned to
/// this order, and argmax ties resolve to the earliest (cheapest) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ModelSpec>", into = "Vec<ModelSpec>")]
pub struct ModelPool {
    models: Vec<ModelSpec>,
}

impl ModelPool {
    pub fn new(mut models: Vec<ModelSpec>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::config("model pool is empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &models {
            if !seen.insert(m.id.as_str()) {
                return Err(Error::config(format!("duplicate model id '{}'", m.id)));
            }
            if !(m.price_in.is_finite() && m.price_out.is_finite())
                || m.price_in < 0.0
                || m.price_out < 0.0
            {
                return Err(Error::config(format!("model '{}' has an invalid price", m.id)));
            }
        }
        models.sort_by(|a, b| a.total_price().total_cmp(&b.total_price()));
        Ok(Self { models })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn get(&self, index: usize) -> Option<&ModelSpec> {
        self.models.get(index)
    }

    pub fn id(&self, index: usize) -> &str {
        &self.models[index].id
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.models.iter().position(|m| m.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.models.iter().map(|m| m.id.as_str())
    }

    /// Index of the highest total-price model (the last one in pool order).
    pub fn most_expensive(&self) -> usize {
        self.models.len() - 1
    }
}

impl TryFrom<Vec<ModelSpec>> for ModelPool {
    type Error = Error;

    fn try_from(models: Vec<ModelSpec>) -> Result<Self> {
        Self::new(models)
    }
}

impl From<ModelPool> for Vec<ModelSpec> {
    fn from(p: ModelPool) -> Self {
        p.models
    }
}

/// Observed outcome of one model on one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub acc: f64,
    pub cost: f64,
}

impl Observation {
    pub fn new(acc: f64, cost: f64) -> Result<Self> {
        if !acc.is_finite() || !(0.0..=1.0).contains(&acc) {
            return Err(Error::Domain(format!("accuracy {acc} outside [0, 1]")));
        }
        if !cost.is_finite() || cost < 0.0 {
            return Err(Error::Domain(format!("cost {cost} must be finite and >= 0")));
        }
        Ok(Self { acc, cost })
    }

    pub fn objective(&self, params: ObjectiveParams) -> f64 {
        self.acc - params.lambda() * self.cost
    }
}

/// One query with its encoding and per-model observations, aligned to the
/// pool order of the corpus it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub query_id: String,
    pub task: String,
    pub encoding: QueryEncoding,
    pub obs: Vec<Observation>,
}

impl QueryRecord {
    pub fn new(
        query_id: impl Into<String>,
        task: impl Into<String>,
        encoding: QueryEncoding,
        obs: Vec<Observation>,
    ) -> Self {
        Self {
            query_id: query_id.into(),
            task: task.into(),
            encoding,
            obs,
        }
    }

    /// Build from an id-keyed map; the map must cover exactly the pool.
    pub fn from_map(
        query_id: impl Into<String>,
        task: impl Into<String>,
        encoding: QueryEncoding,
        per_model: &HashMap<String, Observation>,
        pool: &ModelPool,
    ) -> Result<Self> {
        let query_id = query_id.into();
        if let Some(unknown) = per_model.keys().find(|k| pool.index_of(k).is_none()) {
            return Err(Error::Consistency(format!(
                "record '{query_id}' observes unknown model '{unknown}'"
            )));
        }
        let obs = pool
            .ids()
            .map(|id| {
                per_model.get(id).copied().ok_or_else(|| {
                    Error::Consistency(format!("record '{query_id}' is missing model '{id}'"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(query_id, task, encoding, obs))
    }

    pub fn objective(&self, model: usize, params: ObjectiveParams) -> f64 {
        self.obs[model].objective(params)
    }
}

/// The accuracy-vs-cost tradeoff weight λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ObjectiveParams {
    lambda: f64,
}

impl ObjectiveParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Domain(format!("lambda {lambda} must be finite and >= 0")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl TryFrom<f64> for ObjectiveParams {
    type Error = Error;

    fn try_from(lambda: f64) -> Result<Self> {
        Self::new(lambda)
    }
}

impl From<ObjectiveParams> for f64 {
    fn from(p: ObjectiveParams) -> Self {
        p.lambda
    }
}

/// `acc - λ·cost`, the scalar a router maximizes.
pub fn objective_value(acc: f64, cost: f64, params: ObjectiveParams) -> Result<f64> {
    if !acc.is_finite() || !cost.is_finite() {
        return Err(Error::Domain("objective inputs must be finite".into()));
    }
    Ok(acc - params.lambda() * cost)
}

/// Sparse aggregation weights on the probability simplex.
///
/// Entries are kept sorted by element index with no duplicates, and only
/// strictly positive weights are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    entries: Vec<(usize, f64)>,
}

impl WeightVector {
    /// Validate already-normalized weights.
    pub fn from_entries(mut entries: Vec<(usize, f64)>) -> Result<Self> {
        if entries.iter().any(|&(_, w)| !w.is_finite() || w < 0.0) {
            return Err(Error::Domain("weights must be finite and nonnegative".into()));
        }
        entries.sort_by_key(|&(i, _)| i);
        if entries.windows(2).any(|p| p[0].0 == p[1].0) {
            return Err(Error::Internal("duplicate index in weight vector".into()));
        }
        let sum: f64 = entries.iter().map(|&(_, w)| w).sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Domain(format!("weights sum to {sum}, not 1")));
        }
        entries.retain(|&(_, w)| w > 0.0);
        Ok(Self { entries })
    }

    /// Normalize nonnegative intensities onto the simplex.
    pub(crate) fn normalized(mut entries: Vec<(usize, f64)>) -> Result<Self> {
        let total: f64 = entries.iter().map(|&(_, w)| w).sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Internal(format!("cannot normalize intensities summing to {total}")));
        }
        for e in &mut entries {
            e.1 /= total;
        }
        entries.sort_by_key(|&(i, _)| i);
        entries.retain(|&(_, w)| w > 0.0);
        Ok(Self { entries })
    }

    pub fn point_mass(index: usize) -> Self {
        Self {
            entries: vec![(index, 1.0)],
        }
    }

    /// Equal weight on every listed index.
    pub fn uniform(indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Domain("uniform weights need at least one index".into()));
        }
        let w = 1.0 / indices.len() as f64;
        let mut entries: Vec<_> = indices.iter().map(|&i| (i, w)).collect();
        entries.sort_by_key(|&(i, _)| i);
        if entries.windows(2).any(|p| p[0].0 == p[1].0) {
            return Err(Error::Internal("duplicate index in weight vector".into()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w).sum()
    }

    /// `(Σw)² / Σw²`; equals `1 / Σw²` on the simplex.
    pub fn effective_sample_size(&self) -> f64 {
        let sum = self.sum();
        let sq: f64 = self.entries.iter().map(|&(_, w)| w * w).sum();
        if sq == 0.0 {
            0.0
        } else {
            sum * sum / sq
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterMode {
    /// Hard nearest-centroid assignment, or uniform average over k neighbors.
    Base,
    /// Prior weights exponentially tilted by proximity.
    Prox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Clusters,
    TrainingPoints,
}

/// Maps a distance to a proximity penalty φ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximityPenalty {
    #[default]
    Distance,
    SquaredDistance,
}

impl ProximityPenalty {
    pub fn apply(self, distance: f64) -> f64 {
        match self {
            Self::Distance => distance,
            Self::SquaredDistance => distance * distance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouterConfig {
    pub mode: RouterMode,
    pub reference_kind: ReferenceKind,
    /// Number of clusters K.
    pub clusters: usize,
    /// Number of neighbors k.
    pub neighbors: usize,
    /// 1/τ.
    pub inv_tau: f64,
    pub metric: DistanceMetric,
    /// Floor applied to cluster spread before forming n/s priors.
    pub epsilon_spread: f64,
    #[serde(default)]
    pub penalty: ProximityPenalty,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            mode: RouterMode::Prox,
            reference_kind: ReferenceKind::Clusters,
            clusters: 32,
            neighbors: 100,
            inv_tau: 20.0,
            metric: DistanceMetric::Cosine,
            epsilon_spread: 1e-6,
            penalty: ProximityPenalty::Distance,
        }
    }
}

impl RouterConfig {
    pub fn kmeans(mode: RouterMode) -> Self {
        Self {
            mode,
            reference_kind: ReferenceKind::Clusters,
            ..Self::default()
        }
    }

    pub fn knn(mode: RouterMode) -> Self {
        Self {
            mode,
            reference_kind: ReferenceKind::TrainingPoints,
            ..Self::default()
        }
    }

    pub fn with_inv_tau(mut self, inv_tau: f64) -> Self {
        self.inv_tau = inv_tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::config("number of clusters must be >= 1"));
        }
        if self.neighbors == 0 {
            return Err(Error::config("number of neighbors must be >= 1"));
        }
        if !self.inv_tau.is_finite() || self.inv_tau < 0.0 {
            return Err(Error::config("inv_tau must be finite and >= 0"));
        }
        if !(self.epsilon_spread.is_finite() && self.epsilon_spread > 0.0) {
            return Err(Error::config("epsilon_spread must be finite and > 0"));
        }
        Ok(())
    }
}
