//! Objective estimation: minimum-variance priors, proximity tilting, the
//! weighted reference-set estimator, and the routing decision.
//!
//! Every router in this crate estimates a model's objective at a query `x`
//! as a convex combination of reference-element values,
//! `Û(x) = Σ_i w_i(x)·V_i`. The routers differ only in how `w(x)` is chosen:
//!
//! * Base over clusters: point mass on the nearest centroid.
//! * Base over training points: uniform `1/k` on the k nearest neighbors.
//! * Prox: a prior `p(x)` tilted by `exp(-φ_i(x)/τ)` and renormalized, which
//!   is the minimizer of `Σ w_i φ_i + τ·KL(w‖p)` over the simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reference::ReferenceSet;
use crate::types::{
    ObjectiveParams, ProximityPenalty, ReferenceKind, RouterConfig, RouterMode, WeightVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltingConfig {
    /// 1/τ. Zero leaves the prior untouched.
    pub inv_tau: f64,
    pub penalty: ProximityPenalty,
}

impl TiltingConfig {
    pub fn new(inv_tau: f64) -> Self {
        Self {
            inv_tau,
            penalty: ProximityPenalty::Distance,
        }
    }
}

/// Inverse-variance weights `p_i = σ_i⁻² / Σ_j σ_j⁻²`.
pub fn min_variance_prior(variances: &[f64]) -> Result<WeightVector> {
    if variances.is_empty() {
        return Err(Error::Domain("no variances given".into()));
    }
    if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Domain(format!("variance {v} must be finite and > 0")));
    }
    WeightVector::normalized(variances.iter().enumerate().map(|(i, v)| (i, v.recip())).collect())
}

/// Query-independent cluster prior `p_i ∝ n_i / max(s_i, ε)`.
pub fn cluster_prior(reference: &ReferenceSet, epsilon_spread: f64) -> Result<WeightVector> {
    if reference.kind() != ReferenceKind::Clusters {
        return Err(Error::config("cluster prior requires a cluster reference set"));
    }
    if !(epsilon_spread.is_finite() && epsilon_spread > 0.0) {
        return Err(Error::config("epsilon_spread must be finite and > 0"));
    }
    WeightVector::normalized(
        reference
            .stats()
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.count as f64 / s.spread.max(epsilon_spread)))
            .collect(),
    )
}

/// Uniform `1/k` over the given neighbor indices.
pub fn knn_prior(neighbors: &[usize], k: usize) -> Result<WeightVector> {
    if neighbors.len() != k {
        return Err(Error::Internal(format!(
            "expected {k} neighbors, got {}",
            neighbors.len()
        )));
    }
    WeightVector::uniform(neighbors)
}

/// Exponentially tilt `prior` by `penalties`, which must be aligned with
/// `prior.entries()`.
///
/// Computed in the log domain with max-subtraction, so the largest tilted
/// intensity is exactly its prior weight times one and the normalizer is
/// never zero.
pub fn tilt_weights(
    prior: &WeightVector,
    penalties: &[f64],
    config: &TiltingConfig,
) -> Result<WeightVector> {
    if penalties.len() != prior.support_len() {
        return Err(Error::Internal(format!(
            "{} penalties for a prior with support {}",
            penalties.len(),
            prior.support_len()
        )));
    }
    if !(config.inv_tau.is_finite() && config.inv_tau >= 0.0) {
        return Err(Error::config("inv_tau must be finite and >= 0"));
    }
    if penalties.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain("proximity penalties must be finite".into()));
    }
    if config.inv_tau == 0.0 {
        return Ok(prior.clone());
    }
    let logs: Vec<f64> = prior
        .entries()
        .iter()
        .zip(penalties)
        .map(|(&(_, p), &phi)| p.ln() - config.inv_tau * phi)
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    WeightVector::normalized(
        prior
            .entries()
            .iter()
            .zip(&logs)
            .map(|(&(i, _), &l)| (i, (l - max).exp()))
            .collect(),
    )
}

pub fn effective_sample_size(weights: &WeightVector) -> f64 {
    weights.effective_sample_size()
}

/// Weighted means of the reference summaries: `Σ w_i·acc_i` and
/// `Σ w_i·cost_i` per model. Affine in λ, so one aggregate serves a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSummary {
    pub acc: Vec<f64>,
    pub cost: Vec<f64>,
}

impl AggregateSummary {
    pub fn estimates(&self, params: ObjectiveParams) -> Vec<f64> {
        self.acc
            .iter()
            .zip(&self.cost)
            .map(|(a, c)| a - params.lambda() * c)
            .collect()
    }

    pub fn best_model(&self, params: ObjectiveParams) -> usize {
        argmax(&self.estimates(params))
    }
}

pub fn aggregate(weights: &WeightVector, reference: &ReferenceSet) -> Result<AggregateSummary> {
    let m = reference.pool().len();
    let mut acc = vec![0.0; m];
    let mut cost = vec![0.0; m];
    for &(i, w) in weights.entries() {
        let stats = reference.stats().get(i).ok_or_else(|| {
            Error::Consistency(format!("weight on element {i} outside a {}-element reference", reference.len()))
        })?;
        for j in 0..m {
            acc[j] += w * stats.mean_acc[j];
            cost[j] += w * stats.mean_cost[j];
        }
    }
    Ok(AggregateSummary { acc, cost })
}

/// `Û^(m) = Σ_i w_i·(mean_acc_i[m] − λ·mean_cost_i[m])`, in pool order.
pub fn estimate_objectives(
    weights: &WeightVector,
    reference: &ReferenceSet,
    params: ObjectiveParams,
) -> Result<Vec<f64>> {
    Ok(aggregate(weights, reference)?.estimates(params))
}

/// Index of the largest value; ties go to the earliest (cheapest) model.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEstimate {
    pub model: String,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub per_model: Vec<ModelEstimate>,
    pub weights: WeightVector,
    pub ess: f64,
    pub chosen: String,
    pub chosen_index: usize,
}

/// A configured router over a borrowed reference set.
///
/// The cluster prior does not depend on the query, so it is computed once
/// here rather than per call.
#[derive(Debug, Clone)]
pub struct Router<'a> {
    reference: &'a ReferenceSet,
    config: RouterConfig,
    prior: Option<WeightVector>,
}

impl<'a> Router<'a> {
    pub fn new(reference: &'a ReferenceSet, config: RouterConfig) -> Result<Self> {
        config.validate()?;
        if config.reference_kind != reference.kind() {
            return Err(Error::config(format!(
                "router configured for {:?} but reference set is {:?}",
                config.reference_kind,
                reference.kind()
            )));
        }
        if config.metric != reference.metric() {
            return Err(Error::config(format!(
                "router metric {:?} differs from reference metric {:?}",
                config.metric,
                reference.metric()
            )));
        }
        if config.reference_kind == ReferenceKind::TrainingPoints && config.neighbors > reference.len() {
            return Err(Error::config(format!(
                "k={} neighbors but only {} training points",
                config.neighbors,
                reference.len()
            )));
        }
        let prior = match (config.mode, config.reference_kind) {
            (RouterMode::Prox, ReferenceKind::Clusters) => {
                Some(cluster_prior(reference, config.epsilon_spread)?)
            }
            _ => None,
        };
        Ok(Self {
            reference,
            config,
            prior,
        })
    }

    pub fn config(&self) -> &RouterConfig {
        &self.config
    }

    pub fn reference(&self) -> &ReferenceSet {
        self.reference
    }

    fn tilting(&self) -> TiltingConfig {
        TiltingConfig {
            inv_tau: self.config.inv_tau,
            penalty: self.config.penalty,
        }
    }

    /// Aggregation weights `w(x)` for a query encoding.
    pub fn weights(&self, x: &[f32]) -> Result<WeightVector> {
        let index = self.reference.index();
        match (self.config.mode, self.config.reference_kind) {
            (RouterMode::Base, ReferenceKind::Clusters) => {
                let d = index.distances(x)?;
                let nearest = d
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                    .map(|(i, _)| i)
                    .ok_or_else(|| Error::Internal("empty reference".into()))?;
                Ok(WeightVector::point_mass(nearest))
            }
            (RouterMode::Prox, ReferenceKind::Clusters) => {
                let prior = self.prior.as_ref().expect("cluster prior computed at construction");
                let d = index.distances(x)?;
                let phi: Vec<f64> = prior
                    .entries()
                    .iter()
                    .map(|&(i, _)| self.config.penalty.apply(d[i]))
                    .collect();
                tilt_weights(prior, &phi, &self.tilting())
            }
            (mode, ReferenceKind::TrainingPoints) => {
                let k = self.config.neighbors;
                let mut neighbors = index.query(x, k)?;
                neighbors.sort_unstable_by_key(|n| n.index);
                let ids: Vec<usize> = neighbors.iter().map(|n| n.index).collect();
                match mode {
                    RouterMode::Base => WeightVector::uniform(&ids),
                    RouterMode::Prox => {
                        let prior = knn_prior(&ids, k)?;
                        let phi: Vec<f64> = neighbors
                            .iter()
                            .map(|n| self.config.penalty.apply(n.distance))
                            .collect();
                        tilt_weights(&prior, &phi, &self.tilting())
                    }
                }
            }
        }
    }

    pub fn aggregate(&self, x: &[f32]) -> Result<AggregateSummary> {
        aggregate(&self.weights(x)?, self.reference)
    }

    pub fn route(&self, x: &[f32], params: ObjectiveParams) -> Result<EstimateReport> {
        let weights = self.weights(x)?;
        let estimates = aggregate(&weights, self.reference)?.estimates(params);
        let chosen_index = argmax(&estimates);
        let pool = self.reference.pool();
        Ok(EstimateReport {
            per_model: pool
                .ids()
                .zip(&estimates)
                .map(|(id, &estimate)| ModelEstimate {
                    model: id.to_string(),
                    estimate,
                })
                .collect(),
            ess: weights.effective_sample_size(),
            weights,
            chosen: pool.id(chosen_index).to_string(),
            chosen_index,
        })
    }
}

/// One-shot routing; builds a [`Router`] for a single query.
pub fn route(
    x: &[f32],
    reference: &ReferenceSet,
    config: &RouterConfig,
    params: ObjectiveParams,
) -> Result<EstimateReport> {
    Router::new(reference, *config)?.route(x, params)
}
