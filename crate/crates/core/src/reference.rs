//! Reference sets: KMeans cluster summaries and the exact neighbor index
//! over training encodings.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, DistanceMetric, MIN_NORM};
use crate::types::{ModelPool, ModelSpec, ObjectiveParams, QueryRecord, ReferenceKind};

pub const DEFAULT_SEED: u64 = 42;
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub clusters: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once no centroid moves more than `rel_tol` times the RMS norm
    /// of the data.
    pub rel_tol: f64,
}

impl KMeansParams {
    pub fn new(clusters: usize) -> Self {
        Self {
            clusters,
            seed: DEFAULT_SEED,
            max_iters: 100,
            rel_tol: 1e-4,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    /// Each centroid is the exact mean of its assigned members.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Within-cluster SSE after every centroid update.
    pub inertia_history: Vec<f64>,
}

impl ClusteringResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist_mixed(x: &[f32], c: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let d = f64::from(a) - b;
            d * d
        })
        .sum()
}

fn nearest_centroid(x: &[f32], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist_mixed(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Lloyd's algorithm on raw encodings with k-means++ seeding.
///
/// Assignment uses squared Euclidean distance regardless of the metric the
/// resulting reference set will use. Empty clusters are refilled with the
/// point farthest from its current centroid.
pub fn kmeans_fit(records: &[QueryRecord], params: &KMeansParams) -> Result<ClusteringResult> {
    let points: Vec<&[f32]> = records.iter().map(|r| r.encoding.as_slice()).collect();
    kmeans_fit_points(&points, params)
}

pub fn kmeans_fit_points(points: &[&[f32]], params: &KMeansParams) -> Result<ClusteringResult> {
    let k = params.clusters;
    if k == 0 {
        return Err(Error::config("KMeans needs at least one cluster"));
    }
    if points.len() < k {
        return Err(Error::config(format!(
            "KMeans with K={k} needs at least {k} records, got {}",
            points.len()
        )));
    }
    if !(params.rel_tol.is_finite() && params.rel_tol >= 0.0) {
        return Err(Error::config("rel_tol must be finite and >= 0"));
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            found: bad.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);

    let scale = {
        let ms: f64 = points.iter().map(|p| geometry::dot(p, p)).sum::<f64>() / points.len() as f64;
        if ms.sqrt() > MIN_NORM { ms.sqrt() } else { 1.0 }
    };

    let mut assignments: Vec<usize> = Vec::new();
    let mut inertia_history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iters {
        iterations += 1;
        let nearest: Vec<(usize, f64)> = points
            .par_iter()
            .map(|p| nearest_centroid(p, &centroids))
            .collect();
        let mut next: Vec<usize> = nearest.iter().map(|&(c, _)| c).collect();
        repair_empty_clusters(points, &mut next, &mut centroids, &nearest);

        let updated = cluster_means(points, &next, k, dim);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| {
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max);
        let unchanged = next == assignments;
        centroids = updated;
        assignments = next;
        inertia_history.push(sse(points, &assignments, &centroids));

        if unchanged || shift <= params.rel_tol * scale {
            converged = true;
            break;
        }
    }

    Ok(ClusteringResult {
        centroids,
        assignments,
        iterations,
        converged,
        inertia_history,
    })
}

fn plus_plus_init(points: &[&[f32]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let to_f64 = |p: &[f32]| p.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![to_f64(points[first])];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist_mixed(p, &centroids[0])).collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            // Rounding can exhaust the walk; fall back to the last candidate.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            // Every point coincides with a chosen center; take any unused one.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = to_f64(points[pick]);
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(sq_dist_mixed(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn repair_empty_clusters(
    points: &[&[f32]],
    assignments: &mut [usize],
    centroids: &mut [Vec<f64>],
    nearest: &[(usize, f64)],
) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    let mut dist: Vec<f64> = nearest.iter().map(|&(_, d)| d).collect();
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let donor = (0..points.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
        let Some(i) = donor else { break };
        sizes[assignments[i]] -= 1;
        assignments[i] = c;
        sizes[c] = 1;
        dist[i] = 0.0;
        centroids[c] = points[i].iter().map(|&v| f64::from(v)).collect();
    }
}

fn cluster_means(points: &[&[f32]], assignments: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, &v) in sums[a].iter_mut().zip(p.iter()) {
            *s += f64::from(v);
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            let inv = n as f64;
            s.iter_mut().for_each(|v| *v /= inv);
        }
    }
    sums
}

fn sse(points: &[&[f32]], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist_mixed(p, &centroids[a]))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Exact brute-force nearest-neighbor search over a flat `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    dim: usize,
    metric: DistanceMetric,
    data: Vec<f32>,
    norms: Vec<f64>,
}

impl NeighborIndex {
    pub fn new<'a, I>(encodings: I, metric: DistanceMetric) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f32]>,
    {
        let mut iter = encodings.into_iter().peekable();
        let dim = iter.peek().map(|e| e.len()).unwrap_or(0);
        let mut data = Vec::new();
        let mut norms = Vec::new();
        for (i, e) in iter.enumerate() {
            if e.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: e.len(),
                });
            }
            let n = geometry::norm(e);
            if metric == DistanceMetric::Cosine && n <= MIN_NORM {
                return Err(Error::Degenerate(format!(
                    "reference vector {i} has zero norm under cosine distance"
                )));
            }
            data.extend_from_slice(e);
            norms.push(n);
        }
        Ok(Self {
            dim,
            metric,
            data,
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.len())
    }

    /// Bytes held by the stored encodings.
    pub fn encoding_bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }

    fn query_norm(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: x.len(),
            });
        }
        let n = geometry::norm(x);
        if self.metric == DistanceMetric::Cosine && n <= MIN_NORM {
            return Err(Error::Degenerate("query encoding has zero norm".into()));
        }
        Ok(n)
    }

    /// Distance from `x` to every stored vector, in index order.
    pub fn distances(&self, x: &[f32]) -> Result<Vec<f64>> {
        let nx = self.query_norm(x)?;
        Ok(self
            .vectors()
            .zip(&self.norms)
            .map(|(v, &nv)| self.metric.distance_prenormed(x, nx, v, nv))
            .collect())
    }

    /// The `k` nearest stored vectors, ascending by distance; ties go to the
    /// lower index.
    pub fn query(&self, x: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        if k > self.len() {
            return Err(Error::config(format!(
                "requested {k} neighbors from an index of {}",
                self.len()
            )));
        }
        let mut all: Vec<Neighbor> = self
            .distances(x)?
            .into_iter()
            .enumerate()
            .map(|(index, distance)| Neighbor { index, distance })
            .collect();
        let order = |a: &Neighbor, b: &Neighbor| {
            a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index))
        };
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, order);
            all.truncate(k);
        }
        all.sort_unstable_by(order);
        Ok(all)
    }
}

pub fn query_neighbors(index: &NeighborIndex, x: &[f32], k: usize) -> Result<Vec<Neighbor>> {
    index.query(x, k)
}

/// Per-element accuracy/cost summary. `V(λ) = mean_acc - λ·mean_cost`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementStats {
    pub mean_acc: Vec<f64>,
    pub mean_cost: Vec<f64>,
    pub count: usize,
    pub spread: f64,
}

impl ElementStats {
    #[inline]
    pub fn value(&self, model: usize, params: ObjectiveParams) -> f64 {
        self.mean_acc[model] - params.lambda() * self.mean_cost[model]
    }
}

/// Borrowed view of one reference element.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceElement<'a> {
    pub index: usize,
    pub center: &'a [f32],
    pub stats: &'a ElementStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    kind: ReferenceKind,
    pool: ModelPool,
    index: NeighborIndex,
    stats: Vec<ElementStats>,
}

impl ReferenceSet {
    pub fn new(
        kind: ReferenceKind,
        pool: ModelPool,
        centers: &[Vec<f32>],
        stats: Vec<ElementStats>,
        metric: DistanceMetric,
    ) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if centers.len() != stats.len() {
            return Err(Error::Internal("centers and stats differ in length".into()));
        }
        for (i, s) in stats.iter().enumerate() {
            if s.mean_acc.len() != pool.len() || s.mean_cost.len() != pool.len() {
                return Err(Error::Consistency(format!(
                    "element {i} does not cover the {}-model pool",
                    pool.len()
                )));
            }
            if s.count == 0 || !(s.spread.is_finite() && s.spread >= 0.0) {
                return Err(Error::Consistency(format!("element {i} has invalid count or spread")));
            }
        }
        let index = NeighborIndex::new(centers.iter().map(Vec::as_slice), metric)?;
        Ok(Self {
            kind,
            pool,
            index,
            stats,
        })
    }

    pub fn kind(&self) -> ReferenceKind {
        self.kind
    }

    pub fn metric(&self) -> DistanceMetric {
        self.index.metric()
    }

    pub fn pool(&self) -> &ModelPool {
        &self.pool
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn stats(&self) -> &[ElementStats] {
        &self.stats
    }

    pub fn element(&self, i: usize) -> ReferenceElement<'_> {
        ReferenceElement {
            index: i,
            center: self.index.vector(i),
            stats: &self.stats[i],
        }
    }

    pub fn elements(&self) -> impl Iterator<Item = ReferenceElement<'_>> {
        (0..self.len()).map(move |i| self.element(i))
    }

    /// Payload bytes: stored encodings plus per-element summaries.
    pub fn memory_footprint(&self) -> usize {
        let per_element = self.pool.len() * 2 * std::mem::size_of::<f64>()
            + std::mem::size_of::<usize>()
            + std::mem::size_of::<f64>();
        self.index.encoding_bytes() + self.len() * per_element
    }

    pub fn to_artifact(&self) -> ReferenceArtifact {
        ReferenceArtifact {
            format_version: ARTIFACT_VERSION,
            kind: self.kind,
            metric: self.metric(),
            dim: self.dim(),
            models: self.pool.models().to_vec(),
            elements: self
                .elements()
                .map(|e| ArtifactElement {
                    center: e.center.to_vec(),
                    stats: e.stats.clone(),
                })
                .collect(),
        }
    }

    pub fn from_artifact(artifact: ReferenceArtifact) -> Result<Self> {
        if artifact.format_version != ARTIFACT_VERSION {
            return Err(Error::Format(format!(
                "unsupported reference artifact version {}",
                artifact.format_version
            )));
        }
        let pool = ModelPool::new(artifact.models)?;
        let (centers, stats): (Vec<_>, Vec<_>) =
            artifact.elements.into_iter().map(|e| (e.center, e.stats)).unzip();
        if let Some(c) = centers.iter().find(|c| c.len() != artifact.dim) {
            return Err(Error::Dimension {
                expected: artifact.dim,
                found: c.len(),
            });
        }
        Self::new(artifact.kind, pool, &centers, stats, artifact.metric)
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, &self.to_artifact()).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let artifact: ReferenceArtifact =
            serde_json::from_reader(reader).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_artifact(artifact)
    }
}

/// Serialized form of a [`ReferenceSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceArtifact {
    pub format_version: u32,
    pub kind: ReferenceKind,
    pub metric: DistanceMetric,
    pub dim: usize,
    pub models: Vec<ModelSpec>,
    pub elements: Vec<ArtifactElement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactElement {
    pub center: Vec<f32>,
    #[serde(flatten)]
    pub stats: ElementStats,
}

fn member_stats(pool: &ModelPool, members: &[&QueryRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = pool.len();
    let mut acc = vec![0.0; m];
    let mut cost = vec![0.0; m];
    for r in members {
        if r.obs.len() != m {
            return Err(Error::Consistency(format!(
                "record '{}' has {} observations for a {m}-model pool",
                r.query_id,
                r.obs.len()
            )));
        }
        for (j, o) in r.obs.iter().enumerate() {
            acc[j] += o.acc;
            cost[j] += o.cost;
        }
    }
    let n = members.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    cost.iter_mut().for_each(|v| *v /= n);
    Ok((acc, cost))
}

/// One element per cluster: centroid, member-mean accuracy and cost, member
/// count, and mean metric distance of members from the centroid.
pub fn build_cluster_reference(
    pool: &ModelPool,
    records: &[QueryRecord],
    clustering: &ClusteringResult,
    metric: DistanceMetric,
) -> Result<ReferenceSet> {
    if clustering.assignments.len() != records.len() {
        return Err(Error::Consistency(format!(
            "clustering covers {} records, corpus has {}",
            clustering.assignments.len(),
            records.len()
        )));
    }
    let k = clustering.centroids.len();
    let mut members: Vec<Vec<&QueryRecord>> = vec![Vec::new(); k];
    for (r, &a) in records.iter().zip(&clustering.assignments) {
        if a >= k {
            return Err(Error::Consistency(format!("assignment {a} out of range for K={k}")));
        }
        members[a].push(r);
    }
    let centers: Vec<Vec<f32>> = clustering
        .centroids
        .iter()
        .map(|c| c.iter().map(|&v| v as f32).collect())
        .collect();
    let mut stats = Vec::with_capacity(k);
    for (i, group) in members.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::Consistency(format!("cluster {i} has no members")));
        }
        let (mean_acc, mean_cost) = member_stats(pool, group)?;
        let spread = group
            .iter()
            .map(|r| metric.distance(r.encoding.as_slice(), &centers[i]))
            .sum::<Result<f64>>()?
            / group.len() as f64;
        stats.push(ElementStats {
            mean_acc,
            mean_cost,
            count: group.len(),
            spread,
        });
    }
    ReferenceSet::new(ReferenceKind::Clusters, pool.clone(), &centers, stats, metric)
}

/// One element per training record, with `n = 1` and zero spread.
pub fn build_point_reference(
    pool: &ModelPool,
    records: &[QueryRecord],
    metric: DistanceMetric,
) -> Result<ReferenceSet> {
    if records.is_empty() {
        return Err(Error::config("cannot build a neighbor reference from an empty corpus"));
    }
    let centers: Vec<Vec<f32>> = records.iter().map(|r| r.encoding.as_slice().to_vec()).collect();
    let stats = records
        .iter()
        .map(|r| {
            let (mean_acc, mean_cost) = member_stats(pool, &[r])?;
            Ok(ElementStats {
                mean_acc,
                mean_cost,
                count: 1,
                spread: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ReferenceSet::new(ReferenceKind::TrainingPoints, pool.clone(), &centers, stats, metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ModelSpec, Observation, QueryEncoding};
    use rand_distr::{Distribution, StandardNormal};

    fn pool2() -> ModelPool {
        ModelPool::new(vec![ModelSpec::new("a", 0.0, 0.0), ModelSpec::new("b", 1.0, 1.0)]).unwrap()
    }

    fn rec(id: usize, enc: Vec<f32>, acc: [f64; 2], cost: [f64; 2]) -> QueryRecord {
        QueryRecord::new(
            format!("q{id}"),
            "t",
            QueryEncoding::new(enc).unwrap(),
            vec![
                Observation::new(acc[0], cost[0]).unwrap(),
                Observation::new(acc[1], cost[1]).unwrap(),
            ],
        )
    }

    fn random_records(n: usize, d: usize, seed: u64) -> Vec<QueryRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let enc: Vec<f32> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let a: f64 = rng.random();
                let c: f64 = rng.random::<f64>() * 1e-3;
                rec(i, enc, [a, 1.0 - a], [c, 2.0 * c])
            })
            .collect()
    }

    #[test]
    fn two_groups_recover_separated_centroids() {
        let recs: Vec<_> = [[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]]
            .iter()
            .enumerate()
            .map(|(i, p)| rec(i, p.to_vec(), [0.5, 0.5], [0.0, 0.0]))
            .collect();

        // Exhaustive oracle: among all 2-partitions, the minimum SSE split.
        let pts: Vec<[f64; 2]> = recs
            .iter()
            .map(|r| [r.encoding.as_slice()[0] as f64, r.encoding.as_slice()[1] as f64])
            .collect();
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 4) - 1 {
            let mut total = 0.0;
            for side in [true, false] {
                let group: Vec<_> = (0..4).filter(|&i| ((mask >> i) & 1 == 1) == side).collect();
                let mx = group.iter().map(|&i| pts[i][0]).sum::<f64>() / group.len() as f64;
                let my = group.iter().map(|&i| pts[i][1]).sum::<f64>() / group.len() as f64;
                total += group.iter().map(|&i| (pts[i][0] - mx).powi(2) + (pts[i][1] - my).powi(2)).sum::<f64>();
            }
            if total < best.0 {
                best = (total, mask);
            }
        }
        assert!(best.1 == 0b0011 || best.1 == 0b1100);

        let result = kmeans_fit(&recs, &KMeansParams::new(2)).unwrap();
        let mut cents = result.centroids.clone();
        cents.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cents, vec![vec![0.0, 0.5], vec![10.0, 10.5]]);
        assert!(result.converged);
        assert!((result.inertia() - best.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let recs = random_records(37, 5, 1);
        let result = kmeans_fit(&recs, &KMeansParams::new(1)).unwrap();
        for j in 0..5 {
            let mean = recs.iter().map(|r| r.encoding.as_slice()[j] as f64).sum::<f64>() / 37.0;
            assert!((result.centroids[0][j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn k_equal_n_gives_singletons() {
        let recs = random_records(9, 3, 2);
        let result = kmeans_fit(&recs, &KMeansParams::new(9)).unwrap();
        assert_eq!(result.cluster_sizes(), vec![1; 9]);
        let reference =
            build_cluster_reference(&pool2(), &recs, &result, DistanceMetric::Euclidean).unwrap();
        for e in reference.elements() {
            assert_eq!(e.stats.count, 1);
            assert_eq!(e.stats.spread, 0.0);
        }
    }

    #[test]
    fn too_few_records_is_config_error() {
        let recs = random_records(3, 2, 3);
        assert!(matches!(kmeans_fit(&recs, &KMeansParams::new(4)), Err(Error::Config(_))));
        assert!(matches!(kmeans_fit(&recs, &KMeansParams::new(0)), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let recs: Vec<_> = (0..6).map(|i| rec(i, vec![1.0, 1.0], [0.5, 0.5], [0.0, 0.0])).collect();
        let result = kmeans_fit(&recs, &KMeansParams::new(3)).unwrap();
        assert!(result.cluster_sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn kmeans_is_deterministic_per_seed() {
        let recs = random_records(300, 8, 4);
        let a = kmeans_fit(&recs, &KMeansParams::new(7).with_seed(11)).unwrap();
        let b = kmeans_fit(&recs, &KMeansParams::new(7).with_seed(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inertia_never_increases() {
        for seed in 0..5 {
            let recs = random_records(400, 6, 100 + seed);
            let mut params = KMeansParams::new(12).with_seed(seed);
            params.rel_tol = 0.0;
            let result = kmeans_fit(&recs, &params).unwrap();
            for w in result.inertia_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", result.inertia_history);
            }
            assert!(result.cluster_sizes().iter().all(|&s| s > 0));
        }
    }

    #[test]
    fn weighted_centroids_recover_global_mean() {
        let recs = random_records(500, 10, 5);
        let result = kmeans_fit(&recs, &KMeansParams::new(16)).unwrap();
        let reference =
            build_cluster_reference(&pool2(), &recs, &result, DistanceMetric::Euclidean).unwrap();
        let total: usize = reference.elements().map(|e| e.stats.count).sum();
        assert_eq!(total, 500);
        for j in 0..10 {
            let weighted: f64 = reference
                .elements()
                .map(|e| e.stats.count as f64 * e.center[j] as f64)
                .sum::<f64>()
                / total as f64;
            let global = recs.iter().map(|r| r.encoding.as_slice()[j] as f64).sum::<f64>() / 500.0;
            assert!((weighted - global).abs() < 1e-6, "{weighted} vs {global}");
        }
    }

    #[test]
    fn cluster_reference_examples() {
        let recs = vec![
            rec(0, vec![1.0, 0.0], [0.4, 0.1], [0.0, 0.0]),
            rec(1, vec![1.0, 0.2], [0.8, 0.3], [0.0, 0.0]),
            rec(2, vec![-5.0, 1.0], [0.9, 0.9], [0.01, 0.02]),
        ];
        let clustering = ClusteringResult {
            centroids: vec![vec![1.0, 0.1], vec![-5.0, 1.0]],
            assignments: vec![0, 0, 1],
            iterations: 1,
            converged: true,
            inertia_history: vec![],
        };
        let reference =
            build_cluster_reference(&pool2(), &recs, &clustering, DistanceMetric::Euclidean).unwrap();
        let pair = reference.element(0).stats;
        assert!((pair.mean_acc[0] - 0.6).abs() < 1e-15);
        assert_eq!(pair.count, 2);
        assert!((pair.spread - 0.1).abs() < 1e-7);
        let single = reference.element(1).stats;
        assert_eq!(single.mean_acc, vec![0.9, 0.9]);
        assert_eq!(single.mean_cost, vec![0.01, 0.02]);
        assert_eq!(single.spread, 0.0);
    }

    #[test]
    fn spread_is_mean_member_distance() {
        // Members at cosine distance 0.1 and 0.3 from the stored centroid (1, 0).
        let at = |d: f64| {
            let cos = 1.0 - d;
            vec![cos as f32, (1.0 - cos * cos).sqrt() as f32]
        };
        let recs = vec![
            rec(0, at(0.1), [0.5, 0.5], [0.0, 0.0]),
            rec(1, at(0.3), [0.5, 0.5], [0.0, 0.0]),
        ];
        let clustering = ClusteringResult {
            centroids: vec![vec![1.0, 0.0]],
            assignments: vec![0, 0],
            iterations: 1,
            converged: true,
            inertia_history: vec![],
        };
        let reference =
            build_cluster_reference(&pool2(), &recs, &clustering, DistanceMetric::Cosine).unwrap();
        assert!((reference.element(0).stats.spread - 0.2).abs() < 1e-6);
    }

    #[test]
    fn element_value_matches_member_mean_objective() {
        let recs = random_records(200, 4, 6);
        let result = kmeans_fit(&recs, &KMeansParams::new(5)).unwrap();
        let reference =
            build_cluster_reference(&pool2(), &recs, &result, DistanceMetric::Cosine).unwrap();
        for lambda in [0.0, 3.0, 250.0] {
            let params = ObjectiveParams::new(lambda).unwrap();
            for (i, e) in reference.elements().enumerate() {
                let members: Vec<_> = recs
                    .iter()
                    .zip(&result.assignments)
                    .filter(|(_, &a)| a == i)
                    .map(|(r, _)| r)
                    .collect();
                for m in 0..2 {
                    let direct = members.iter().map(|r| r.objective(m, params)).sum::<f64>()
                        / members.len() as f64;
                    assert!((e.stats.value(m, params) - direct).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn point_reference_examples() {
        let recs = random_records(3, 4, 7);
        let reference = build_point_reference(&pool2(), &recs, DistanceMetric::Cosine).unwrap();
        assert_eq!(reference.len(), 3);
        let params = ObjectiveParams::new(12.0).unwrap();
        for (e, r) in reference.elements().zip(&recs) {
            assert_eq!(e.stats.count, 1);
            assert_eq!(e.stats.spread, 0.0);
            for m in 0..2 {
                assert_eq!(e.stats.value(m, params), r.obs[m].acc - 12.0 * r.obs[m].cost);
            }
        }
        let again = build_point_reference(&pool2(), &recs, DistanceMetric::Cosine).unwrap();
        assert_eq!(reference, again);
        assert!(matches!(
            build_point_reference(&pool2(), &[], DistanceMetric::Cosine),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn neighbor_query_examples() {
        let recs = random_records(50, 6, 8);
        let index =
            NeighborIndex::new(recs.iter().map(|r| r.encoding.as_slice()), DistanceMetric::Cosine).unwrap();
        let hit = index.query(recs[17].encoding.as_slice(), 1).unwrap();
        assert_eq!(hit[0].index, 17);
        assert!(hit[0].distance < 1e-12);

        let all = index.query(recs[3].encoding.as_slice(), 50).unwrap();
        assert_eq!(all.len(), 50);
        assert!(all.windows(2).all(|w| w[0].distance <= w[1].distance));
        assert!(matches!(index.query(recs[3].encoding.as_slice(), 51), Err(Error::Config(_))));
    }

    #[test]
    fn neighbor_ties_prefer_lower_index() {
        let encs: Vec<Vec<f32>> = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0], vec![0.0, 1.0]];
        let index = NeighborIndex::new(encs.iter().map(Vec::as_slice), DistanceMetric::Euclidean).unwrap();
        let got: Vec<usize> = index.query(&[0.0, 0.0], 3).unwrap().iter().map(|n| n.index).collect();
        assert_eq!(got, vec![0, 1, 2]);
    }

    #[test]
    fn neighbor_index_rejects_bad_inputs() {
        let encs: Vec<Vec<f32>> = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        assert!(matches!(
            NeighborIndex::new(encs.iter().map(Vec::as_slice), DistanceMetric::Cosine),
            Err(Error::Degenerate(_))
        ));
        let index = NeighborIndex::new(encs.iter().map(Vec::as_slice), DistanceMetric::Euclidean).unwrap();
        assert!(matches!(index.query(&[1.0], 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn artifact_round_trip_is_exact() {
        let recs = random_records(60, 5, 9);
        let result = kmeans_fit(&recs, &KMeansParams::new(4)).unwrap();
        let reference =
            build_cluster_reference(&pool2(), &recs, &result, DistanceMetric::Cosine).unwrap();
        let mut buf = Vec::new();
        reference.write_json(&mut buf).unwrap();
        let back = ReferenceSet::read_json(buf.as_slice()).unwrap();
        assert_eq!(reference, back);
        let mut again = Vec::new();
        back.write_json(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn artifact_version_is_checked() {
        let recs = random_records(5, 3, 10);
        let reference = build_point_reference(&pool2(), &recs, DistanceMetric::Cosine).unwrap();
        let mut artifact = reference.to_artifact();
        artifact.format_version = 99;
        assert!(matches!(ReferenceSet::from_artifact(artifact), Err(Error::Format(_))));
    }
}
