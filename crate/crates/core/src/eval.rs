//! Evaluation harness: λ sweeps, normalized AUC, match accuracy, Jaccard
//! overlap of task rankings, baselines, and the bias-variance probe.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_split, synth_generate, SplitSpec, SyntheticConfig, SyntheticOracle};
use crate::error::{Error, Result};
use crate::estimator::{argmax, Router};
use crate::reference::{build_cluster_reference, build_point_reference, kmeans_fit, KMeansParams, ReferenceSet};
use crate::types::{ModelPool, ObjectiveParams, QueryRecord, ReferenceKind, RouterConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub lambda: f64,
    pub mean_accuracy: f64,
    pub mean_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub label: String,
    pub points: Vec<CurvePoint>,
    pub auc_n: f64,
}

/// Anything that maps queries to model indices, for a list of λ values.
pub trait RoutingPolicy: Sync {
    fn label(&self) -> &str;

    /// Decisions indexed `[λ][query]`.
    fn route_batch(&self, test: &[QueryRecord], lambdas: &[ObjectiveParams]) -> Result<Vec<Vec<usize>>>;
}

/// A [`Router`] as a policy. Weights are computed once per query and reused
/// across the whole λ list.
pub struct RouterPolicy<'a> {
    label: String,
    router: Router<'a>,
}

impl<'a> RouterPolicy<'a> {
    pub fn new(label: impl Into<String>, router: Router<'a>) -> Self {
        Self {
            label: label.into(),
            router,
        }
    }

    pub fn router(&self) -> &Router<'a> {
        &self.router
    }
}

impl RoutingPolicy for RouterPolicy<'_> {
    fn label(&self) -> &str {
        &self.label
    }

    fn route_batch(&self, test: &[QueryRecord], lambdas: &[ObjectiveParams]) -> Result<Vec<Vec<usize>>> {
        let per_query: Vec<Vec<usize>> = test
            .par_iter()
            .map(|r| {
                let agg = self.router.aggregate(r.encoding.as_slice())?;
                Ok(lambdas.iter().map(|&p| agg.best_model(p)).collect())
            })
            .collect::<Result<_>>()?;
        Ok(transpose(per_query, lambdas.len()))
    }
}

fn transpose(per_query: Vec<Vec<usize>>, n_lambdas: usize) -> Vec<Vec<usize>> {
    (0..n_lambdas)
        .map(|l| per_query.iter().map(|d| d[l]).collect())
        .collect()
}

/// Uniform random model per query, drawn once and reused for every λ.
pub struct RandomPolicy {
    models: usize,
    seed: u64,
}

impl RandomPolicy {
    pub fn new(pool: &ModelPool, seed: u64) -> Self {
        Self {
            models: pool.len(),
            seed,
        }
    }
}

impl RoutingPolicy for RandomPolicy {
    fn label(&self) -> &str {
        "Random"
    }

    fn route_batch(&self, test: &[QueryRecord], lambdas: &[ObjectiveParams]) -> Result<Vec<Vec<usize>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let draws: Vec<usize> = test.iter().map(|_| rng.random_range(0..self.models)).collect();
        Ok(vec![draws; lambdas.len()])
    }
}

/// Every query to the highest-priced model.
pub struct ExpensivePolicy {
    model: usize,
}

impl ExpensivePolicy {
    pub fn new(pool: &ModelPool) -> Self {
        Self {
            model: pool.most_expensive(),
        }
    }
}

impl RoutingPolicy for ExpensivePolicy {
    fn label(&self) -> &str {
        "Expensive"
    }

    fn route_batch(&self, test: &[QueryRecord], lambdas: &[ObjectiveParams]) -> Result<Vec<Vec<usize>>> {
        Ok(vec![vec![self.model; test.len()]; lambdas.len()])
    }
}

/// Routes each query by a per-task `(acc, cost)` table known in advance.
/// Built from a synthetic oracle this is the best achievable router.
pub struct TaskTablePolicy {
    label: String,
    tables: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl TaskTablePolicy {
    pub fn new(label: impl Into<String>, tables: HashMap<String, (Vec<f64>, Vec<f64>)>) -> Self {
        Self {
            label: label.into(),
            tables,
        }
    }

    pub fn from_oracle(oracle: &SyntheticOracle) -> Self {
        let tables = oracle
            .tasks()
            .iter()
            .map(|t| {
                let acc = oracle.true_acc(t).expect("own task").to_vec();
                let cost = oracle.true_cost(t).expect("own task").to_vec();
                (t.clone(), (acc, cost))
            })
            .collect();
        Self::new("Oracle", tables)
    }
}

impl RoutingPolicy for TaskTablePolicy {
    fn label(&self) -> &str {
        &self.label
    }

    fn route_batch(&self, test: &[QueryRecord], lambdas: &[ObjectiveParams]) -> Result<Vec<Vec<usize>>> {
        lambdas
            .iter()
            .map(|p| {
                test.iter()
                    .map(|r| {
                        let (acc, cost) = self.tables.get(&r.task).ok_or_else(|| {
                            Error::Consistency(format!("no table for task '{}'", r.task))
                        })?;
                        let values: Vec<f64> =
                            acc.iter().zip(cost).map(|(a, c)| a - p.lambda() * c).collect();
                        Ok(argmax(&values))
                    })
                    .collect()
            })
            .collect()
    }
}

/// Average observed accuracy and cost of the routed models.
pub fn evaluate_decisions(test: &[QueryRecord], decisions: &[usize], lambda: f64) -> Result<CurvePoint> {
    if test.is_empty() {
        return Err(Error::config("cannot evaluate an empty test set"));
    }
    if decisions.len() != test.len() {
        return Err(Error::Internal("one decision per query required".into()));
    }
    let (mut acc, mut cost) = (0.0, 0.0);
    for (r, &m) in test.iter().zip(decisions) {
        let o = r.obs.get(m).ok_or_else(|| {
            Error::Consistency(format!("record '{}' has no observation for model {m}", r.query_id))
        })?;
        acc += o.acc;
        cost += o.cost;
    }
    let n = test.len() as f64;
    Ok(CurvePoint {
        lambda,
        mean_accuracy: acc / n,
        mean_cost: cost / n,
    })
}

pub fn evaluate_at_lambda(
    policy: &dyn RoutingPolicy,
    test: &[QueryRecord],
    params: ObjectiveParams,
) -> Result<CurvePoint> {
    let decisions = policy.route_batch(test, &[params])?;
    evaluate_decisions(test, &decisions[0], params.lambda())
}

/// `0` followed by `n` log-spaced values over `[1e-2, 1e4]`.
pub fn default_lambda_grid(n: usize) -> Vec<f64> {
    let mut grid = vec![0.0];
    match n {
        0 => {}
        1 => grid.push(1e-2),
        _ => grid.extend((0..n).map(|i| 10f64.powf(-2.0 + 6.0 * i as f64 / (n - 1) as f64))),
    }
    grid
}

fn grid_params(grid: &[f64]) -> Result<Vec<ObjectiveParams>> {
    if grid.is_empty() {
        return Err(Error::config("lambda grid is empty"));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("lambda grid must be sorted ascending"));
    }
    grid.iter().map(|&l| ObjectiveParams::new(l)).collect()
}

pub fn sweep(policy: &dyn RoutingPolicy, test: &[QueryRecord], grid: &[f64]) -> Result<SweepResult> {
    let params = grid_params(grid)?;
    let decisions = policy.route_batch(test, &params)?;
    sweep_from_decisions(policy.label(), test, grid, &decisions)
}

pub fn sweep_from_decisions(
    label: &str,
    test: &[QueryRecord],
    grid: &[f64],
    decisions: &[Vec<usize>],
) -> Result<SweepResult> {
    let points = grid
        .iter()
        .zip(decisions)
        .map(|(&l, d)| evaluate_decisions(test, d, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        label: label.to_string(),
        auc_n: normalized_auc(&points),
        points,
    })
}

/// Area under accuracy-vs-cost divided by the cost range.
///
/// Points sharing a cost collapse to their best accuracy. With fewer than
/// two distinct costs the result is that single accuracy.
pub fn normalized_auc(points: &[CurvePoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.mean_cost, p.mean_accuracy)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for (c, a) in pts {
        match curve.last_mut() {
            Some(last) if last.0 == c => last.1 = last.1.max(a),
            _ => curve.push((c, a)),
        }
    }
    match curve.as_slice() {
        [] => 0.0,
        [(_, a)] => *a,
        _ => {
            let width = curve[curve.len() - 1].0 - curve[0].0;
            let area: f64 = curve
                .windows(2)
                .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
                .sum();
            area / width
        }
    }
}

/// Top-`z` indices by value, descending; ties keep the earlier index.
pub fn top_z(values: &[f64], z: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(z);
    order
}

/// Fraction of queries whose routed model is among the top `z` by that
/// query's own observed objective.
pub fn match_accuracy(
    decisions: &[usize],
    records: &[QueryRecord],
    params: ObjectiveParams,
    z: usize,
) -> Result<f64> {
    if records.is_empty() || decisions.len() != records.len() {
        return Err(Error::config("need one decision per record and at least one record"));
    }
    let m = records[0].obs.len();
    if z == 0 || z > m {
        return Err(Error::config(format!("z={z} outside 1..={m}")));
    }
    let hits = records
        .iter()
        .zip(decisions)
        .filter(|(r, d)| {
            let values: Vec<f64> = r.obs.iter().map(|o| o.objective(params)).collect();
            top_z(&values, z).contains(d)
        })
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Per-task mean objective per model.
pub fn task_objective_table(records: &[QueryRecord], params: ObjectiveParams) -> BTreeMap<String, Vec<f64>> {
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let entry = sums
            .entry(r.task.clone())
            .or_insert_with(|| (vec![0.0; r.obs.len()], 0));
        for (s, o) in entry.0.iter_mut().zip(&r.obs) {
            *s += o.objective(params);
        }
        entry.1 += 1;
    }
    sums.into_iter()
        .map(|(t, (s, n))| (t, s.into_iter().map(|v| v / n as f64).collect()))
        .collect()
}

pub fn jaccard_index(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|x| b.contains(x)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardPair {
    pub outlier: String,
    pub inlier: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardReport {
    pub z: usize,
    pub lambda: f64,
    pub mean: f64,
    pub pairs: Vec<JaccardPair>,
}

/// Top-`z` Jaccard overlap between every (outlier, inlier) task pair.
pub fn jaccard_overlap(
    tables: &BTreeMap<String, Vec<f64>>,
    outliers: &[String],
    inliers: &[String],
    z: usize,
    lambda: f64,
) -> Result<JaccardReport> {
    if outliers.is_empty() || inliers.is_empty() {
        return Err(Error::config("outlier and inlier task sets must be nonempty"));
    }
    if let Some(t) = outliers.iter().find(|t| inliers.contains(t)) {
        return Err(Error::config(format!("task '{t}' is both outlier and inlier")));
    }
    let top = |t: &String| -> Result<Vec<usize>> {
        let values = tables
            .get(t)
            .ok_or_else(|| Error::config(format!("no objective table for task '{t}'")))?;
        if z == 0 || z > values.len() {
            return Err(Error::config(format!("z={z} outside 1..={}", values.len())));
        }
        Ok(top_z(values, z))
    };
    let mut pairs = Vec::new();
    for o in outliers {
        let so = top(o)?;
        for i in inliers {
            pairs.push(JaccardPair {
                outlier: o.clone(),
                inlier: i.clone(),
                value: jaccard_index(&so, &top(i)?),
            });
        }
    }
    let mean = pairs.iter().map(|p| p.value).sum::<f64>() / pairs.len() as f64;
    Ok(JaccardReport { z, lambda, mean, pairs })
}

/// True when the averaged overlap is strictly below `threshold`.
pub fn retrain_trigger(report: &JaccardReport, threshold: f64) -> bool {
    report.mean < threshold
}

/// Fit the reference set a router configuration needs.
pub fn fit_reference(train: &[QueryRecord], pool: &ModelPool, config: &RouterConfig, seed: u64) -> Result<ReferenceSet> {
    config.validate()?;
    match config.reference_kind {
        ReferenceKind::Clusters => {
            let clustering = kmeans_fit(train, &KMeansParams::new(config.clusters).with_seed(seed))?;
            build_cluster_reference(pool, train, &clustering, config.metric)
        }
        ReferenceKind::TrainingPoints => build_point_reference(pool, train, config.metric),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceRow {
    pub inv_tau: f64,
    pub auc_per_seed: Vec<f64>,
    pub mean_auc: f64,
    /// Mean over test queries and models of `(Û − Ū)²` at λ = 0.
    pub squared_error_per_seed: Vec<f64>,
    pub mean_squared_error: f64,
}

/// What the probe fits and evaluates for each seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSetup {
    pub split: SplitSpec,
    pub router: RouterConfig,
    pub lambda_grid: Vec<f64>,
}

/// For every `inv_tau`, the test-set AUC_n and the squared estimation error
/// against the generator's true means, per seed.
///
/// Each seed regenerates the corpus, the split and the reference set with
/// that seed.
pub fn bias_variance_probe(
    config: &SyntheticConfig,
    setup: &ProbeSetup,
    inv_tau_grid: &[f64],
    seeds: &[u64],
) -> Result<Vec<BiasVarianceRow>> {
    if seeds.is_empty() || inv_tau_grid.is_empty() {
        return Err(Error::config("probe needs at least one seed and one inv_tau"));
    }
    let grid = grid_params(&setup.lambda_grid)?;
    let zero = ObjectiveParams::new(0.0)?;
    let mut auc = vec![Vec::new(); inv_tau_grid.len()];
    let mut err = vec![Vec::new(); inv_tau_grid.len()];
    for &seed in seeds {
        let mut cfg = config.clone();
        cfg.seed = seed;
        let (corpus, oracle) = synth_generate(&cfg)?;
        let (train, test) = make_split(&corpus, &setup.split.clone().with_seed(seed))?;
        let reference = fit_reference(train.records(), corpus.pool(), &setup.router, seed)?;
        let truth: Vec<Vec<f64>> = test
            .records()
            .iter()
            .map(|r| oracle.objectives(&r.task, zero))
            .collect::<Result<_>>()?;
        for (j, &inv_tau) in inv_tau_grid.iter().enumerate() {
            let router = Router::new(&reference, setup.router.with_inv_tau(inv_tau))?;
            let aggregates = test
                .records()
                .par_iter()
                .map(|r| router.aggregate(r.encoding.as_slice()))
                .collect::<Result<Vec<_>>>()?;
            let decisions: Vec<Vec<usize>> = grid
                .iter()
                .map(|&p| aggregates.iter().map(|a| a.best_model(p)).collect())
                .collect();
            let result = sweep_from_decisions("probe", test.records(), &setup.lambda_grid, &decisions)?;
            auc[j].push(result.auc_n);
            let (mut total, mut count) = (0.0, 0usize);
            for (a, t) in aggregates.iter().zip(&truth) {
                for (e, u) in a.estimates(zero).iter().zip(t) {
                    total += (e - u) * (e - u);
                    count += 1;
                }
            }
            err[j].push(total / count as f64);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(inv_tau_grid
        .iter()
        .zip(auc.into_iter().zip(err))
        .map(|(&inv_tau, (a, e))| BiasVarianceRow {
            inv_tau,
            mean_auc: mean(&a),
            mean_squared_error: mean(&e),
            auc_per_seed: a,
            squared_error_per_seed: e,
        })
        .collect())
}

/// One CSV block: `label,lambda,mean_accuracy,mean_cost`.
pub fn write_curves_csv<W: Write>(results: &[SweepResult], mut out: W) -> Result<()> {
    writeln!(out, "label,lambda,mean_accuracy,mean_cost")?;
    for r in results {
        for p in &r.points {
            writeln!(out, "{},{},{},{}", r.label, p.lambda, p.mean_accuracy, p.mean_cost)?;
        }
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(results: &[SweepResult], mut out: W) -> Result<()> {
    writeln!(out, "label,auc_n")?;
    for r in results {
        writeln!(out, "{},{}", r.label, r.auc_n)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ModelSpec, Observation, QueryEncoding};
    use proptest::prelude::*;
    use rand::Rng;

    fn lam(l: f64) -> ObjectiveParams {
        ObjectiveParams::new(l).unwrap()
    }

    fn pt(cost: f64, acc: f64) -> CurvePoint {
        CurvePoint {
            lambda: 0.0,
            mean_accuracy: acc,
            mean_cost: cost,
        }
    }

    fn rec(id: usize, task: &str, obs: &[(f64, f64)]) -> QueryRecord {
        QueryRecord::new(
            format!("q{id}"),
            task,
            QueryEncoding::new(vec![1.0, id as f32]).unwrap(),
            obs.iter().map(|&(a, c)| Observation::new(a, c).unwrap()).collect(),
        )
    }

    fn pool(m: usize) -> ModelPool {
        ModelPool::new((0..m).map(|i| ModelSpec::new(format!("m{i}"), i as f64, 0.0)).collect()).unwrap()
    }

    #[test]
    fn auc_examples() {
        for a in [0.0, 0.37, 1.0] {
            assert_eq!(normalized_auc(&[pt(0.0, a), pt(0.3, a), pt(2.0, a)]), a);
        }
        assert_eq!(normalized_auc(&[pt(0.0, 0.0), pt(1.0, 1.0)]), 0.5);
        assert_eq!(normalized_auc(&[pt(1.0, 1.0), pt(0.0, 0.0)]), 0.5);
        assert_eq!(normalized_auc(&[pt(0.4, 0.8)]), 0.8);
        assert_eq!(normalized_auc(&[pt(0.4, 0.2), pt(0.4, 0.8)]), 0.8);
        // Duplicate cost keeps the max accuracy: (0,0)-(1,1) with a spurious (1, 0.2).
        assert_eq!(normalized_auc(&[pt(0.0, 0.0), pt(1.0, 0.2), pt(1.0, 1.0)]), 0.5);
    }

    #[test]
    fn evaluate_single_record() {
        let test = vec![rec(0, "t", &[(0.0, 0.0), (1.0, 2e-5)])];
        let p = evaluate_decisions(&test, &[1], 0.0).unwrap();
        assert_eq!((p.mean_accuracy, p.mean_cost), (1.0, 2e-5));
        assert!(matches!(evaluate_decisions(&test, &[5], 0.0), Err(Error::Consistency(_))));
    }

    #[test]
    fn random_baseline_on_flat_pool() {
        let test: Vec<_> = (0..40).map(|i| rec(i, "t", &[(0.5, 0.0); 3])).collect();
        let policy = RandomPolicy::new(&pool(3), 9);
        let p = evaluate_at_lambda(&policy, &test, lam(0.0)).unwrap();
        assert_eq!(p.mean_accuracy, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let expected: Vec<usize> = (0..40).map(|_| rng.random_range(0..3)).collect();
        assert_eq!(policy.route_batch(&test, &[lam(0.0)]).unwrap()[0], expected);
    }

    #[test]
    fn expensive_baseline_matches_model_mean() {
        let test: Vec<_> = (0..10).map(|i| rec(i, "t", &[(0.1, 0.0), (0.05 * i as f64, 1.0)])).collect();
        let p = evaluate_at_lambda(&ExpensivePolicy::new(&pool(2)), &test, lam(3.0)).unwrap();
        let direct = test.iter().map(|r| r.obs[1].acc).sum::<f64>() / 10.0;
        assert!((p.mean_accuracy - direct).abs() < 1e-15);
    }

    #[test]
    fn sweep_examples() {
        let test: Vec<_> = (0..5).map(|i| rec(i, "t", &[(0.2, 0.0), (0.9, 1e-3)])).collect();
        let r = sweep(&ExpensivePolicy::new(&pool(2)), &test, &[1.0]).unwrap();
        assert_eq!(r.points.len(), 1);
        assert_eq!(r.auc_n, r.points[0].mean_accuracy);
        let r = sweep(&ExpensivePolicy::new(&pool(2)), &test, &[1.0, 2.0]).unwrap();
        assert_eq!(r.points[0].mean_accuracy, r.points[1].mean_accuracy);
        assert_eq!(r.points[0].mean_cost, r.points[1].mean_cost);
        assert!(sweep(&ExpensivePolicy::new(&pool(2)), &test, &[2.0, 1.0]).is_err());
        assert!(sweep(&ExpensivePolicy::new(&pool(2)), &test, &[]).is_err());
    }

    #[test]
    fn default_grid_shape() {
        let g = default_lambda_grid(50);
        assert_eq!(g.len(), 51);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 1e-2).abs() < 1e-15 && (g[50] - 1e4).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn match_accuracy_examples() {
        let test: Vec<_> = (0..20)
            .map(|i| rec(i, "t", &[(0.1 * (i % 3) as f64, 0.0), (0.5, 0.0), (0.3, 0.0)]))
            .collect();
        let best: Vec<usize> = test
            .iter()
            .map(|r| argmax(&r.obs.iter().map(|o| o.acc).collect::<Vec<_>>()))
            .collect();
        assert_eq!(match_accuracy(&best, &test, lam(0.0), 1).unwrap(), 1.0);
        let worst = vec![0; 20];
        assert_eq!(match_accuracy(&worst, &test, lam(0.0), 3).unwrap(), 1.0);
        assert!(match_accuracy(&worst, &test, lam(0.0), 4).is_err());
    }

    #[test]
    fn match_accuracy_against_exhaustive_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let test: Vec<_> = (0..60)
            .map(|i| {
                let obs: Vec<(f64, f64)> = (0..5)
                    .map(|_| ((rng.random_range(0..4) as f64) / 4.0, rng.random::<f64>() * 1e-3))
                    .collect();
                rec(i, "t", &obs)
            })
            .collect();
        let decisions: Vec<usize> = test.iter().map(|_| rng.random_range(0..5)).collect();
        for lambda in [0.0, 100.0] {
            for z in 1..=5 {
                // Oracle: rank of the chosen model = number of models strictly
                // better, plus equal models earlier in pool order.
                let hits = test
                    .iter()
                    .zip(&decisions)
                    .filter(|(r, &d)| {
                        let v: Vec<f64> = r.obs.iter().map(|o| o.acc - lambda * o.cost).collect();
                        let rank = (0..5).filter(|&j| v[j] > v[d] || (v[j] == v[d] && j < d)).count();
                        rank < z
                    })
                    .count();
                let got = match_accuracy(&decisions, &test, lam(lambda), z).unwrap();
                assert_eq!(got, hits as f64 / 60.0);
            }
        }
    }

    fn tables(rows: &[(&str, &[f64])]) -> BTreeMap<String, Vec<f64>> {
        rows.iter().map(|(t, v)| (t.to_string(), v.to_vec())).collect()
    }

    #[test]
    fn jaccard_examples() {
        let same = tables(&[("o", &[0.9, 0.1, 0.5]), ("i", &[0.8, 0.2, 0.6])]);
        let o = vec!["o".to_string()];
        let i = vec!["i".to_string()];
        assert_eq!(jaccard_overlap(&same, &o, &i, 2, 0.0).unwrap().mean, 1.0);

        let disjoint = tables(&[("o", &[0.9, 0.8, 0.1, 0.0]), ("i", &[0.0, 0.1, 0.8, 0.9])]);
        assert_eq!(jaccard_overlap(&disjoint, &o, &i, 2, 0.0).unwrap().mean, 0.0);

        // Top-5 of 7 models sharing exactly 3: |∩| = 3, |∪| = 7.
        let a = [7.0, 6.0, 5.0, 4.0, 3.0, 0.0, 0.0];
        let b = [3.0, 2.0, 1.0, 0.0, 0.0, 7.0, 6.0];
        let r = jaccard_overlap(&tables(&[("o", &a), ("i", &b)]), &o, &i, 5, 0.0).unwrap();
        assert!((r.mean - 3.0 / 7.0).abs() < 1e-15);

        assert!(jaccard_overlap(&same, &o, &o, 1, 0.0).is_err());
    }

    #[test]
    fn retrain_trigger_is_strict() {
        let report = |mean| JaccardReport { z: 1, lambda: 0.0, mean, pairs: vec![] };
        assert!(!retrain_trigger(&report(0.9), 0.5));
        assert!(retrain_trigger(&report(0.3), 0.5));
        assert!(!retrain_trigger(&report(0.5), 0.5));
    }

    #[test]
    fn task_table_means() {
        let recs = vec![rec(0, "a", &[(0.2, 0.0)]), rec(1, "a", &[(0.6, 0.0)]), rec(2, "b", &[(1.0, 0.5)])];
        let t = task_objective_table(&recs, lam(1.0));
        assert!((t["a"][0] - 0.4).abs() < 1e-15);
        assert_eq!(t["b"][0], 0.5);
    }

    #[test]
    fn csv_layout() {
        let r = SweepResult { label: "x".into(), points: vec![pt(0.5, 0.25)], auc_n: 0.25 };
        let mut buf = Vec::new();
        write_curves_csv(std::slice::from_ref(&r), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "label,lambda,mean_accuracy,mean_cost\nx,0,0.25,0.5\n");
        let mut buf = Vec::new();
        write_summary_csv(&[r], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "label,auc_n\nx,0.25\n");
    }

    proptest! {
        #[test]
        fn auc_in_unit_interval(pts in prop::collection::vec((0.0f64..1.0, 0.0f64..=1.0), 1..30)) {
            let points: Vec<_> = pts.iter().map(|&(c, a)| pt(c, a)).collect();
            let v = normalized_auc(&points);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }

        #[test]
        fn match_accuracy_monotone_in_z(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let test: Vec<_> = (0..15)
                .map(|i| rec(i, "t", &(0..4).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect::<Vec<_>>()))
                .collect();
            let decisions: Vec<usize> = (0..15).map(|_| rng.random_range(0..4)).collect();
            let vals: Vec<f64> = (1..=4).map(|z| match_accuracy(&decisions, &test, lam(0.3), z).unwrap()).collect();
            prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn jaccard_symmetric(a in prop::collection::vec(0.0f64..1.0, 6), b in prop::collection::vec(0.0f64..1.0, 6), z in 1usize..=6) {
            let t = tables(&[("x", &a), ("y", &b)]);
            let (x, y) = (vec!["x".to_string()], vec!["y".to_string()]);
            let xy = jaccard_overlap(&t, &x, &y, z, 0.0).unwrap().mean;
            let yx = jaccard_overlap(&t, &y, &x, z, 0.0).unwrap().mean;
            prop_assert_eq!(xy, yx);
            prop_assert!((0.0..=1.0).contains(&xy));
        }
    }
}
