use tiltroute::data::{make_split, synth_generate, Corpus, Scenario, SplitSpec, SyntheticConfig, SyntheticOracle};
use tiltroute::eval::{
    bias_variance_probe, default_lambda_grid, fit_reference, match_accuracy, sweep, ProbeSetup,
    RandomPolicy, TaskTablePolicy,
};
use tiltroute::{Observation, ObjectiveParams, QueryRecord, Router, RouterConfig, RouterMode};

fn lto() -> SplitSpec {
    SplitSpec::new(Scenario::LeaveTaskOut, SyntheticConfig::benchmark_outliers())
}

/// Test records with observations replaced by the generator's true means.
fn with_true_means(records: &[QueryRecord], oracle: &SyntheticOracle) -> Vec<QueryRecord> {
    records
        .iter()
        .map(|r| {
            let acc = oracle.true_acc(&r.task).unwrap();
            let cost = oracle.true_cost(&r.task).unwrap();
            let obs = acc.iter().zip(cost).map(|(&a, &c)| Observation::new(a, c).unwrap()).collect();
            QueryRecord::new(r.query_id.clone(), r.task.clone(), r.encoding.clone(), obs)
        })
        .collect()
}

#[test]
fn inlier_routes_agree_with_true_argmax() {
    let zero = ObjectiveParams::new(0.0).unwrap();
    for seed in [7, 42] {
        let (corpus, oracle) = synth_generate(&SyntheticConfig::benchmark(seed)).unwrap();
        let spec = lto().with_seed(seed);
        let (train, test) = make_split(&corpus, &spec).unwrap();
        let config = RouterConfig::kmeans(RouterMode::Prox);
        let reference = fit_reference(train.records(), corpus.pool(), &config, seed).unwrap();
        let router = Router::new(&reference, config).unwrap();
        let inliers: Vec<&QueryRecord> =
            test.records().iter().filter(|r| !spec.outlier_tasks.contains(&r.task)).collect();
        let agree = inliers
            .iter()
            .filter(|r| {
                router.route(r.encoding.as_slice(), zero).unwrap().chosen_index
                    == oracle.best_model(&r.task, zero).unwrap()
            })
            .count();
        let rate = agree as f64 / inliers.len() as f64;
        assert!(rate >= 0.95, "seed {seed}: agreement {rate}");
    }
}

#[test]
fn allsee_prox_reproduces_task_argmax() {
    let zero = ObjectiveParams::new(0.0).unwrap();
    let (corpus, oracle) = synth_generate(&SyntheticConfig::benchmark(42)).unwrap();
    let spec = SplitSpec {
        scenario: Scenario::AllSee,
        ..lto()
    };
    let (train, test) = make_split(&corpus, &spec).unwrap();
    let config = RouterConfig::kmeans(RouterMode::Prox);
    let reference = fit_reference(train.records(), corpus.pool(), &config, 42).unwrap();
    let router = Router::new(&reference, config).unwrap();
    let decisions: Vec<usize> = test
        .records()
        .iter()
        .map(|r| router.route(r.encoding.as_slice(), zero).unwrap().chosen_index)
        .collect();
    let truth = with_true_means(test.records(), &oracle);
    let m = match_accuracy(&decisions, &truth, zero, 1).unwrap();
    assert!(m >= 0.9, "match accuracy {m}");
}

#[test]
fn oracle_policy_follows_true_argmax() {
    let (corpus, oracle) = synth_generate(&SyntheticConfig::benchmark(99)).unwrap();
    let (_, test) = make_split(&corpus, &lto().with_seed(99)).unwrap();
    let grid = default_lambda_grid(12);
    let got = sweep(&TaskTablePolicy::from_oracle(&oracle), test.records(), &grid).unwrap();
    assert_eq!(got.label, "Oracle");
    for (point, &lambda) in got.points.iter().zip(&grid) {
        let params = ObjectiveParams::new(lambda).unwrap();
        let n = test.len() as f64;
        let (mut acc, mut cost) = (0.0, 0.0);
        for r in test.records() {
            let m = oracle.best_model(&r.task, params).unwrap();
            acc += r.obs[m].acc;
            cost += r.obs[m].cost;
        }
        assert!((point.mean_accuracy - acc / n).abs() < 1e-12);
        assert!((point.mean_cost - cost / n).abs() < 1e-15);
    }
    let random = sweep(&RandomPolicy::new(corpus.pool(), 99), test.records(), &grid).unwrap();
    assert!(got.auc_n > random.auc_n);
}

fn probe(config: &SyntheticConfig, split: SplitSpec, router: RouterConfig, grid: &[f64]) -> Vec<f64> {
    let setup = ProbeSetup {
        split,
        router,
        lambda_grid: vec![0.0, 1.0, 100.0],
    };
    bias_variance_probe(config, &setup, grid, &[7, 42])
        .unwrap()
        .iter()
        .map(|r| r.mean_squared_error)
        .collect()
}

#[test]
fn noise_free_error_is_nonincreasing_in_inv_tau() {
    let mut config = SyntheticConfig::benchmark(0);
    config.noise_std = 0.0;
    config.queries_per_task = 120;
    let split = SplitSpec {
        scenario: Scenario::AllSee,
        ..lto()
    };
    let errs = probe(&config, split, RouterConfig::kmeans(RouterMode::Prox), &[0.0, 1.0, 5.0, 20.0, 100.0, 1000.0]);
    for w in errs.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{errs:?}");
    }
}

#[test]
fn single_cluster_error_ignores_inv_tau() {
    let mut config = SyntheticConfig::benchmark(0);
    config.queries_per_task = 60;
    let router = RouterConfig {
        clusters: 1,
        ..RouterConfig::kmeans(RouterMode::Prox)
    };
    let errs = probe(&config, lto(), router, &[0.0, 5.0, 1000.0]);
    assert!(errs.iter().all(|&e| e == errs[0]), "{errs:?}");
}

#[test]
fn small_tilt_reduces_error_of_uniform_neighbors() {
    let mut config = SyntheticConfig::benchmark(0);
    config.queries_per_task = 120;
    let errs = probe(&config, lto(), RouterConfig::knn(RouterMode::Prox), &[0.0, 5.0]);
    assert!(errs[1] < errs[0], "{errs:?}");
}

#[test]
fn allsee_and_lto_share_the_inlier_split() {
    let (corpus, _) = synth_generate(&SyntheticConfig::benchmark(5)).unwrap();
    let spec = lto().with_seed(5);
    let (lto_train, lto_test) = make_split(&corpus, &spec).unwrap();
    let (all_train, all_test) = make_split(
        &corpus,
        &SplitSpec {
            scenario: Scenario::AllSee,
            ..spec.clone()
        },
    )
    .unwrap();
    let inliers = |c: &Corpus| -> Vec<String> {
        c.records()
            .iter()
            .filter(|r| !spec.outlier_tasks.contains(&r.task))
            .map(|r| r.query_id.clone())
            .collect()
    };
    assert_eq!(inliers(&lto_train), inliers(&all_train));
    assert_eq!(inliers(&lto_test), inliers(&all_test));
}
