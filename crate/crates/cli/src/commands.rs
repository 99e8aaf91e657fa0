use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use tiltroute::bench::{run_routing_bench, BenchConfig, BenchReport};
use tiltroute::data::{load_corpus, make_split, save_corpus, synth_generate, Corpus, Scenario, SplitSpec, SyntheticConfig};
use tiltroute::eval::{
    default_lambda_grid, evaluate_decisions, fit_reference, jaccard_overlap, match_accuracy,
    retrain_trigger, sweep, task_objective_table, write_curves_csv, write_summary_csv,
    CurvePoint, ExpensivePolicy, JaccardReport, RandomPolicy, RouterPolicy, RoutingPolicy,
    SweepResult,
};
use tiltroute::{
    Error, EstimateReport, ObjectiveParams, QueryRecord, ReferenceKind, ReferenceSet, Result,
    Router, RouterConfig, RouterMode, ValidationKind,
};

use crate::args::*;
use crate::io_context;
use crate::manifest::{manifest_path, RunManifest};

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    match threads {
        Some(0) => Err(Error::Config("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Internal(e.to_string()))?
            .install(|| dispatch(cli.command, threads)),
        None => dispatch(cli.command, threads),
    }
}

fn dispatch(command: Command, threads: Option<usize>) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a, threads),
        Command::Fit(a) => cmd_fit(&a, threads),
        Command::Route(a) => cmd_route(&a, threads),
        Command::Evaluate(a) => cmd_evaluate(&a, threads),
        Command::Sweep(a) => cmd_sweep(&a, threads),
        Command::Jaccard(a) => cmd_jaccard(&a, threads),
        Command::Bench(a) => cmd_bench(&a, threads),
    }
}

fn with_path(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(io) => io_context(path, io),
        other => other,
    }
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    load_corpus(path).map_err(with_path(path))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io_context(path, e))?))
}

fn write_json_file(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_context(path, e))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    print_text(&(text + "\n"))
}

fn print_text(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn kind_label(kind: ReferenceKind) -> &'static str {
    match kind {
        ReferenceKind::Clusters => "KM",
        ReferenceKind::TrainingPoints => "kNN",
    }
}

fn router_label(config: &RouterConfig) -> String {
    let mode = match config.mode {
        RouterMode::Base => "Base",
        RouterMode::Prox => "Prox",
    };
    format!("{}-{mode}", kind_label(config.reference_kind))
}

/// The split an evaluation uses. Without an explicit scenario, held-out
/// tasks imply Leave-Task-Out and their absence a plain 60/40 split.
fn eval_split(args: &SplitArgs, seed: u64) -> SplitSpec {
    let scenario = match (args.scenario, args.outlier_tasks.is_empty()) {
        (Some(s), _) => s.into(),
        (None, true) => Scenario::AllSee,
        (None, false) => Scenario::LeaveTaskOut,
    };
    args.spec(scenario, seed)
}

fn population(records: &[QueryRecord], split: &SplitSpec, which: PopulationArg) -> Vec<QueryRecord> {
    records
        .iter()
        .filter(|r| match which {
            PopulationArg::All => true,
            PopulationArg::Inliers => !split.outlier_tasks.contains(&r.task),
            PopulationArg::Outliers => split.outlier_tasks.contains(&r.task),
        })
        .cloned()
        .collect()
}

fn nonempty(records: Vec<QueryRecord>, what: &str) -> Result<Vec<QueryRecord>> {
    if records.is_empty() {
        return Err(Error::Config(format!("{what} population is empty")));
    }
    Ok(records)
}

fn cmd_synth(args: &SynthArgs, threads: Option<usize>) -> Result<()> {
    let mut config = SyntheticConfig::benchmark(args.seed.seed);
    if let Some(q) = args.queries_per_task {
        config.queries_per_task = q;
    }
    if let Some(s) = args.noise_std {
        config.noise_std = s;
    }
    if let Some(n) = args.noise {
        config.noise = n.into();
    }
    if let Some(s) = args.cluster_separation {
        config.cluster_separation = s;
    }
    let (corpus, oracle) = synth_generate(&config)?;
    save_corpus(&corpus, &args.out).map_err(with_path(&args.out))?;

    let mut manifest = RunManifest::new("synth", threads);
    manifest.seeds = vec![args.seed.seed];
    manifest.detail("synthetic", &config);
    manifest.detail("outlier_tasks", SyntheticConfig::benchmark_outliers());
    manifest.output(&args.out)?;
    if let Some(path) = &args.oracle_out {
        let outliers = SyntheticConfig::benchmark_outliers();
        let tasks: Vec<_> = oracle
            .tasks()
            .iter()
            .map(|t| {
                let ids = || oracle.pool().ids();
                json!({
                    "task": t,
                    "outlier": outliers.contains(t),
                    "true_acc": ids().zip(oracle.true_acc(t).expect("own task")).collect::<BTreeMap<_, _>>(),
                    "true_cost": ids().zip(oracle.true_cost(t).expect("own task")).collect::<BTreeMap<_, _>>(),
                })
            })
            .collect();
        write_json_file(path, &json!({ "tasks": tasks }))?;
        manifest.output(path)?;
    }
    manifest.write(&manifest_path(&args.out))?;
    print_json(&json!({
        "records": corpus.len(),
        "tasks": corpus.tasks().len(),
        "models": corpus.pool().len(),
        "d_enc": corpus.d_enc(),
    }))
}

fn cmd_fit(args: &FitArgs, threads: Option<usize>) -> Result<()> {
    let seed = args.seed.seed;
    let corpus = read_corpus(&args.corpus)?;
    let config = args.router.config();
    config.validate()?;
    let split = (args.split.scenario.is_some() || !args.split.outlier_tasks.is_empty())
        .then(|| eval_split(&args.split, seed));
    let train = match &split {
        Some(spec) => make_split(&corpus, spec)?.0,
        None => corpus.clone(),
    };
    let reference = fit_reference(train.records(), corpus.pool(), &config, seed)?;
    let mut out = create(&args.out)?;
    reference.write_json(&mut out)?;
    out.flush().map_err(|e| io_context(&args.out, e))?;
    drop(out);

    let mut manifest = RunManifest::new("fit", threads);
    manifest.router = Some(config);
    manifest.split = split;
    manifest.seeds = vec![seed];
    manifest.input(&args.corpus)?;
    manifest.output(&args.out)?;
    manifest.detail("train_records", train.len());
    manifest.detail("elements", reference.len());
    if config.reference_kind == ReferenceKind::Clusters {
        manifest.detail("clusters", config.clusters);
    }
    manifest.write(&manifest_path(&args.out))
}

#[derive(Serialize)]
struct RouteLine {
    #[serde(skip_serializing_if = "Option::is_none")]
    query_id: Option<String>,
    #[serde(flatten)]
    report: EstimateReport,
}

fn parse_encodings<R: Read>(reader: R, dim: usize) -> Result<Vec<(Option<String>, Vec<f32>)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let invalid = |msg: String| Error::Validation {
            line: line_no,
            kind: ValidationKind::Malformed(msg),
        };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| invalid(e.to_string()))?;
        let (id, enc) = match value {
            serde_json::Value::Array(_) => (None, value),
            serde_json::Value::Object(mut map) => {
                let enc = map
                    .remove("encoding")
                    .ok_or_else(|| invalid("object without 'encoding'".into()))?;
                let id = match map.remove("query_id") {
                    Some(serde_json::Value::String(s)) => Some(s),
                    Some(_) => return Err(invalid("query_id must be a string".into())),
                    None => None,
                };
                (id, enc)
            }
            _ => return Err(invalid("expected an array or an object".into())),
        };
        let enc: Vec<f64> = serde_json::from_value(enc).map_err(|e| invalid(e.to_string()))?;
        if enc.len() != dim {
            return Err(Error::Validation {
                line: line_no,
                kind: ValidationKind::DimensionMismatch {
                    expected: dim,
                    found: enc.len(),
                },
            });
        }
        let enc: Vec<f32> = enc.into_iter().map(|v| v as f32).collect();
        if enc.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation {
                line: line_no,
                kind: ValidationKind::NonFiniteEncoding {
                    query_id: id.clone().unwrap_or_else(|| format!("line {line_no}")),
                },
            });
        }
        out.push((id, enc));
    }
    Ok(out)
}

fn cmd_route(args: &RouteArgs, threads: Option<usize>) -> Result<()> {
    let file = File::open(&args.reference).map_err(|e| io_context(&args.reference, e))?;
    let reference = ReferenceSet::read_json(BufReader::new(file)).map_err(with_path(&args.reference))?;
    let config = RouterConfig {
        mode: args.mode.into(),
        reference_kind: reference.kind(),
        clusters: reference.len(),
        neighbors: args.neighbors,
        inv_tau: args.inv_tau,
        metric: reference.metric(),
        epsilon_spread: args.epsilon_spread,
        penalty: args.penalty.into(),
    };
    let router = Router::new(&reference, config)?;
    let params = ObjectiveParams::new(args.lambda)?;
    let queries = match &args.input {
        Some(path) => {
            let file = File::open(path).map_err(|e| io_context(path, e))?;
            parse_encodings(file, reference.dim()).map_err(with_path(path))?
        }
        None => parse_encodings(std::io::stdin().lock(), reference.dim())?,
    };

    let routed: Vec<(RouteLine, f64)> = queries
        .into_par_iter()
        .map(|(query_id, enc)| {
            let start = Instant::now();
            let report = router.route(&enc, params)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            Ok((RouteLine { query_id, report }, ms))
        })
        .collect::<Result<_>>()?;

    let mut sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    for (line, _) in &routed {
        serde_json::to_writer(&mut sink, line).map_err(|e| Error::Io(e.into()))?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    drop(sink);

    let manifest_at = args.manifest.clone().or_else(|| args.out.as_deref().map(manifest_path));
    if let Some(path) = manifest_at {
        let mut times: Vec<f64> = routed.iter().map(|(_, ms)| *ms).collect();
        times.sort_by(f64::total_cmp);
        let mut manifest = RunManifest::new("route", threads);
        manifest.router = Some(config);
        manifest.lambda_grid = Some(vec![args.lambda]);
        manifest.input(&args.reference)?;
        if let Some(input) = &args.input {
            manifest.input(input)?;
        }
        if let Some(out) = &args.out {
            manifest.output(out)?;
        }
        manifest.detail("queries", times.len());
        if !times.is_empty() {
            manifest.detail("per_query_ms_mean", times.iter().sum::<f64>() / times.len() as f64);
            manifest.detail("per_query_ms_median", times[times.len() / 2]);
        }
        manifest.write(&path)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MatchEntry {
    lambda: f64,
    z: usize,
    value: f64,
}

#[derive(Serialize)]
struct EvaluateOutput {
    label: String,
    population: String,
    test_size: usize,
    points: Vec<CurvePoint>,
    match_accuracy: Vec<MatchEntry>,
}

fn population_name(p: PopulationArg) -> &'static str {
    match p {
        PopulationArg::All => "all",
        PopulationArg::Inliers => "inliers",
        PopulationArg::Outliers => "outliers",
    }
}

fn cmd_evaluate(args: &EvaluateArgs, threads: Option<usize>) -> Result<()> {
    let seed = args.seed.seed;
    let corpus = read_corpus(&args.corpus)?;
    let config = args.router.config();
    let split = eval_split(&args.split, seed);
    let (train, test) = make_split(&corpus, &split)?;
    let test = nonempty(population(test.records(), &split, args.population), "test")?;
    let reference = fit_reference(train.records(), corpus.pool(), &config, seed)?;
    let policy = RouterPolicy::new(router_label(&config), Router::new(&reference, config)?);
    let params = args
        .lambda
        .iter()
        .map(|&l| ObjectiveParams::new(l))
        .collect::<Result<Vec<_>>>()?;
    let decisions = policy.route_batch(&test, &params)?;
    let mut points = Vec::new();
    let mut matches = Vec::new();
    for (p, d) in params.iter().zip(&decisions) {
        points.push(evaluate_decisions(&test, d, p.lambda())?);
        for z in [1, 3, 5].into_iter().filter(|&z| z <= corpus.pool().len()) {
            matches.push(MatchEntry {
                lambda: p.lambda(),
                z,
                value: match_accuracy(d, &test, *p, z)?,
            });
        }
    }
    let output = EvaluateOutput {
        label: policy.label().to_string(),
        population: population_name(args.population).to_string(),
        test_size: test.len(),
        points,
        match_accuracy: matches,
    };
    match &args.out {
        Some(path) => {
            write_json_file(path, &output)?;
            let mut manifest = RunManifest::new("evaluate", threads);
            manifest.router = Some(config);
            manifest.split = Some(split);
            manifest.lambda_grid = Some(args.lambda.clone());
            manifest.seeds = vec![seed];
            manifest.input(&args.corpus)?;
            manifest.output(path)?;
            manifest.write(&manifest_path(path))
        }
        None => print_json(&output),
    }
}

fn cmd_sweep(args: &SweepArgs, threads: Option<usize>) -> Result<()> {
    let seed = args.seed.seed;
    let corpus = read_corpus(&args.corpus)?;
    let grid = if args.lambda_grid.is_empty() {
        default_lambda_grid(args.grid_points)
    } else {
        args.lambda_grid.clone()
    };
    let split = eval_split(&args.split, seed);
    let allsee_split = SplitSpec {
        scenario: Scenario::AllSee,
        ..split.clone()
    };
    let (train, test) = make_split(&corpus, &split)?;
    let (train_all, test_all) = make_split(&corpus, &allsee_split)?;
    let test = nonempty(population(test.records(), &split, args.population), "test")?;
    let test_all = nonempty(population(test_all.records(), &split, args.population), "AllSee test")?;

    let base = RouterConfig {
        mode: RouterMode::Base,
        ..args.router.config()
    };
    let prox = RouterConfig {
        mode: RouterMode::Prox,
        ..base
    };
    let allsee = RouterConfig {
        mode: args.allsee_mode.into(),
        ..base
    };
    let reference = fit_reference(train.records(), corpus.pool(), &base, seed)?;
    let reference_all = fit_reference(train_all.records(), corpus.pool(), &allsee, seed)?;
    let kind = kind_label(base.reference_kind);

    let results = vec![
        sweep(&RouterPolicy::new(format!("{kind}-Base"), Router::new(&reference, base)?), &test, &grid)?,
        sweep(&RouterPolicy::new(format!("{kind}-Prox"), Router::new(&reference, prox)?), &test, &grid)?,
        sweep(
            &RouterPolicy::new(format!("{kind}-AllSee"), Router::new(&reference_all, allsee)?),
            &test_all,
            &grid,
        )?,
        sweep(&RandomPolicy::new(corpus.pool(), seed), &test, &grid)?,
        sweep(&ExpensivePolicy::new(corpus.pool()), &test, &grid)?,
    ];

    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_context(&args.out_dir, e))?;
    let curves = args.out_dir.join("curves.csv");
    let summary = args.out_dir.join("summary.csv");
    let json_out = args.out_dir.join("sweep.json");
    let mut w = create(&curves)?;
    write_curves_csv(&results, &mut w)?;
    w.flush()?;
    let mut w = create(&summary)?;
    write_summary_csv(&results, &mut w)?;
    w.flush()?;
    write_json_file(&json_out, &results)?;

    let mut manifest = RunManifest::new("sweep", threads);
    manifest.router = Some(prox);
    manifest.split = Some(split);
    manifest.lambda_grid = Some(grid);
    manifest.seeds = vec![seed];
    manifest.input(&args.corpus)?;
    for p in [&curves, &summary, &json_out] {
        manifest.output(p)?;
    }
    manifest.detail("population", population_name(args.population));
    manifest.write(&args.out_dir.join("manifest.json"))?;

    let summary: Vec<_> = results
        .iter()
        .map(|r: &SweepResult| json!({ "label": r.label, "auc_n": r.auc_n }))
        .collect();
    print_json(&summary)
}

#[derive(Serialize)]
struct JaccardEntry {
    #[serde(flatten)]
    report: JaccardReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    retrain: Option<bool>,
}

fn cmd_jaccard(args: &JaccardArgs, threads: Option<usize>) -> Result<()> {
    let corpus = read_corpus(&args.corpus)?;
    let inliers: Vec<String> = corpus
        .tasks()
        .into_iter()
        .filter(|t| !args.outlier_tasks.contains(t))
        .collect();
    if let Some(missing) = args.outlier_tasks.iter().find(|t| !corpus.tasks().contains(t)) {
        return Err(Error::Config(format!("outlier task '{missing}' not in corpus")));
    }
    let mut entries = Vec::new();
    for &lambda in &args.lambda_grid {
        let tables = task_objective_table(corpus.records(), ObjectiveParams::new(lambda)?);
        for &z in &args.z {
            let report = jaccard_overlap(&tables, &args.outlier_tasks, &inliers, z, lambda)?;
            let retrain = args.threshold.map(|t| retrain_trigger(&report, t));
            entries.push(JaccardEntry { report, retrain });
        }
    }
    match &args.out {
        Some(path) => {
            write_json_file(path, &entries)?;
            let mut manifest = RunManifest::new("jaccard", threads);
            manifest.lambda_grid = Some(args.lambda_grid.clone());
            manifest.input(&args.corpus)?;
            manifest.output(path)?;
            manifest.write(&manifest_path(path))
        }
        None => print_json(&entries),
    }
}

fn bench_table(report: &BenchReport) -> String {
    let mut s = format!("{:>6}  {:>10}  {:>10}\n", "seed", "median_ms", "mean_ms");
    for t in &report.per_seed {
        s += &format!("{:>6}  {:>10.3}  {:>10.3}\n", t.seed, t.median_ms, t.mean_ms);
    }
    s += &format!("{:>6}  {:>10.3}  {:>10.3}\n", "mean", report.median_ms, report.mean_ms);
    s += &format!(
        "reference set: {} x {} -> {:.2} MB\n",
        report.config.ref_size, report.config.d_enc, report.memory_mb
    );
    s
}

fn cmd_bench(args: &BenchArgs, threads: Option<usize>) -> Result<()> {
    let router = RouterConfig {
        mode: args.mode.into(),
        reference_kind: args.kind.into(),
        clusters: args.clusters,
        neighbors: args.neighbors,
        inv_tau: args.inv_tau,
        metric: args.metric,
        ..RouterConfig::default()
    };
    let config = BenchConfig {
        ref_size: args.ref_size,
        d_enc: args.d_enc,
        router,
        queries_per_seed: args.queries,
        seeds: args.seeds.clone(),
        lambda: args.lambda,
    };
    let report = run_routing_bench(&config)?;
    if let Some(path) = &args.out {
        write_json_file(path, &report)?;
        let mut manifest = RunManifest::new("bench", threads);
        manifest.router = Some(router);
        manifest.seeds = args.seeds.clone();
        manifest.output(path)?;
        manifest.write(&manifest_path(path))?;
    }
    if args.table {
        print_text(&bench_table(&report))
    } else {
        print_json(&report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_encodings_accepts_arrays_and_objects() {
        let text = "[1.0, 2.0]\n\n{\"query_id\":\"a\",\"encoding\":[0.5,0.25]}\n";
        let got = parse_encodings(text.as_bytes(), 2).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0], (None, vec![1.0, 2.0]));
        assert_eq!(got[1], (Some("a".to_string()), vec![0.5, 0.25]));
    }

    #[test]
    fn parse_encodings_reports_line_numbers() {
        let err = parse_encodings("[1.0, 2.0]\n[1.0]\n".as_bytes(), 2).unwrap_err();
        assert!(matches!(err, Error::Validation { line: 2, kind: ValidationKind::DimensionMismatch { .. } }));
        let err = parse_encodings("\"x\"\n".as_bytes(), 2).unwrap_err();
        assert!(matches!(err, Error::Validation { line: 1, .. }));
    }

    #[test]
    fn labels() {
        assert_eq!(router_label(&RouterConfig::kmeans(RouterMode::Prox)), "KM-Prox");
        assert_eq!(router_label(&RouterConfig::knn(RouterMode::Base)), "kNN-Base");
    }
}
