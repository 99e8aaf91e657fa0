//! Corpora: JSON Lines and binary ingestion, token-priced costs, train/test
//! splits, and a seeded synthetic generator with known true means.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, ValidationKind};
use crate::estimator::argmax;
use crate::reference::DEFAULT_SEED;
use crate::types::{ModelPool, ModelSpec, ObjectiveParams, Observation, QueryEncoding, QueryRecord};

pub const FORMAT_VERSION: u64 = 1;
const BINARY_MAGIC: &[u8; 4] = b"TRCB";
const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pool: ModelPool,
    records: Vec<QueryRecord>,
    d_enc: usize,
}

impl Corpus {
    pub fn new(pool: ModelPool, records: Vec<QueryRecord>, d_enc: usize) -> Result<Self> {
        if d_enc == 0 {
            return Err(Error::config("d_enc must be >= 1"));
        }
        let mut seen = HashSet::new();
        for r in &records {
            if r.encoding.dim() != d_enc {
                return Err(Error::Dimension {
                    expected: d_enc,
                    found: r.encoding.dim(),
                });
            }
            if r.obs.len() != pool.len() {
                return Err(Error::Consistency(format!(
                    "record '{}' has {} observations for a {}-model pool",
                    r.query_id,
                    r.obs.len(),
                    pool.len()
                )));
            }
            if !seen.insert(r.query_id.as_str()) {
                return Err(Error::Consistency(format!("duplicate query_id '{}'", r.query_id)));
            }
        }
        Ok(Self { pool, records, d_enc })
    }

    pub fn pool(&self) -> &ModelPool {
        &self.pool
    }

    pub fn records(&self) -> &[QueryRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<QueryRecord> {
        self.records
    }

    pub fn d_enc(&self) -> usize {
        self.d_enc
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct task labels, sorted.
    pub fn tasks(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.task.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Records whose task satisfies `keep`, in corpus order.
    pub fn filter_tasks(&self, keep: impl Fn(&str) -> bool) -> Corpus {
        Corpus {
            pool: self.pool.clone(),
            records: self.records.iter().filter(|r| keep(&r.task)).cloned().collect(),
            d_enc: self.d_enc,
        }
    }

    fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            pool: self.pool.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            d_enc: self.d_enc,
        }
    }
}

/// `tokens_in·price_in + tokens_out·price_out`, in dollars.
pub fn compute_cost(tokens_in: u64, tokens_out: u64, model: &ModelSpec) -> f64 {
    tokens_in as f64 * model.price_in + tokens_out as f64 * model.price_out
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    format_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d_enc: Option<usize>,
    models: Vec<ModelSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObsLine {
    acc: f64,
    #[serde(default)]
    cost: Option<f64>,
    #[serde(default)]
    tokens_in: Option<u64>,
    #[serde(default)]
    tokens_out: Option<u64>,
}

#[derive(Deserialize)]
struct RecordLine {
    query_id: String,
    task: String,
    encoding: Vec<f64>,
    obs: HashMap<String, ObsLine>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    query_id: &'a str,
    task: &'a str,
    encoding: &'a [f32],
    obs: BTreeMap<&'a str, Observation>,
}

fn parse_header(line: &str, line_no: usize) -> Result<(ModelPool, Option<usize>)> {
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| Error::validation(line_no, ValidationKind::Malformed(e.to_string())))?;
    if value.get("format_version").is_none() || value.get("models").is_none() {
        return Err(Error::validation(line_no, ValidationKind::MissingHeader));
    }
    let header: HeaderLine = serde_json::from_value(value)
        .map_err(|e| Error::validation(line_no, ValidationKind::Malformed(e.to_string())))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::validation(
            line_no,
            ValidationKind::UnsupportedVersion(header.format_version),
        ));
    }
    let mut seen = HashSet::new();
    for m in &header.models {
        if !seen.insert(m.id.as_str()) {
            return Err(Error::validation(line_no, ValidationKind::DuplicateModel(m.id.clone())));
        }
        if !(m.price_in.is_finite() && m.price_out.is_finite() && m.price_in >= 0.0 && m.price_out >= 0.0) {
            return Err(Error::validation(
                line_no,
                ValidationKind::NegativePrice { model: m.id.clone() },
            ));
        }
    }
    if header.d_enc == Some(0) {
        return Err(Error::validation(
            line_no,
            ValidationKind::Malformed("d_enc must be >= 1".into()),
        ));
    }
    let pool = ModelPool::new(header.models)
        .map_err(|e| Error::validation(line_no, ValidationKind::Malformed(e.to_string())))?;
    Ok((pool, header.d_enc))
}

fn parse_record(line: &str, line_no: usize, pool: &ModelPool, d_enc: usize) -> Result<QueryRecord> {
    let invalid = |kind| Error::validation(line_no, kind);
    let rec: RecordLine =
        serde_json::from_str(line).map_err(|e| invalid(ValidationKind::Malformed(e.to_string())))?;
    if rec.encoding.len() != d_enc {
        return Err(invalid(ValidationKind::DimensionMismatch {
            expected: d_enc,
            found: rec.encoding.len(),
        }));
    }
    let values: Vec<f32> = rec.encoding.iter().map(|&v| v as f32).collect();
    let encoding = QueryEncoding::new(values).map_err(|_| {
        invalid(ValidationKind::NonFiniteEncoding {
            query_id: rec.query_id.clone(),
        })
    })?;
    let mut unknown: Vec<&String> = rec.obs.keys().filter(|k| pool.index_of(k).is_none()).collect();
    unknown.sort();
    if let Some(model) = unknown.first() {
        return Err(invalid(ValidationKind::UnknownModel {
            query_id: rec.query_id.clone(),
            model: (*model).clone(),
        }));
    }
    let mut obs = Vec::with_capacity(pool.len());
    for spec in pool.models() {
        let Some(o) = rec.obs.get(&spec.id) else {
            return Err(invalid(ValidationKind::MissingModel {
                query_id: rec.query_id.clone(),
                model: spec.id.clone(),
            }));
        };
        if !(o.acc.is_finite() && (0.0..=1.0).contains(&o.acc)) {
            return Err(invalid(ValidationKind::AccuracyOutOfRange {
                query_id: rec.query_id.clone(),
                model: spec.id.clone(),
                value: o.acc,
            }));
        }
        let cost = match (o.cost, o.tokens_in, o.tokens_out) {
            (Some(c), None, None) => c,
            (None, Some(ti), Some(to)) => compute_cost(ti, to, spec),
            _ => {
                return Err(invalid(ValidationKind::Malformed(format!(
                    "record '{}' model '{}': give either cost or both tokens_in and tokens_out",
                    rec.query_id, spec.id
                ))))
            }
        };
        if !(cost.is_finite() && cost >= 0.0) {
            return Err(invalid(ValidationKind::InvalidCost {
                query_id: rec.query_id.clone(),
                model: spec.id.clone(),
                value: cost,
            }));
        }
        obs.push(Observation { acc: o.acc, cost });
    }
    Ok(QueryRecord::new(rec.query_id, rec.task, encoding, obs))
}

/// Parse a JSON Lines corpus. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_jsonl<R: Read>(reader: R) -> Result<Corpus> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let mut header = None;
    for (i, line) in lines.by_ref() {
        let line = line?;
        if !line.trim().is_empty() {
            header = Some(parse_header(&line, i + 1)?);
            break;
        }
    }
    let Some((pool, mut d_enc)) = header else {
        return Err(Error::EmptyCorpus);
    };
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let dim = match d_enc {
            Some(d) => d,
            None => {
                // Infer from the first record.
                let probe: serde_json::Value = serde_json::from_str(&line).map_err(|e| {
                    Error::validation(line_no, ValidationKind::Malformed(e.to_string()))
                })?;
                let d = probe
                    .get("encoding")
                    .and_then(|e| e.as_array())
                    .map(|a| a.len())
                    .filter(|&d| d > 0)
                    .ok_or_else(|| {
                        Error::validation(
                            line_no,
                            ValidationKind::Malformed("missing or empty encoding".into()),
                        )
                    })?;
                d_enc = Some(d);
                d
            }
        };
        let rec = parse_record(&line, line_no, &pool, dim)?;
        if !seen.insert(rec.query_id.clone()) {
            return Err(Error::validation(line_no, ValidationKind::DuplicateQuery(rec.query_id)));
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Corpus::new(pool, records, d_enc.expect("set by first record"))
}

pub fn write_jsonl<W: Write>(corpus: &Corpus, mut writer: W) -> Result<()> {
    let to_io = |e: serde_json::Error| Error::Format(e.to_string());
    let header = HeaderLine {
        format_version: FORMAT_VERSION,
        d_enc: Some(corpus.d_enc),
        models: corpus.pool.models().to_vec(),
    };
    serde_json::to_writer(&mut writer, &header).map_err(to_io)?;
    writer.write_all(b"\n")?;
    for r in &corpus.records {
        let line = RecordOut {
            query_id: &r.query_id,
            task: &r.task,
            encoding: r.encoding.as_slice(),
            obs: corpus.pool.ids().zip(r.obs.iter().copied()).collect(),
        };
        serde_json::to_writer(&mut writer, &line).map_err(to_io)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Little-endian binary container holding the same content as the JSON
/// Lines form.
pub fn to_binary(corpus: &Corpus) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(corpus.pool.len() as u32).to_le_bytes());
    for m in corpus.pool.models() {
        put_str(&mut out, &m.id);
        out.extend_from_slice(&m.price_in.to_le_bytes());
        out.extend_from_slice(&m.price_out.to_le_bytes());
    }
    out.extend_from_slice(&(corpus.d_enc as u32).to_le_bytes());
    out.extend_from_slice(&(corpus.records.len() as u64).to_le_bytes());
    for r in &corpus.records {
        put_str(&mut out, &r.query_id);
        put_str(&mut out, &r.task);
        for v in r.encoding.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for o in &r.obs {
            out.extend_from_slice(&o.acc.to_le_bytes());
            out.extend_from_slice(&o.cost.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated binary corpus".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn from_binary(bytes: &[u8]) -> Result<Corpus> {
    if bytes.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != BINARY_MAGIC {
        return Err(Error::Format("not a binary corpus (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != BINARY_VERSION {
        return Err(Error::Format(format!("unsupported binary corpus version {version}")));
    }
    let m = c.u32()? as usize;
    let mut models = Vec::with_capacity(m);
    for _ in 0..m {
        let id = c.string()?;
        let price_in = c.f64()?;
        let price_out = c.f64()?;
        models.push(ModelSpec::new(id, price_in, price_out));
    }
    let pool = ModelPool::new(models.clone())?;
    if pool.models() != models.as_slice() {
        return Err(Error::Format("binary corpus models are not in pool order".into()));
    }
    let d_enc = c.u32()? as usize;
    let n = c.u64()?;
    let mut records = Vec::new();
    for _ in 0..n {
        let query_id = c.string()?;
        let task = c.string()?;
        let enc = (0..d_enc).map(|_| c.f32()).collect::<Result<Vec<_>>>()?;
        let obs = (0..m)
            .map(|_| Observation::new(c.f64()?, c.f64()?))
            .collect::<Result<Vec<_>>>()?;
        records.push(QueryRecord::new(query_id, task, QueryEncoding::new(enc)?, obs));
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after binary corpus".into()));
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Corpus::new(pool, records, d_enc)
}

fn is_binary_path(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("bin" | "trcb"))
}

/// Load a corpus; `.bin`/`.trcb` files use the binary container, anything
/// else is read as JSON Lines.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    if is_binary_path(path) {
        from_binary(&std::fs::read(path)?)
    } else {
        read_jsonl(std::fs::File::open(path)?)
    }
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_binary_path(path) {
        std::fs::write(path, to_binary(corpus))?;
        Ok(())
    } else {
        write_jsonl(corpus, std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    LeaveTaskOut,
    FewShotOutlier,
    AllSee,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub scenario: Scenario,
    pub outlier_tasks: BTreeSet<String>,
    pub inlier_train_fraction: f64,
    pub few_shot_count: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new<I, S>(scenario: Scenario, outlier_tasks: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            scenario,
            outlier_tasks: outlier_tasks.into_iter().map(Into::into).collect(),
            inlier_train_fraction: 0.6,
            few_shot_count: 25,
            seed: DEFAULT_SEED,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Seed derived from `(seed, label)` so every task gets its own shuffle
/// that does not depend on which other tasks exist.
fn derived_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}

fn shuffled(mut indices: Vec<usize>, seed: u64, label: &str) -> Vec<usize> {
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(derived_seed(seed, label)));
    indices
}

/// Split into `(train, test)`. Both keep corpus order.
///
/// Each task is shuffled with its own derived seed and the first
/// `floor(fraction·n)` records go to train, so the inlier split is the same
/// in every scenario.
pub fn make_split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus)> {
    if !(spec.inlier_train_fraction > 0.0 && spec.inlier_train_fraction < 1.0) {
        return Err(Error::config("inlier_train_fraction must lie in (0, 1)"));
    }
    let mut by_task: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in corpus.records.iter().enumerate() {
        by_task.entry(r.task.as_str()).or_default().push(i);
    }
    if let Some(missing) = spec.outlier_tasks.iter().find(|t| !by_task.contains_key(t.as_str())) {
        return Err(Error::config(format!("outlier task '{missing}' not in corpus")));
    }

    let mut train = Vec::new();
    let mut outlier_records = Vec::new();
    for (task, idx) in &by_task {
        let is_outlier = spec.outlier_tasks.contains(*task);
        if is_outlier && spec.scenario != Scenario::AllSee {
            outlier_records.extend_from_slice(idx);
            continue;
        }
        let order = shuffled(idx.clone(), spec.seed, task);
        let n_train = (spec.inlier_train_fraction * order.len() as f64).floor() as usize;
        train.extend_from_slice(&order[..n_train]);
    }
    if spec.scenario == Scenario::FewShotOutlier {
        outlier_records.sort_unstable();
        if spec.few_shot_count > outlier_records.len() {
            return Err(Error::config(format!(
                "few_shot_count {} exceeds the {} outlier records",
                spec.few_shot_count,
                outlier_records.len()
            )));
        }
        let order = shuffled(outlier_records, spec.seed, "\u{0}few-shot");
        train.extend_from_slice(&order[..spec.few_shot_count]);
    }

    train.sort_unstable();
    let in_train: HashSet<usize> = train.iter().copied().collect();
    let test: Vec<usize> = (0..corpus.len()).filter(|i| !in_train.contains(i)).collect();
    Ok((corpus.subset(&train), corpus.subset(&test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `acc = clip(true + noise_std·N(0,1), 0, 1)`.
    Gaussian,
    /// `acc ~ Bernoulli(true)`; 0/1 correctness.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_tasks: usize,
    pub queries_per_task: usize,
    pub d_enc: usize,
    /// Norm of each task's blob center.
    pub cluster_separation: f64,
    /// Per-coordinate std of encodings around the blob center.
    pub blob_std: f64,
    /// Std of the observation noise on accuracy (Gaussian) and of the
    /// relative noise on cost.
    pub noise_std: f64,
    pub noise: NoiseKind,
    pub models: Vec<ModelSpec>,
    /// `[task][model]`, models in the order of `models`.
    pub true_acc: Vec<Vec<f64>>,
    pub true_cost: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Models of the default benchmark with their per-million prices.
pub const BENCHMARK_MODELS: [(&str, f64, f64, f64); 6] = [
    // id, price_in, price_out, general accuracy
    ("Llama-3.2-1B", 0.01, 0.02, 0.35),
    ("Qwen2-1.5B", 0.015, 0.03, 0.42),
    ("Llama-3.1-8B", 0.03, 0.05, 0.55),
    ("Qwen2-7B", 0.04, 0.08, 0.58),
    ("Mixtral-8x7B", 0.10, 0.25, 0.62),
    ("Llama-3.3-70B", 0.15, 0.30, 0.75),
];

pub const BENCHMARK_TASKS: usize = 8;
pub const BENCHMARK_OUTLIERS: usize = 2;

impl SyntheticConfig {
    /// The default benchmark: 8 tasks of 250 queries in 32 dimensions over
    /// 6 models.
    ///
    /// Each of the first six tasks has a specialist model that beats the
    /// large generalist on it; elsewhere accuracy follows a shared skill
    /// ordering plus small task-level perturbations. The last
    /// [`BENCHMARK_OUTLIERS`] tasks have no specialist.
    pub fn benchmark(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, "benchmark-tables"));
        let models: Vec<ModelSpec> = BENCHMARK_MODELS
            .iter()
            .map(|&(id, pi, po, _)| ModelSpec::per_million(id, pi, po))
            .collect();
        let inliers = BENCHMARK_TASKS - BENCHMARK_OUTLIERS;
        let mut true_acc = Vec::new();
        let mut true_cost = Vec::new();
        for t in 0..BENCHMARK_TASKS {
            let specialist = (t < inliers).then_some(t % (models.len() - 1));
            let row: Vec<f64> = BENCHMARK_MODELS
                .iter()
                .enumerate()
                .map(|(m, &(_, _, _, general))| {
                    let jitter: f64 = StandardNormal.sample(&mut rng);
                    let base = if Some(m) == specialist { 0.87 } else { general };
                    (base + 0.03 * jitter).clamp(0.02, 0.98)
                })
                .collect();
            let tokens_in = rng.random_range(150..450);
            let tokens_out = rng.random_range(100..400);
            true_cost.push(models.iter().map(|m| compute_cost(tokens_in, tokens_out, m)).collect());
            true_acc.push(row);
        }
        Self {
            num_tasks: BENCHMARK_TASKS,
            queries_per_task: 250,
            d_enc: 32,
            cluster_separation: 3.0,
            blob_std: 0.25,
            noise_std: 0.1,
            noise: NoiseKind::Gaussian,
            models,
            true_acc,
            true_cost,
            seed,
        }
    }

    pub fn task_name(t: usize) -> String {
        format!("task{t:02}")
    }

    /// Names of the benchmark's held-out tasks.
    pub fn benchmark_outliers() -> Vec<String> {
        (BENCHMARK_TASKS - BENCHMARK_OUTLIERS..BENCHMARK_TASKS)
            .map(Self::task_name)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 || self.queries_per_task == 0 || self.d_enc == 0 {
            return Err(Error::config("num_tasks, queries_per_task and d_enc must be >= 1"));
        }
        for (name, v) in [
            ("cluster_separation", self.cluster_separation),
            ("blob_std", self.blob_std),
            ("noise_std", self.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and >= 0")));
            }
        }
        let shape_ok = |t: &Vec<Vec<f64>>| {
            t.len() == self.num_tasks && t.iter().all(|row| row.len() == self.models.len())
        };
        if !shape_ok(&self.true_acc) || !shape_ok(&self.true_cost) {
            return Err(Error::config("true_acc/true_cost must be num_tasks x models"));
        }
        if self.true_acc.iter().flatten().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::config("true accuracies must lie in [0, 1]"));
        }
        if self.true_cost.iter().flatten().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::config("true costs must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Ground truth of a synthetic corpus, aligned to its pool order.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracle {
    pool: ModelPool,
    tasks: Vec<String>,
    true_acc: Vec<Vec<f64>>,
    true_cost: Vec<Vec<f64>>,
}

impl SyntheticOracle {
    pub fn pool(&self) -> &ModelPool {
        &self.pool
    }

    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    fn task_index(&self, task: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t == task)
            .ok_or_else(|| Error::config(format!("unknown task '{task}'")))
    }

    pub fn true_acc(&self, task: &str) -> Result<&[f64]> {
        Ok(&self.true_acc[self.task_index(task)?])
    }

    pub fn true_cost(&self, task: &str) -> Result<&[f64]> {
        Ok(&self.true_cost[self.task_index(task)?])
    }

    /// `Ū^(m) = true_acc − λ·true_cost` for one task and model.
    pub fn true_objective(&self, task: &str, model: usize, params: ObjectiveParams) -> Result<f64> {
        let t = self.task_index(task)?;
        Ok(self.true_acc[t][model] - params.lambda() * self.true_cost[t][model])
    }

    pub fn objectives(&self, task: &str, params: ObjectiveParams) -> Result<Vec<f64>> {
        let t = self.task_index(task)?;
        Ok((0..self.pool.len())
            .map(|m| self.true_acc[t][m] - params.lambda() * self.true_cost[t][m])
            .collect())
    }

    pub fn best_model(&self, task: &str, params: ObjectiveParams) -> Result<usize> {
        Ok(argmax(&self.objectives(task, params)?))
    }
}

/// Random orthonormal directions when they fit in the space, otherwise
/// independent random unit vectors.
fn task_directions(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(n);
    while dirs.len() < n {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        if n <= d {
            for u in &dirs {
                let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            dirs.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    dirs
}

pub fn synth_generate(config: &SyntheticConfig) -> Result<(Corpus, SyntheticOracle)> {
    config.validate()?;
    let pool = ModelPool::new(config.models.clone())?;
    let column: Vec<usize> = pool
        .ids()
        .map(|id| config.models.iter().position(|m| m.id == id).expect("same ids"))
        .collect();
    let reorder = |table: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        table.iter().map(|row| column.iter().map(|&c| row[c]).collect()).collect()
    };
    let true_acc = reorder(&config.true_acc);
    let true_cost = reorder(&config.true_cost);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dirs = task_directions(config.num_tasks, config.d_enc, &mut rng);
    let tasks: Vec<String> = (0..config.num_tasks).map(SyntheticConfig::task_name).collect();
    let mut records = Vec::with_capacity(config.num_tasks * config.queries_per_task);
    for (t, task) in tasks.iter().enumerate() {
        for q in 0..config.queries_per_task {
            let enc: Vec<f32> = dirs[t]
                .iter()
                .map(|&u| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    (config.cluster_separation * u + config.blob_std * g) as f32
                })
                .collect();
            let obs = (0..pool.len())
                .map(|m| {
                    let mean = true_acc[t][m];
                    let acc = match config.noise {
                        NoiseKind::Gaussian => {
                            let g: f64 = StandardNormal.sample(&mut rng);
                            (mean + config.noise_std * g).clamp(0.0, 1.0)
                        }
                        NoiseKind::Bernoulli => f64::from(u8::from(rng.random::<f64>() < mean)),
                    };
                    let g: f64 = StandardNormal.sample(&mut rng);
                    let cost = true_cost[t][m] * (1.0 + config.noise_std * g).max(0.0);
                    Observation::new(acc, cost)
                })
                .collect::<Result<Vec<_>>>()?;
            records.push(QueryRecord::new(
                format!("{task}-q{q:04}"),
                task.clone(),
                QueryEncoding::new(enc)?,
                obs,
            ));
        }
    }
    let oracle = SyntheticOracle {
        pool: pool.clone(),
        tasks,
        true_acc,
        true_cost,
    };
    Ok((Corpus::new(pool, records, config.d_enc)?, oracle))
}
