//! Routing latency and reference-set memory on random reference sets.
//!
//! Each routing decision runs on the calling thread, so timings reflect a
//! single core unless the caller parallelizes across queries.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Router;
use crate::reference::{ElementStats, ReferenceSet};
use crate::types::{ModelPool, ModelSpec, ObjectiveParams, ReferenceKind, RouterConfig, RouterMode};

/// Seeds the timings are repeated over.
pub const BENCH_SEEDS: [u64; 5] = [7, 42, 99, 1234, 2024];

/// Fourteen models with per-million prices `(id, in, out)`.
pub const PRICED_MODELS: [(&str, f64, f64); 14] = [
    ("Qwen2-1.5B-Instruct", 0.015, 0.030),
    ("Qwen2-7B-Instruct", 0.04, 0.08),
    ("deepseek-math-7b-instruct", 0.04, 0.08),
    ("gemma-2b-it", 0.015, 0.03),
    ("gemma-7b-it", 0.03, 0.05),
    ("Llama-2-13b-chat-hf", 0.05, 0.10),
    ("Llama-2-7b-chat-hf", 0.02, 0.04),
    ("Llama-3.1-8B-Instruct", 0.03, 0.05),
    ("Llama-3.2-1B-Instruct", 0.01, 0.02),
    ("Llama-3.2-3B-Instruct", 0.015, 0.03),
    ("Llama-3.3-70B-Instruct", 0.15, 0.30),
    ("Phi-3-small-8k-instruct", 0.025, 0.05),
    ("Mistral-7B-Instruct-v0.3", 0.02, 0.05),
    ("Mixtral-8x7B-Instruct-v0.1", 0.10, 0.25),
];

pub fn priced_pool() -> ModelPool {
    ModelPool::new(
        PRICED_MODELS
            .iter()
            .map(|&(id, pi, po)| ModelSpec::per_million(id, pi, po))
            .collect(),
    )
    .expect("static pool is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub ref_size: usize,
    pub d_enc: usize,
    pub router: RouterConfig,
    pub queries_per_seed: usize,
    pub seeds: Vec<u64>,
    pub lambda: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ref_size: 10_000,
            d_enc: 768,
            router: RouterConfig::knn(RouterMode::Prox),
            queries_per_seed: 200,
            seeds: BENCH_SEEDS.to_vec(),
            lambda: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub median_ms: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub per_seed: Vec<SeedTiming>,
    /// Means over seeds of the per-seed statistics.
    pub median_ms: f64,
    pub mean_ms: f64,
    pub memory_bytes: usize,
    pub memory_mb: f64,
}

/// Random reference set of the requested shape: Gaussian encodings and
/// uniform accuracy/cost summaries over the 14-model pool.
pub fn random_reference(
    kind: ReferenceKind,
    size: usize,
    d_enc: usize,
    config: &RouterConfig,
    seed: u64,
) -> Result<ReferenceSet> {
    let pool = priced_pool();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..size)
        .map(|_| (0..d_enc).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let stats = (0..size)
        .map(|_| ElementStats {
            mean_acc: (0..pool.len()).map(|_| rng.random()).collect(),
            mean_cost: (0..pool.len()).map(|_| rng.random::<f64>() * 1e-4).collect(),
            count: match kind {
                ReferenceKind::Clusters => rng.random_range(1..100),
                ReferenceKind::TrainingPoints => 1,
            },
            spread: match kind {
                ReferenceKind::Clusters => rng.random::<f64>(),
                ReferenceKind::TrainingPoints => 0.0,
            },
        })
        .collect();
    ReferenceSet::new(kind, pool, &centers, stats, config.metric)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn run_routing_bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.seeds.is_empty() || config.queries_per_seed == 0 {
        return Err(Error::config("benchmark needs seeds and at least one query"));
    }
    let params = ObjectiveParams::new(config.lambda)?;
    let size = match config.router.reference_kind {
        ReferenceKind::Clusters => config.router.clusters,
        ReferenceKind::TrainingPoints => config.ref_size,
    };
    let mut per_seed = Vec::with_capacity(config.seeds.len());
    let mut memory_bytes = 0;
    for &seed in &config.seeds {
        let reference = random_reference(config.router.reference_kind, size, config.d_enc, &config.router, seed)?;
        memory_bytes = reference.memory_footprint();
        let router = Router::new(&reference, config.router)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let queries: Vec<Vec<f32>> = (0..config.queries_per_seed)
            .map(|_| (0..config.d_enc).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut times = Vec::with_capacity(queries.len());
        let mut sink = 0usize;
        for q in &queries {
            let start = Instant::now();
            let report = router.route(q, params)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
            sink = sink.wrapping_add(report.chosen_index);
        }
        std::hint::black_box(sink);
        times.sort_by(f64::total_cmp);
        per_seed.push(SeedTiming {
            seed,
            median_ms: median(&times),
            mean_ms: times.iter().sum::<f64>() / times.len() as f64,
        });
    }
    let n = per_seed.len() as f64;
    Ok(BenchReport {
        config: config.clone(),
        median_ms: per_seed.iter().map(|s| s.median_ms).sum::<f64>() / n,
        mean_ms: per_seed.iter().map(|s| s.mean_ms).sum::<f64>() / n,
        per_seed,
        memory_bytes,
        memory_mb: memory_bytes as f64 / 1e6,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn priced_pool_has_fourteen_models_cheapest_first() {
        let pool = priced_pool();
        assert_eq!(pool.len(), 14);
        assert_eq!(pool.id(0), "Llama-3.2-1B-Instruct");
        assert_eq!(pool.id(pool.most_expensive()), "Llama-3.3-70B-Instruct");
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[1.0, 2.0, 9.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 9.0]), 2.5);
    }

    #[test]
    fn small_bench_runs() {
        let config = BenchConfig {
            ref_size: 300,
            d_enc: 16,
            queries_per_seed: 5,
            seeds: vec![1, 2],
            ..BenchConfig::default()
        };
        let report = run_routing_bench(&config).unwrap();
        assert_eq!(report.per_seed.len(), 2);
        assert!(report.median_ms >= 0.0);
        assert_eq!(report.memory_bytes, 300 * 16 * 4 + 300 * (14 * 16 + 16));
    }
}
