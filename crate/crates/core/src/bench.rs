//! Timing harness for the preprocessing/access contract: builds scaled
//! path-join instances, measures build times and access latencies, and
//! reports medians plus doubling ratios as JSON.

use std::collections::BTreeMap;
use std::time::Instant;

use num::BigUint;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;
use thiserror::Error;

use crate::consts::ConstTable;
use crate::gen;
use crate::planner::{EngineAny, Job};
use crate::semiring::{instantiate, SemiringKind};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown generator `{0}` (available: path3)")]
    UnknownGenerator(String),
    #[error("bench needs at least one size")]
    NoSizes,
    #[error("generated instance failed to build: {0}")]
    Build(String),
}

pub struct BenchConfig {
    pub generator: String,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub probes: usize,
    pub seed: u64,
    pub bigint: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            generator: "path3".into(),
            sizes: vec![1 << 14, 1 << 15, 1 << 16, 1 << 17],
            reps: 5,
            probes: 64,
            seed: 7,
            bigint: false,
        }
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if xs.is_empty() {
        return 0.0;
    }
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        (xs[mid - 1] + xs[mid]) / 2.0
    }
}

/// Runs the configured generator at every size and reports timings.
pub fn run(cfg: &BenchConfig) -> Result<serde_json::Value, BenchError> {
    if cfg.generator != "path3" {
        return Err(BenchError::UnknownGenerator(cfg.generator.clone()));
    }
    if cfg.sizes.is_empty() {
        return Err(BenchError::NoSizes);
    }
    let mut runs = Vec::new();
    let mut build_medians = Vec::new();
    let mut access_medians = Vec::new();
    for &n in &cfg.sizes {
        let mut rng = StdRng::seed_from_u64(cfg.seed ^ (n as u64));
        let mut consts = ConstTable::new();
        let (q, rels) = gen::path_join_instance(&mut rng, n, &mut consts);
        let raw = BTreeMap::new();
        let job = Job {
            query: &q,
            relations: &rels,
            raw_annots: &raw,
            semiring: instantiate(SemiringKind::Counting),
            consts: &consts,
            star_db: None,
        };
        let cert = job.classify();
        let mut build_ms = Vec::with_capacity(cfg.reps);
        let mut engine: Option<EngineAny> = None;
        for _ in 0..cfg.reps {
            let t0 = Instant::now();
            let e = EngineAny::build(&job, &cert, cfg.bigint)
                .map_err(|e| BenchError::Build(e.to_string()))?;
            build_ms.push(t0.elapsed().as_secs_f64() * 1e3);
            engine = Some(e);
        }
        let engine = engine.unwrap();
        let count = engine.count();
        let mut access_ns = Vec::with_capacity(cfg.probes * cfg.reps);
        if count > BigUint::from(0u32) {
            let modulus = u64::try_from(count.clone()).unwrap_or(u64::MAX);
            for _ in 0..cfg.reps {
                for _ in 0..cfg.probes {
                    let i = BigUint::from(rng.gen_range(1..=modulus));
                    let t0 = Instant::now();
                    let got = engine.get(&i).map_err(|e| BenchError::Build(e.to_string()))?;
                    access_ns.push(t0.elapsed().as_secs_f64() * 1e9);
                    debug_assert!(got.is_some());
                }
            }
        }
        let b = median(&mut build_ms);
        let a = median(&mut access_ns);
        build_medians.push(b);
        access_medians.push(a);
        runs.push(json!({
            "n": n,
            "count": count.to_string(),
            "build_ms": build_ms,
            "build_ms_median": b,
            "access_ns": access_ns,
            "access_ns_median": a,
        }));
    }
    let ratios: Vec<f64> = build_medians
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { f64::INFINITY })
        .collect();
    let max_ratio = ratios.iter().cloned().fold(0.0f64, f64::max);
    let access_growth = if access_medians[0] > 0.0 {
        access_medians.last().unwrap() / access_medians[0]
    } else {
        f64::INFINITY
    };
    Ok(json!({
        "generator": cfg.generator,
        "sizes": cfg.sizes,
        "reps": cfg.reps,
        "probes": cfg.probes,
        "runs": runs,
        "build_doubling_ratios": ratios,
        "max_build_doubling_ratio": max_ratio,
        "access_growth_last_over_first": access_growth,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_shape() {
        let cfg = BenchConfig {
            sizes: vec![512, 1024],
            reps: 2,
            probes: 8,
            ..Default::default()
        };
        let out = run(&cfg).unwrap();
        assert_eq!(out["runs"].as_array().unwrap().len(), 2);
        assert!(out["max_build_doubling_ratio"].as_f64().is_some());
        assert_eq!(out["runs"][0]["access_ns"].as_array().unwrap().len(), 16);
    }
}
