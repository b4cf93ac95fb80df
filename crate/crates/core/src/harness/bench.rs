//! Accuracy and calibration over a suite of generated cases.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scene::Case;
use crate::config::EngineConfig;
use crate::confidence::acceptance_radius;
use crate::grounding::ground;
use crate::rng::derive_seed;
use crate::smc::StageTrace;

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("benchmark suite is empty")]
    EmptySuite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_px: Option<f64>,
    pub tolerance: f64,
    pub confidence: f64,
    pub ready: bool,
    pub fast_path: bool,
    pub target_present: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub wall_ms: f64,
    /// Sampler stages, kept only when asked for.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<StageTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub cases: usize,
    pub successes: usize,
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub cases: Vec<CaseResult>,
    pub n_cases: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean error over cases whose target exists and produced a point.
    pub mean_error_px: Option<f64>,
    pub fast_path_rate: f64,
    pub ready_rate: f64,
    pub calibration: Vec<CalibrationBin>,
    pub mean_confidence_success: Option<f64>,
    pub mean_confidence_failure: Option<f64>,
    /// Whether successes are more confident than failures; only judged with
    /// at least 20 of each.
    pub calibrated: Option<bool>,
    pub mean_wall_ms: f64,
}

impl BenchReport {
    /// Zero every timing field so two runs can be compared byte for byte.
    pub fn without_timing(mut self) -> Self {
        self.cases.iter_mut().for_each(|c| c.wall_ms = 0.0);
        self.mean_wall_ms = 0.0;
        self
    }

    pub fn fast_path_count(&self) -> usize {
        self.cases.iter().filter(|c| c.fast_path).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Fixed success radius in px; by default each case uses its acceptance radius.
    pub tolerance: Option<f64>,
    pub calibration_bins: usize,
    pub keep_trace: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            tolerance: None,
            calibration_bins: 10,
            keep_trace: false,
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn evaluate(case: &Case, engine: &EngineConfig, bench: &BenchConfig, seed: u64) -> CaseResult {
    let started = Instant::now();
    let outcome = ground(&case.demo, &case.runtime, &case.live_window, engine, seed);
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    match outcome {
        Ok(g) => {
            let tolerance = bench
                .tolerance
                .unwrap_or_else(|| acceptance_radius(g.result.sigma_loc, &engine.smc.confidence));
            let error_px = case.truth.map(|t| t.dist(g.point()));
            CaseResult {
                name: case.name.clone(),
                success: error_px.is_some_and(|e| e <= tolerance),
                error_px,
                tolerance,
                confidence: g.confidence(),
                ready: g.readiness(engine.c_min()).is_ready(),
                fast_path: g.result.fast_path,
                target_present: case.truth.is_some(),
                failure: None,
                wall_ms,
                trace: if bench.keep_trace { g.result.trace } else { Vec::new() },
            }
        }
        Err(e) => CaseResult {
            name: case.name.clone(),
            success: false,
            error_px: None,
            tolerance: bench.tolerance.unwrap_or(f64::NAN),
            confidence: 0.0,
            ready: false,
            fast_path: false,
            target_present: case.truth.is_some(),
            failure: Some(e.to_string()),
            wall_ms,
            trace: Vec::new(),
        },
    }
}

/// Ground every case as the runner would. Case `i` is seeded with
/// `derive_seed(seed, [i])`; engine errors count as failures.
pub fn run_bench(cases: &[Case], engine: &EngineConfig, bench: &BenchConfig, seed: u64) -> Result<BenchReport, BenchError> {
    if cases.is_empty() {
        return Err(BenchError::EmptySuite);
    }
    let results: Vec<CaseResult> = cases
        .par_iter()
        .enumerate()
        .map(|(i, c)| evaluate(c, engine, bench, derive_seed(seed, &[i as u64])))
        .collect();

    let n = results.len();
    let successes = results.iter().filter(|r| r.success).count();
    let bins = bench.calibration_bins.max(1);
    let calibration = (0..bins)
        .map(|b| {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            let inside: Vec<&CaseResult> = results
                .iter()
                .filter(|r| r.confidence >= lo && (r.confidence < hi || (b + 1 == bins && r.confidence <= hi)))
                .collect();
            let hits = inside.iter().filter(|r| r.success).count();
            CalibrationBin {
                lo,
                hi,
                cases: inside.len(),
                successes: hits,
                mean_confidence: mean(inside.iter().map(|r| r.confidence)),
                accuracy: (!inside.is_empty()).then(|| hits as f64 / inside.len() as f64),
            }
        })
        .collect();
    let conf_ok = mean(results.iter().filter(|r| r.success).map(|r| r.confidence));
    let conf_bad = mean(results.iter().filter(|r| !r.success).map(|r| r.confidence));
    let calibrated = (successes >= 20 && n - successes >= 20)
        .then(|| conf_ok.unwrap_or(0.0) > conf_bad.unwrap_or(0.0));
    Ok(BenchReport {
        seed,
        n_cases: n,
        successes,
        success_rate: successes as f64 / n as f64,
        mean_error_px: mean(results.iter().filter_map(|r| r.error_px)),
        fast_path_rate: results.iter().filter(|r| r.fast_path).count() as f64 / n as f64,
        ready_rate: results.iter().filter(|r| r.ready).count() as f64 / n as f64,
        calibration,
        mean_confidence_success: conf_ok,
        mean_confidence_failure: conf_bad,
        calibrated,
        mean_wall_ms: mean(results.iter().map(|r| r.wall_ms)).unwrap_or(0.0),
        cases: results,
    })
}
