//! WebAssembly bindings for the browser demo. Each export takes plain
//! numbers and returns a JSON string; the `*_json` functions underneath are
//! ordinary Rust so they can be tested natively.

use kikuchi_lab::combinat::binomial_u64;
use kikuchi_lab::instances::{sample_planted_instance, sample_random_instance, Assignment, PlantedParams};
use kikuchi_lab::qsim::{aa_schedule, log_grid, sweep_worked_example, WorkedExample};
use kikuchi_lab::rng::derive_seed;
use kikuchi_lab::spectral::{classical_decide, CutoffSpec, DecisionResult, DEFAULT_TOLERANCE};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest Kikuchi dimension the page will build.
pub const MAX_DIMENSION: u64 = 20_000;

#[derive(Serialize)]
struct Contrast {
    dimension: u64,
    planted: DecisionResult,
    random: DecisionResult,
}

/// Samples one planted and one random instance with the same shape and
/// runs the spectral distinguisher on both.
pub fn distinguish_json(n: u32, k: u32, ell: u32, m: f64, rho: f64, kappa: f64, seed: u64) -> Result<String, String> {
    let dimension = binomial_u64(n as u64, ell as i64).map_err(|e| e.to_string())?;
    if dimension > MAX_DIMENSION {
        return Err(format!("C({n},{ell}) = {dimension} exceeds the demo limit of {MAX_DIMENSION}"));
    }
    let params = PlantedParams { n, k, m, rho, poissonized: true };
    let z = Assignment::random(n, derive_seed(seed, "web-z", 0));
    let planted = sample_planted_instance(&params, &z, derive_seed(seed, "web-planted", 0)).map_err(|e| e.to_string())?;
    let random = sample_random_instance(n, k, m, true, derive_seed(seed, "web-random", 0)).map_err(|e| e.to_string())?;
    let cutoff = CutoffSpec::KappaTimesD { kappa };
    let decide = |inst| classical_decide(inst, ell, &cutoff, DEFAULT_TOLERANCE, seed).map_err(|e| e.to_string());
    let out = Contrast { dimension, planted: decide(&planted)?, random: decide(&random)? };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CurvePoint {
    rounds: u64,
    success: f64,
}

/// Amplitude-amplification success `sin²((2r+1)θ)` for `r = 0..=max_rounds`.
pub fn amplification_json(overlap_gamma: f64, max_rounds: u64) -> Result<String, String> {
    let points = (0..=max_rounds.min(10_000))
        .map(|r| aa_schedule(overlap_gamma, r).map(|s| CurvePoint { rounds: r, success: s.success_probability }))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

/// Resource sweep of the worked example over a log grid of `n`.
pub fn sweep_json(k: u32, ell: u32, lo: f64, hi: f64, count: usize) -> Result<String, String> {
    let example = WorkedExample { k, ell, ..WorkedExample::default() };
    let report = sweep_worked_example(&example, &log_grid(lo, hi, count.clamp(2, 200))).map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn distinguish(n: u32, k: u32, ell: u32, m: f64, rho: f64, kappa: f64, seed: u32) -> Result<String, JsError> {
    distinguish_json(n, k, ell, m, rho, kappa, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn amplification(overlap_gamma: f64, max_rounds: u32) -> Result<String, JsError> {
    amplification_json(overlap_gamma, max_rounds as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sweep(k: u32, ell: u32, lo: f64, hi: f64, count: u32) -> Result<String, JsError> {
    sweep_json(k, ell, lo, hi, count as usize).map_err(|e| JsError::new(&e))
}
