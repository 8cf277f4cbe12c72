//! wasm-bindgen front for the demo page in `www/`. Each exported function
//! returns a JSON string; the plain functions underneath are usable natively.

use led_cmaes::cmaes::StepSizeMode;
use led_cmaes::harness::{run_trial, trial_seed, ExperimentConfig};
use led_cmaes::led::{effectiveness, xi_gain, xi_thresh};
use led_cmaes::optimizer::Algorithm;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest total dimension the page accepts; keeps a click under a few seconds.
pub const MAX_DIM: usize = 64;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Curve {
    pub algorithm: String,
    pub evals: Vec<u64>,
    pub best_f: Vec<f64>,
    pub n_eff_hat: Vec<f64>,
    pub success: bool,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Comparison {
    pub dim: usize,
    pub eff_dim: usize,
    pub curves: Vec<Curve>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Alignment {
    pub dim: usize,
    pub eff_dim: usize,
    pub iterations: Vec<usize>,
    /// `v[k][i]`: effectiveness of eigen-coordinate `i` at `iterations[k]`.
    pub v: Vec<Vec<f64>>,
    /// Norm of the effective block of eigenvector `i`.
    pub align: Vec<Vec<f64>>,
    pub n_eff_hat: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Effectiveness {
    pub threshold: f64,
    pub gain: f64,
    pub snr: Vec<f64>,
    pub v: Vec<f64>,
}

fn config(
    algorithm: Algorithm,
    function: u32,
    dim: usize,
    eff_dim: usize,
    stepsize: &str,
    max_evals: u64,
) -> Result<ExperimentConfig, String> {
    if dim > MAX_DIM {
        return Err(format!("dimension {dim} above the page limit {MAX_DIM}"));
    }
    let mode: StepSizeMode = stepsize.parse().map_err(|e| format!("{e}"))?;
    let cfg = ExperimentConfig {
        algorithm,
        mode,
        function,
        dim,
        eff_dim,
        trials: 1,
        budget_multiplier: max_evals as f64 / dim.max(1) as f64,
        jobs: 1,
        ..ExperimentConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// CMA-ES and LED on the same problem instance and seed.
pub fn comparison(
    function: u32,
    dim: usize,
    eff_dim: usize,
    stepsize: &str,
    seed: u64,
    max_evals: u64,
) -> Result<Comparison, String> {
    let mut curves = Vec::new();
    for alg in [Algorithm::Cmaes, Algorithm::Led] {
        let cfg = config(alg, function, dim, eff_dim, stepsize, max_evals)?;
        let rec = run_trial(&cfg, 0, trial_seed(seed, 0)).map_err(|e| e.to_string())?;
        curves.push(Curve {
            algorithm: alg.to_string(),
            evals: rec.rows.iter().map(|r| r.evals).collect(),
            best_f: rec.rows.iter().map(|r| r.best_f).collect(),
            n_eff_hat: rec.rows.iter().map(|r| r.neff_hat).collect(),
            success: rec.success,
        });
    }
    Ok(Comparison {
        dim,
        eff_dim,
        curves,
    })
}

/// Per-coordinate effectiveness and eigenvector alignment along an LED run,
/// keeping at most `max_points` iterations.
pub fn alignment(
    function: u32,
    dim: usize,
    eff_dim: usize,
    seed: u64,
    max_points: usize,
) -> Result<Alignment, String> {
    let mut cfg = config(Algorithm::Led, function, dim, eff_dim, "csa", 20_000 * dim as u64)?;
    cfg.trace_led = true;
    let rec = run_trial(&cfg, 0, trial_seed(seed, 0)).map_err(|e| e.to_string())?;
    let total = rec.rows.len();
    let stride = total.div_ceil(max_points.max(1)).max(1);
    let mut out = Alignment {
        dim,
        eff_dim,
        iterations: Vec::new(),
        v: Vec::new(),
        align: Vec::new(),
        n_eff_hat: Vec::new(),
    };
    for (k, chunk) in rec.led_rows.chunks(dim).enumerate() {
        if k % stride != 0 && k + 1 != total {
            continue;
        }
        out.iterations.push(chunk[0].iteration);
        out.v.push(chunk.iter().map(|r| r.v).collect());
        out.align.push(chunk.iter().map(|r| r.align_norm).collect());
        out.n_eff_hat.push(rec.rows[k].neff_hat);
    }
    Ok(out)
}

/// The effectiveness sigmoid over `v_snr ∈ [0, 1]` for a given maximum SNR.
pub fn effectiveness_curve_data(n: usize, lambda: usize, max_snr: f64, points: usize) -> Effectiveness {
    let threshold = xi_thresh(n.max(1), lambda.max(2));
    let gain = xi_gain(max_snr.clamp(0.0, 1.0));
    let snr: Vec<f64> = (0..points.max(2))
        .map(|i| i as f64 / (points.max(2) - 1) as f64)
        .collect();
    let (v, _) = effectiveness(&snr, threshold, gain);
    Effectiveness {
        threshold,
        gain,
        snr,
        v,
    }
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn run_comparison(
    function: u32,
    dim: usize,
    eff_dim: usize,
    stepsize: &str,
    seed: u64,
    max_evals: u64,
) -> Result<String, JsValue> {
    to_json(comparison(function, dim, eff_dim, stepsize, seed, max_evals))
}

#[wasm_bindgen]
pub fn alignment_trajectory(
    function: u32,
    dim: usize,
    eff_dim: usize,
    seed: u64,
    max_points: usize,
) -> Result<String, JsValue> {
    to_json(alignment(function, dim, eff_dim, seed, max_points))
}

#[wasm_bindgen]
pub fn effectiveness_curve(n: usize, lambda: usize, max_snr: f64) -> Result<String, JsValue> {
    to_json(Ok(effectiveness_curve_data(n, lambda, max_snr, 101)))
}
