//! Browser bindings for three small demos: an IPF fit with its convergence
//! trace, TRS integerisation averaged over many seeds, and ranking of a
//! deviation grid. Every export returns a JSON string.

use serde::Serialize;
use shape_synth::evaluate::{self, MissingPolicy};
use shape_synth::ipf::{fit_zone, Design, DesignVariable, FitOptions};
use shape_synth::synthpop::integerise_trs;
use shape_synth::Result;
use wasm_bindgen::prelude::*;

/// Age band (3 categories) and sex (2) of the toy survey.
const TOY_AGE: [u32; 12] = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2];
const TOY_SEX: [u32; 12] = [0, 1, 0, 1, 0, 1, 1, 1, 0, 0, 0, 1];

pub const SAMPLE_DEVIATIONS: &str = include_str!("../../../fixtures/published/deviations.csv");

#[derive(Serialize)]
pub struct IpfTrace {
    pub weights: Vec<f64>,
    pub age: Vec<u32>,
    pub sex: Vec<u32>,
    /// Max relative residual after each sweep.
    pub trace: Vec<f64>,
    pub converged: bool,
}

pub fn ipf_trace(age_targets: &[f64], sex_targets: &[f64], max_sweeps: usize) -> Result<IpfTrace> {
    let design = Design::new(
        TOY_AGE.len(),
        vec![
            DesignVariable { name: "age".into(), n_categories: 3, membership: TOY_AGE.to_vec() },
            DesignVariable { name: "sex".into(), n_categories: 2, membership: TOY_SEX.to_vec() },
        ],
    )?;
    let targets = [age_targets.to_vec(), sex_targets.to_vec()];
    let mut trace = Vec::new();
    // refit with a growing sweep budget so each step of the trace is the real fit state
    for sweeps in 1..=max_sweeps.max(1) {
        let opts = FitOptions { max_iterations: sweeps, ..FitOptions::default() };
        let fit = fit_zone(&design, &targets, &opts, "demo")?;
        trace.push(fit.diagnostics.max_residual);
        if fit.diagnostics.converged || sweeps == max_sweeps.max(1) {
            return Ok(IpfTrace {
                weights: fit.weights,
                age: TOY_AGE.to_vec(),
                sex: TOY_SEX.to_vec(),
                trace,
                converged: fit.diagnostics.converged,
            });
        }
    }
    unreachable!()
}

#[derive(Serialize)]
pub struct TrsSummary {
    pub total: u64,
    pub first: Vec<u32>,
    pub mean: Vec<f64>,
    pub runs: u32,
}

pub fn trs_summary(weights: &[f64], runs: u32) -> Result<TrsSummary> {
    let runs = runs.max(1);
    let mut mean = vec![0.0; weights.len()];
    let mut first = Vec::new();
    let mut total = 0;
    for seed in 0..runs {
        let counts = integerise_trs(weights, seed as u64, "demo")?;
        for (m, &c) in mean.iter_mut().zip(&counts.counts) {
            *m += c as f64 / runs as f64;
        }
        if seed == 0 {
            total = counts.total;
            first = counts.counts;
        }
    }
    Ok(TrsSummary { total, first, mean, runs })
}

pub fn rank_table(deviations_csv: &str, threshold: f64) -> Result<evaluate::TierTable> {
    let devs = evaluate::read_deviations(deviations_csv.as_bytes())?;
    let report = evaluate::composite_from_deviations(&devs, MissingPolicy::Error)?;
    Ok(evaluate::rank_models(&report, threshold, None))
}

fn to_js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = ipfTrace)]
pub fn ipf_trace_js(age_targets: &[f64], sex_targets: &[f64], max_sweeps: usize) -> std::result::Result<String, JsError> {
    to_js(ipf_trace(age_targets, sex_targets, max_sweeps))
}

#[wasm_bindgen(js_name = trsSummary)]
pub fn trs_summary_js(weights: &[f64], runs: u32) -> std::result::Result<String, JsError> {
    to_js(trs_summary(weights, runs))
}

#[wasm_bindgen(js_name = rankTable)]
pub fn rank_table_js(deviations_csv: &str, threshold: f64) -> std::result::Result<String, JsError> {
    to_js(rank_table(deviations_csv, threshold))
}

#[wasm_bindgen(js_name = sampleDeviations)]
pub fn sample_deviations() -> String {
    SAMPLE_DEVIATIONS.to_string()
}
