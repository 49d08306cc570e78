//! Browser bindings: three small experiments that run in a page.
//!
//! Every export returns a JSON string so the page needs no glue beyond
//! `JSON.parse`. The plain functions underneath are ordinary Rust and are
//! tested natively.

use std::fmt::Write as _;

use layerwise::data::{gaussian_matrix, rng_for, synthetic, teacher_outputs, Dataset, Spectrum, SyntheticSpec};
use layerwise::init::{initialize, InitKind};
use layerwise::loss::LossFunction;
use layerwise::optim::{run_bcgd, LrPolicy, Ordering, StopRule};
use layerwise::oracle::reference_for;
use layerwise::sgd::{run_bcsgd, tail_mean, FloorTracker};
use layerwise::theory::{contraction_margin, r_l};
use wasm_bindgen::prelude::*;

fn json_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        "null".into()
    }
}

fn json_array(vs: &[f64]) -> String {
    let items: Vec<String> = vs.iter().map(|v| json_num(*v)).collect();
    format!("[{}]", items.join(","))
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// Distance to the optimum after each sweep, relative to the start.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthCurve {
    pub depth: usize,
    pub relative: Vec<f64>,
}

/// BCGD with the optimal rate on Gaussian data, once per depth, from
/// orth-identity starts.
pub fn depth_sweep_curves(
    d_in: usize,
    d_out: usize,
    m: usize,
    depths: &[usize],
    sweeps: usize,
    seed: u64,
) -> layerwise::Result<Vec<DepthCurve>> {
    let data = synthetic(&SyntheticSpec {
        d_in,
        d_out,
        m,
        spectrum: Spectrum::Gaussian,
        seed,
    })?;
    let width = d_in.max(d_out);
    let reference = reference_for(&data, LossFunction::L2, d_in.min(d_out))?;
    depths
        .iter()
        .map(|&depth| {
            let mut dims = vec![d_in];
            dims.extend(std::iter::repeat_n(width, depth.saturating_sub(1)));
            dims.push(d_out);
            let mut net = initialize(&InitKind::OrthIdentity.into(), &dims, seed)?;
            let traj = run_bcgd(
                &mut net,
                &data,
                LossFunction::L2,
                LrPolicy::OptimalL2,
                Ordering::Descending,
                StopRule::sweeps(sweeps),
                &reference,
            )?;
            let d0 = traj.meta.initial_dist;
            let relative = traj
                .records
                .chunks(depth)
                .map(|s| s.last().unwrap().dist_after / d0)
                .collect();
            Ok(DepthCurve { depth, relative })
        })
        .collect()
}

#[wasm_bindgen]
pub fn depth_sweep(d_in: usize, d_out: usize, m: usize, depths: Vec<u32>, sweeps: usize, seed: u64) -> Result<String, JsValue> {
    js(depth_sweep_json(d_in, d_out, m, &depths, sweeps, seed))
}

pub fn depth_sweep_json(d_in: usize, d_out: usize, m: usize, depths: &[u32], sweeps: usize, seed: u64) -> Result<String, String> {
    if d_in == 0 || d_out == 0 || m == 0 || depths.iter().any(|&l| l == 0 || l > 500) || sweeps == 0 || sweeps > 200 {
        return Err("sizes must be positive, depths in 1..=500, sweeps in 1..=200".into());
    }
    let depths: Vec<usize> = depths.iter().map(|&l| l as usize).collect();
    let curves = depth_sweep_curves(d_in, d_out, m, &depths, sweeps, seed).map_err(|e| e.to_string())?;
    let items: Vec<String> = curves
        .iter()
        .map(|c| format!("{{\"depth\":{},\"relative\":{}}}", c.depth, json_array(&c.relative)))
        .collect();
    Ok(format!("[{}]", items.join(",")))
}

/// `L·R_L` and the contraction margin for `L = 1..=max_depth`.
pub fn basin_table(max_depth: usize) -> (Vec<f64>, Vec<f64>) {
    (1..=max_depth)
        .map(|l| (l as f64 * r_l(l), contraction_margin(l)))
        .unzip()
}

#[wasm_bindgen]
pub fn basin_curve(max_depth: usize) -> Result<String, JsValue> {
    js(basin_json(max_depth))
}

pub fn basin_json(max_depth: usize) -> Result<String, String> {
    if !(1..=100_000).contains(&max_depth) {
        return Err("max depth must be in 1..=100000".into());
    }
    let (lr, margin) = basin_table(max_depth);
    Ok(format!(
        "{{\"l_times_r\":{},\"margin\":{}}}",
        json_array(&lr),
        json_array(&margin)
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcsgdTrace {
    /// Mean over seeds of `‖(W − W*)X‖_F²` at the end of each sweep.
    pub mean_dist: Vec<f64>,
    pub tail_mean: f64,
    pub oracle_loss: f64,
    pub floor_lower: Option<f64>,
    pub floor_upper: Option<f64>,
}

/// Stochastic runs on a noisy teacher problem (`8 → 4 → 2`, 40 examples).
pub fn bcsgd_runs(eta: f64, noise: f64, sweeps: usize, seeds: u64, seed: u64) -> layerwise::Result<BcsgdTrace> {
    let x = gaussian_matrix(8, 40, (1.0_f64 / 8.0).sqrt(), &mut rng_for(seed, 1));
    let y = teacher_outputs(&x, 2, noise, seed);
    let data = Dataset::new(x, y)?;
    let reference = reference_for(&data, LossFunction::L2, 2)?;
    let m = data.m() as f64;
    let mut sum = vec![0.0; sweeps];
    let mut tail = 0.0;
    let mut tracker = FloorTracker::new(eta, 2);
    for s in 0..seeds {
        let mut net = initialize(&InitKind::OrthIdentity.into(), &[8, 4, 2], seed + 100 + s)?;
        let run = run_bcsgd(&mut net, &data, eta, sweeps, Ordering::Descending, seed + s, &reference)?;
        for (k, pair) in run.trajectory.records.chunks(2).enumerate() {
            sum[k] += pair[pair.len() - 1].dist_after * m;
        }
        tail += tail_mean(&run.trajectory);
        tracker.merge(&run.tail_tracker);
    }
    let n = seeds as f64;
    let bracket = tracker.bracket(reference.objective);
    Ok(BcsgdTrace {
        mean_dist: sum.iter().map(|v| v / n).collect(),
        tail_mean: tail / n,
        oracle_loss: reference.objective,
        floor_lower: bracket.map(|b| b.floor_lower),
        floor_upper: bracket.map(|b| b.floor_upper),
    })
}

#[wasm_bindgen]
pub fn bcsgd_trace(eta: f64, noise: f64, sweeps: usize, seeds: u32, seed: u64) -> Result<String, JsValue> {
    js(bcsgd_json(eta, noise, sweeps, seeds, seed))
}

pub fn bcsgd_json(eta: f64, noise: f64, sweeps: usize, seeds: u32, seed: u64) -> Result<String, String> {
    if !(eta > 0.0 && eta < 2.0) || !(noise >= 0.0 && noise.is_finite()) {
        return Err("need 0 < eta < 2 and noise >= 0".into());
    }
    if !(1..=5000).contains(&sweeps) || !(1..=50).contains(&seeds) {
        return Err("sweeps in 1..=5000, seeds in 1..=50".into());
    }
    let t = bcsgd_runs(eta, noise, sweeps, seeds as u64, seed).map_err(|e| e.to_string())?;
    let mut s = String::new();
    write!(
        s,
        "{{\"mean_dist\":{},\"tail_mean\":{},\"oracle_loss\":{},\"floor_lower\":{},\"floor_upper\":{}}}",
        json_array(&t.mean_dist),
        json_num(t.tail_mean),
        json_num(t.oracle_loss),
        t.floor_lower.map_or("null".into(), json_num),
        t.floor_upper.map_or("null".into(), json_num),
    )
    .unwrap();
    Ok(s)
}
