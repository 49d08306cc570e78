//! Contraction factors, basin constants, the one-sweep depth bound, and
//! trajectory audits.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::check_dims;
use crate::matcore::{
    cond, cond_numbers_from_spectrum, numeric_rank, singular_values, spectral_norm, Matrix,
};
use crate::network::Network;
use crate::optim::{SweepState, Trajectory};

/// Absolute slack, relative to the run's distance scale, allowed by audits.
pub const AUDIT_SLACK: f64 = 1e-10;

/// `dim K`: rank of the top layer, capped by `n_L`.
pub fn subspace_dim(net: &Network) -> usize {
    let top = net.layer(net.depth());
    numeric_rank(top).min(top.nrows())
}

fn kappa_r(s: &[f64], shape: (usize, usize), r: usize) -> f64 {
    let frob = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    cond_numbers_from_spectrum(s, shape.0, shape.1, frob, r).kappa_r
}

/// `max{1 − η/(κ_r²(A) κ_{r_x}²(BX)), η − 1}` from precomputed spectra.
/// A rank-deficient factor makes its condition number infinite and the
/// first branch equal to 1.
pub fn gamma_from_spectra(
    s_a: &[f64],
    a_shape: (usize, usize),
    s_bx: &[f64],
    bx_shape: (usize, usize),
    eta: f64,
    r: usize,
    r_x: usize,
) -> f64 {
    let ka = kappa_r(s_a, a_shape, r);
    let kb = kappa_r(s_bx, bx_shape, r_x);
    let denom = ka * ka * kb * kb;
    let first = if denom.is_finite() { 1.0 - eta / denom } else { 1.0 };
    first.max(eta - 1.0)
}

pub fn gamma_from_parts(a: &Matrix, bx: &Matrix, eta: f64, r: usize, r_x: usize) -> f64 {
    gamma_from_spectra(
        &singular_values(a),
        a.shape(),
        &singular_values(bx),
        bx.shape(),
        eta,
        r,
        r_x,
    )
}

/// `γ` for the layer `state` is about to update, with `A = W_{L:i+1}` and
/// `BX = W_{i−1:1}X` at the current weights.
pub fn gamma_factor(
    net: &Network,
    data: &Dataset,
    state: &SweepState,
    eta: f64,
    r: usize,
    r_x: usize,
) -> Result<f64> {
    check_dims(net, data)?;
    let i = state.layer();
    net.check_layer(i)?;
    let a = net.partial_product(net.depth(), i + 1)?;
    let bx = net.partial_product(i - 1, 1)? * data.x();
    Ok(gamma_from_parts(&a, &bx, eta, r, r_x))
}

/// `R_L = 2 / ((5L − 3) + √((5L − 3)² − 4L))`.
pub fn r_l(l: usize) -> f64 {
    assert!(l >= 1, "depth must be positive");
    let l = l as f64;
    let a = 5.0 * l - 3.0;
    2.0 / (a + (a * a - 4.0 * l).max(0.0).sqrt())
}

/// `h(L) = L R_L (1 − R_L)^{2L−2} / (1 + R_L)^{3L−1}`.
pub fn h_l(l: usize) -> f64 {
    let r = r_l(l);
    let lf = l as f64;
    lf * r * (1.0 - r).powi(2 * l as i32 - 2) / (1.0 + r).powi(3 * l as i32 - 1)
}

/// `((1 − R_L)/(1 + R_L))^{2(L−1)}`, bounded below by 1/5.
pub fn contraction_margin(l: usize) -> f64 {
    let r = r_l(l);
    ((1.0 - r) / (1.0 + r)).powi(2 * (l as i32 - 1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasinConstants {
    pub r_l: f64,
    pub h_l: f64,
    pub c: f64,
    /// `σ_min(W*X) / ‖X‖`.
    pub sigma_tilde_min: f64,
    /// `σ̃_min / c`: initial `‖W⁰ − W*‖_F` below which contraction is guaranteed.
    pub basin_radius: f64,
    /// `1 − η/(5κ²(X))`; a sweep contracts by at least `gamma_sweep^{2L}`.
    pub gamma_sweep: f64,
}

fn c_constant(kappa2: f64, h: f64, sigma_tilde: f64) -> f64 {
    1.0 + kappa2 * (1.0 + (1.0 + 4.0 * h * sigma_tilde / kappa2).sqrt()) / (2.0 * h * sigma_tilde)
}

struct BasinInputs {
    kappa2: f64,
    sigma_min_wx: f64,
    sigma_tilde: f64,
}

fn basin_inputs(x: &Matrix, w_star: &Matrix, eta: f64) -> Result<BasinInputs> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::domain(format!("basin constants need 0 < η <= 1, got {eta}")));
    }
    if w_star.ncols() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "W* vs X",
            expected: format!("{} columns", x.nrows()),
            actual: format!("{} columns", w_star.ncols()),
        });
    }
    if x.nrows() > x.ncols() || numeric_rank(x) < x.nrows() {
        return Err(Error::Hypothesis("X must have full row rank".into()));
    }
    let k = cond(x);
    let wx = w_star * x;
    let s = singular_values(&wx);
    let sigma_min_wx = s.last().copied().unwrap_or(0.0);
    Ok(BasinInputs {
        kappa2: k * k,
        sigma_min_wx,
        sigma_tilde: sigma_min_wx / spectral_norm(x),
    })
}

pub fn basin_constants(x: &Matrix, w_star: &Matrix, l: usize, eta: f64) -> Result<BasinConstants> {
    if l == 0 {
        return Err(Error::domain("depth must be at least 1"));
    }
    let inp = basin_inputs(x, w_star, eta)?;
    let h = h_l(l);
    let c = c_constant(inp.kappa2, h, inp.sigma_tilde);
    Ok(BasinConstants {
        r_l: r_l(l),
        h_l: h,
        c,
        sigma_tilde_min: inp.sigma_tilde,
        basin_radius: inp.sigma_tilde / c,
        gamma_sweep: 1.0 - eta / (5.0 * inp.kappa2),
    })
}

const DEPTH_ROUNDS: usize = 100;

/// Smallest depth the one-sweep bound accepts for an initial error
/// `initial_dist = ‖(W⁰ − W*)X‖_F`. The constant `c` depends on the depth, so
/// the bound is iterated from `L = 1` until it stops growing.
pub fn min_depth_one_sweep(x: &Matrix, w_star: &Matrix, initial_dist: f64, eta: f64) -> Result<usize> {
    let inp = basin_inputs(x, w_star, eta)?;
    if !(initial_dist > 0.0) {
        return Ok(1);
    }
    let denom = (1.0 - eta / inp.kappa2).ln();
    if !(denom < 0.0 && denom.is_finite()) {
        return Ok(1);
    }
    let mut depth = 1usize;
    for _ in 0..DEPTH_ROUNDS {
        let c = c_constant(inp.kappa2, h_l(depth), inp.sigma_tilde);
        let ratio = inp.sigma_min_wx / (c * initial_dist);
        if !(ratio > 0.0) || ratio >= 1.0 {
            return Ok(depth);
        }
        let bound = (ratio.ln() / denom).ceil();
        if !bound.is_finite() || bound > u32::MAX as f64 {
            return Err(Error::NoConvergence {
                what: format!("depth bound diverged ({bound})"),
                rounds: DEPTH_ROUNDS,
            });
        }
        let next = (bound as usize).max(depth);
        if next == depth {
            return Ok(depth);
        }
        depth = next;
    }
    Err(Error::NoConvergence {
        what: "one-sweep depth fixed point".into(),
        rounds: DEPTH_ROUNDS,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// `dist_after > dist_before · γ² + slack`.
    PerStep,
    /// `dist_after > dist_0 · ∏γ² + slack`.
    Cumulative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub iteration: usize,
    pub kind: ViolationKind,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditReport {
    pub steps: usize,
    /// Steps that carried a `γ` and were checked.
    pub checked: usize,
    /// Iterations whose `γ ≥ 1`: the bound holds but promises nothing.
    pub vacuous: Vec<usize>,
    pub violations: Vec<Violation>,
    /// Largest pre-step distance in the run; the slack is relative to it.
    pub scale: f64,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        format!(
            "{} steps, {} checked, {} vacuous, {} violations (scale {:e})",
            self.steps,
            self.checked,
            self.vacuous.len(),
            self.violations.len(),
            self.scale
        )
    }
}

/// Checks each step against `γ²` and the running product against the
/// initial distance. Steps without a `γ` or without a known pre-step
/// distance restart the running product.
pub fn verify_trajectory(traj: &Trajectory, gammas: &[Option<f64>]) -> Result<AuditReport> {
    if gammas.len() != traj.records.len() {
        return Err(Error::DimensionMismatch {
            context: "audit gammas",
            expected: format!("{} entries", traj.records.len()),
            actual: format!("{} entries", gammas.len()),
        });
    }
    let scale = traj
        .records
        .iter()
        .map(|r| r.dist_before.abs())
        .fold(0.0_f64, f64::max);
    let tol = AUDIT_SLACK * scale;
    let mut report = AuditReport {
        steps: traj.records.len(),
        scale,
        ..AuditReport::default()
    };
    let mut cumulative = traj.records.first().map_or(0.0, |r| r.dist_before);
    for (rec, gamma) in traj.records.iter().zip(gammas) {
        let Some(g) = (*gamma).filter(|_| rec.dist_before.is_finite()) else {
            cumulative = rec.dist_after;
            continue;
        };
        report.checked += 1;
        if g >= 1.0 {
            report.vacuous.push(rec.iteration);
        }
        let step_bound = rec.dist_before * g * g;
        if rec.dist_after > step_bound + tol {
            report.violations.push(Violation {
                iteration: rec.iteration,
                kind: ViolationKind::PerStep,
                observed: rec.dist_after,
                bound: step_bound,
            });
        }
        cumulative *= g * g;
        if rec.dist_after > cumulative + tol {
            report.violations.push(Violation {
                iteration: rec.iteration,
                kind: ViolationKind::Cumulative,
                observed: rec.dist_after,
                bound: cumulative,
            });
        }
    }
    Ok(report)
}

/// [`verify_trajectory`] with the `γ` recorded on each step.
pub fn audit(traj: &Trajectory) -> AuditReport {
    let gammas: Vec<Option<f64>> = traj.records.iter().map(|r| r.gamma_bound).collect();
    verify_trajectory(traj, &gammas).expect("lengths match by construction")
}
