//! Dense real-matrix substrate: SVD, pseudo-inverse, norms and condition numbers.
//!
//! Every spectral quantity consumed by the learning-rate formulas and the
//! convergence constants is computed here from an exact dense SVD.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense real matrix. Entries are required to be finite by every operation
/// that admits a matrix into the laboratory (see [`ensure_finite`]).
pub type Matrix = DMatrix<f64>;

/// Compact singular value decomposition `A = U diag(S) Vᵀ`.
///
/// Only singular values above the rank tolerance are kept, so `s.len()` is the
/// numeric rank and `u`, `v` have that many orthonormal columns.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Rebuilds `U diag(S) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    pub singular_values: Vec<f64>,
    pub numeric_rank: usize,
    pub spectral_norm: f64,
    pub frobenius_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixNorms {
    pub spectral: f64,
    pub frobenius: f64,
    pub pq: f64,
    pub max: f64,
}

/// `kappa_r = σ_max/σ_r` and `kappa_scaled = ‖A‖_F/σ_min`. A vanishing
/// denominator yields `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondNumbers {
    pub kappa_r: f64,
    pub kappa_scaled: f64,
}

pub fn ensure_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Threshold below which a singular value counts as zero:
/// `max(rows, cols) · σ_max · ε`.
pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * f64::EPSILON
}

/// Full thin SVD with singular values sorted nonincreasing. Returns
/// `(U, S, V)` with `min(rows, cols)` columns in `U` and `V`.
pub(crate) fn sorted_thin_svd(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (rows, cols) = a.shape();
    let k = rows.min(cols);
    if k == 0 {
        return (
            Matrix::zeros(rows, 0),
            Vec::new(),
            Matrix::zeros(cols, 0),
        );
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("U requested");
    let v = svd.v_t.expect("Vᵀ requested").transpose();
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut su = Matrix::zeros(rows, k);
    let mut sv = Matrix::zeros(cols, k);
    let mut ss = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_column(dst, &v.column(src));
        ss.push(s[src].max(0.0));
    }
    (su, ss, sv)
}

/// Compact SVD: drops singular values at or below the rank tolerance.
pub fn compact_svd(a: &Matrix) -> Svd {
    let (rows, cols) = a.shape();
    let (u, s, v) = sorted_thin_svd(a);
    let smax = s.first().copied().unwrap_or(0.0);
    let tol = rank_tolerance(rows, cols, smax);
    let r = s.iter().take_while(|&&x| x > tol && x > 0.0).count();
    Svd {
        u: u.columns(0, r).into_owned(),
        s: s[..r].to_vec(),
        v: v.columns(0, r).into_owned(),
    }
}

/// All `min(rows, cols)` singular values, nonincreasing, zeros included.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .map(|x| x.max(0.0))
        .collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn numeric_rank(a: &Matrix) -> usize {
    let s = singular_values(a);
    let smax = s.first().copied().unwrap_or(0.0);
    let tol = rank_tolerance(a.nrows(), a.ncols(), smax);
    s.iter().filter(|&&x| x > tol && x > 0.0).count()
}

pub fn spectral_summary(a: &Matrix) -> SpectralSummary {
    let s = singular_values(a);
    let smax = s.first().copied().unwrap_or(0.0);
    let tol = rank_tolerance(a.nrows(), a.ncols(), smax);
    SpectralSummary {
        numeric_rank: s.iter().filter(|&&x| x > tol && x > 0.0).count(),
        spectral_norm: smax,
        frobenius_norm: a.norm(),
        singular_values: s,
    }
}

pub fn spectral_norm(a: &Matrix) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Moore–Penrose pseudo-inverse via the compact SVD.
pub fn pseudo_inverse(a: &Matrix) -> Matrix {
    let svd = compact_svd(a);
    let mut v = svd.v;
    for (j, s) in svd.s.iter().enumerate() {
        v.column_mut(j).scale_mut(1.0 / s);
    }
    v * svd.u.transpose()
}

/// Entrywise `L_{p,q}` norm: `(Σ_j (Σ_i |a_ij|^p)^{q/p})^{1/q}`.
pub fn lpq_norm(a: &Matrix, p: f64, q: f64) -> Result<f64> {
    if !(p >= 1.0 && q >= 1.0) {
        return Err(Error::domain(format!("L_{{p,q}} norm needs p, q >= 1 (got p={p}, q={q})")));
    }
    let total: f64 = a
        .column_iter()
        .map(|col| {
            let inner: f64 = col.iter().map(|x| x.abs().powf(p)).sum();
            inner.powf(q / p)
        })
        .sum();
    Ok(total.powf(1.0 / q))
}

pub fn max_norm(a: &Matrix) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn matrix_norms(a: &Matrix, p: f64, q: f64) -> Result<MatrixNorms> {
    let pq = lpq_norm(a, p, q)?;
    Ok(MatrixNorms {
        spectral: spectral_norm(a),
        frobenius: a.norm(),
        pq,
        max: max_norm(a),
    })
}

/// Singular value σ_r (1-based) treating anything at or below the rank
/// tolerance, or an index beyond `min(rows, cols)`, as an exact zero.
pub(crate) fn sigma_r_of(s: &[f64], rows: usize, cols: usize, r: usize) -> f64 {
    let smax = s.first().copied().unwrap_or(0.0);
    let tol = rank_tolerance(rows, cols, smax);
    match s.get(r.wrapping_sub(1)) {
        Some(&x) if r >= 1 && x > tol => x,
        _ => 0.0,
    }
}

/// `x / y` under the convention `1/0 = ∞`, `0/0 = ∞` for condition numbers.
pub(crate) fn ratio_or_inf(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

/// Condition numbers from a precomputed nonincreasing spectrum.
pub fn cond_numbers_from_spectrum(
    s: &[f64],
    rows: usize,
    cols: usize,
    frobenius: f64,
    r: usize,
) -> CondNumbers {
    let k = rows.min(cols);
    let smax = s.first().copied().unwrap_or(0.0);
    CondNumbers {
        kappa_r: ratio_or_inf(smax, sigma_r_of(s, rows, cols, r)),
        kappa_scaled: ratio_or_inf(frobenius, sigma_r_of(s, rows, cols, k)),
    }
}

/// `κ_r(A)` and the scaled condition number `κ̃(A)`.
pub fn cond_numbers(a: &Matrix, r: usize) -> Result<CondNumbers> {
    let k = a.nrows().min(a.ncols());
    if r < 1 || r > k {
        return Err(Error::domain(format!(
            "condition number index r={r} outside 1..={k}"
        )));
    }
    let s = singular_values(a);
    Ok(cond_numbers_from_spectrum(&s, a.nrows(), a.ncols(), a.norm(), r))
}

/// `κ(A) = σ_max/σ_min` with `σ_min` the `min(rows, cols)`-th singular value.
pub fn cond(a: &Matrix) -> f64 {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return f64::INFINITY;
    }
    let s = singular_values(a);
    ratio_or_inf(s[0], sigma_r_of(&s, a.nrows(), a.ncols(), k))
}
