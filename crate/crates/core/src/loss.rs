//! Entrywise convex losses, the `J` matrix, layer gradients and distance to
//! the global optimum.

use std::fmt;
use std::str::FromStr;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matcore::Matrix;
use crate::network::Network;

/// Values below this are shown as this in reports.
pub const DISPLAY_FLOOR: f64 = 1e-10;

/// Entrywise loss `ℓ(z; b)` summed over outputs and examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossFunction {
    /// `(z − b)² / 2`.
    L2,
    /// `|z − b|^p / p` for even `p ≥ 2`.
    Lp(u32),
}

impl LossFunction {
    pub fn lp(p: u32) -> Result<Self> {
        if p < 2 || p % 2 != 0 {
            return Err(Error::domain(format!("Lp loss needs an even p >= 2, got {p}")));
        }
        Ok(LossFunction::Lp(p))
    }

    pub fn p(&self) -> u32 {
        match self {
            LossFunction::L2 => 2,
            LossFunction::Lp(p) => *p,
        }
    }

    pub fn value(&self, z: f64, b: f64) -> f64 {
        let p = self.p();
        (z - b).powi(p as i32) / p as f64
    }

    /// `ℓ′(z; b)`.
    pub fn deriv(&self, z: f64, b: f64) -> f64 {
        (z - b).powi(self.p() as i32 - 1)
    }

    /// `C(z)` with `|ℓ″(z; b)| ≤ C(z)`, as a function of the residual `z − b`.
    pub fn curvature_bound(&self, residual: f64) -> f64 {
        let p = self.p();
        (p - 1) as f64 * residual.abs().powi(p as i32 - 2)
    }

    /// `Σ |r|^p`, i.e. `p` times the summed loss. For L2 this is `‖WX − Y‖_F²`,
    /// the scale on which optimal losses and distances are reported.
    pub fn objective_of_residual(&self, residual: &Matrix) -> f64 {
        let p = self.p() as i32;
        residual.iter().map(|r| r.powi(p)).sum()
    }
}

impl FromStr for LossFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" | "L2" => Ok(LossFunction::L2),
            _ => {
                let p = s
                    .strip_prefix("lp:")
                    .and_then(|p| p.parse::<u32>().ok())
                    .ok_or_else(|| Error::domain(format!("unknown loss {s:?} (l2|lp:<p>)")))?;
                LossFunction::lp(p)
            }
        }
    }
}

impl fmt::Display for LossFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossFunction::L2 => f.write_str("l2"),
            LossFunction::Lp(p) => write!(f, "lp:{p}"),
        }
    }
}

pub(crate) fn check_dims(net: &Network, data: &Dataset) -> Result<()> {
    let dims = net.dims();
    let (n0, nl) = (dims[0], dims[dims.len() - 1]);
    if n0 != data.d_in() || nl != data.d_out() {
        return Err(Error::DimensionMismatch {
            context: "network vs dataset",
            expected: format!("n_0 = {}, n_L = {}", data.d_in(), data.d_out()),
            actual: format!("n_0 = {n0}, n_L = {nl}"),
        });
    }
    Ok(())
}

/// `W_{L:1}X − Y`.
pub fn residual(net: &Network, data: &Dataset) -> Result<Matrix> {
    check_dims(net, data)?;
    Ok(net.end_to_end() * data.x() - data.y())
}

pub(crate) fn loss_of_residual(lf: LossFunction, residual: &Matrix) -> f64 {
    lf.objective_of_residual(residual) / lf.p() as f64
}

/// `Σ_i Σ_j ℓ(N(xⁱ)_j; yⁱ_j)`.
pub fn total_loss(net: &Network, data: &Dataset, lf: LossFunction) -> Result<f64> {
    Ok(loss_of_residual(lf, &residual(net, data)?))
}

/// `Jᵀ` built directly from the residual: entrywise `ℓ′`, shape `d_out × m`.
pub(crate) fn j_transpose_of_residual(lf: LossFunction, residual: &Matrix) -> Matrix {
    match lf {
        LossFunction::L2 => residual.clone(),
        _ => {
            let q = lf.p() as i32 - 1;
            residual.map(|r| r.powi(q))
        }
    }
}

/// `J_ij = ℓ′(N(xⁱ)_j; yⁱ_j)`, shape `m × d_out`.
pub fn j_matrix(net: &Network, data: &Dataset, lf: LossFunction) -> Result<Matrix> {
    Ok(j_transpose_of_residual(lf, &residual(net, data)?).transpose())
}

/// `Aᵀ Jᵀ (BX)ᵀ` with `A = W_{L:ℓ+1}` and `BX = W_{ℓ−1:1}X`.
pub(crate) fn gradient_from_parts(a: &Matrix, jt: &Matrix, bx: &Matrix) -> Matrix {
    let left = a.tr_mul(jt);
    left * bx.transpose()
}

/// `∂L/∂W_ℓ = (W_{L:ℓ+1})ᵀ Jᵀ (W_{ℓ−1:1}X)ᵀ`.
pub fn layer_gradient(net: &Network, data: &Dataset, lf: LossFunction, l: usize) -> Result<Matrix> {
    net.check_layer(l)?;
    let jt = j_transpose_of_residual(lf, &residual(net, data)?);
    let a = net.partial_product(net.depth(), l + 1)?;
    let bx = net.partial_product(l - 1, 1)? * data.x();
    Ok(gradient_from_parts(&a, &jt, &bx))
}

/// What distances are measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    /// Objective (`Σ|r|^p`) at the reference solution.
    pub objective: f64,
    /// `W*X` when `W*` is the unconstrained L2 minimizer; lets L2 distances be
    /// computed as `‖WX − W*X‖_F²` without cancellation.
    pub w_star_x: Option<Matrix>,
}

impl Reference {
    pub fn from_objective(objective: f64) -> Self {
        Reference {
            objective,
            w_star_x: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub total_loss: f64,
    /// `Σ|r|^p`; equals `‖WX − Y‖_F²` for L2.
    pub objective: f64,
    /// `(objective − reference objective) / m`.
    pub dist_to_opt: f64,
    /// `dist_to_opt` floored at [`DISPLAY_FLOOR`].
    pub dist_display: f64,
    pub residual_frobenius: f64,
}

pub fn display_dist(raw: f64) -> f64 {
    if raw < DISPLAY_FLOOR {
        DISPLAY_FLOOR
    } else {
        raw
    }
}

pub(crate) fn report_from_parts(
    lf: LossFunction,
    prediction: &Matrix,
    data: &Dataset,
    reference: &Reference,
) -> ErrorReport {
    let r = prediction - data.y();
    let objective = lf.objective_of_residual(&r);
    let m = data.m() as f64;
    let dist = match (&reference.w_star_x, lf) {
        (Some(wsx), LossFunction::L2) => (prediction - wsx).norm_squared() / m,
        _ => (objective - reference.objective) / m,
    };
    ErrorReport {
        total_loss: objective / lf.p() as f64,
        objective,
        dist_to_opt: dist,
        dist_display: display_dist(dist),
        residual_frobenius: r.norm(),
    }
}

/// Error report against a reference objective, e.g. the oracle's optimal loss.
pub fn error_report(
    net: &Network,
    data: &Dataset,
    lf: LossFunction,
    oracle_loss: f64,
) -> Result<ErrorReport> {
    error_report_against(net, data, lf, &Reference::from_objective(oracle_loss))
}

pub fn error_report_against(
    net: &Network,
    data: &Dataset,
    lf: LossFunction,
    reference: &Reference,
) -> Result<ErrorReport> {
    check_dims(net, data)?;
    let pred = net.end_to_end() * data.x();
    Ok(report_from_parts(lf, &pred, data, reference))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_input_gaussian, gen_output_uniform};
    use crate::init::{initialize, InitKind};
    use crate::matcore::pseudo_inverse;

    fn problem(dims: &[usize], m: usize, seed: u64) -> (Network, Dataset) {
        let net = initialize(&InitKind::Random.into(), dims, seed).unwrap();
        let x = gen_input_gaussian(dims[0], m, seed + 100);
        let y = gen_output_uniform(dims[dims.len() - 1], m, seed + 200);
        (net, Dataset::new(x, y).unwrap())
    }

    fn finite_difference(net: &Network, data: &Dataset, lf: LossFunction, l: usize) -> Matrix {
        let h = 1e-6;
        let w = net.layer(l);
        let mut g = Matrix::zeros(w.nrows(), w.ncols());
        for r in 0..w.nrows() {
            for c in 0..w.ncols() {
                let mut plus = net.clone();
                plus.layer_mut(l)[(r, c)] += h;
                let mut minus = net.clone();
                minus.layer_mut(l)[(r, c)] -= h;
                g[(r, c)] = (total_loss(&plus, data, lf).unwrap()
                    - total_loss(&minus, data, lf).unwrap())
                    / (2.0 * h);
            }
        }
        g
    }

    #[test]
    fn loss_parsing() {
        assert_eq!("l2".parse::<LossFunction>().unwrap(), LossFunction::L2);
        assert_eq!("lp:4".parse::<LossFunction>().unwrap(), LossFunction::Lp(4));
        assert!("lp:3".parse::<LossFunction>().is_err());
        assert!("lp:0".parse::<LossFunction>().is_err());
        assert!("huber".parse::<LossFunction>().is_err());
        assert_eq!(LossFunction::Lp(6).to_string(), "lp:6");
    }

    #[test]
    fn scalar_pieces() {
        let l4 = LossFunction::Lp(4);
        assert_eq!(LossFunction::L2.value(0.0, 2.0), 2.0);
        assert_eq!(LossFunction::L2.deriv(3.0, 1.0), 2.0);
        assert_eq!(LossFunction::L2.curvature_bound(5.0), 1.0);
        assert_eq!(l4.value(3.0, 1.0), 4.0);
        assert_eq!(l4.deriv(3.0, 1.0), 8.0);
        assert_eq!(l4.curvature_bound(-2.0), 12.0);
    }

    #[test]
    fn single_point_loss() {
        let net = Network::new(vec![Matrix::zeros(1, 1)]).unwrap();
        let data = Dataset::new(Matrix::identity(1, 1), Matrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(total_loss(&net, &data, LossFunction::L2).unwrap(), 2.0);
        let net = Network::new(vec![Matrix::from_element(1, 1, 3.0)]).unwrap();
        let data = Dataset::new(Matrix::identity(1, 1), Matrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(j_matrix(&net, &data, LossFunction::L2).unwrap()[(0, 0)], 2.0);
    }

    #[test]
    fn total_loss_matches_double_loop() {
        let (net, data) = problem(&[3, 4, 2], 7, 1);
        for lf in [LossFunction::L2, LossFunction::Lp(4)] {
            let w = net.end_to_end();
            let mut expected = 0.0;
            for i in 0..data.m() {
                for j in 0..data.d_out() {
                    let mut z = 0.0;
                    for k in 0..data.d_in() {
                        z += w[(j, k)] * data.x()[(k, i)];
                    }
                    expected += lf.value(z, data.y()[(j, i)]);
                }
            }
            let got = total_loss(&net, &data, lf).unwrap();
            assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn j_matrix_entries() {
        let (net, data) = problem(&[3, 2], 5, 2);
        let r = residual(&net, &data).unwrap();
        assert_eq!(j_matrix(&net, &data, LossFunction::L2).unwrap(), r.transpose());
        let j4 = j_matrix(&net, &data, LossFunction::Lp(4)).unwrap();
        for i in 0..5 {
            for j in 0..2 {
                assert!((j4[(i, j)] - r[(j, i)].powi(3)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_at_optimum_is_zero() {
        let w = Matrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.0, 1.5, 1.0]);
        let x = gen_input_gaussian(3, 6, 3);
        let data = Dataset::new(x.clone(), &w * &x).unwrap();
        let net = Network::new(vec![w]).unwrap();
        assert!(total_loss(&net, &data, LossFunction::L2).unwrap() < 1e-28);
        assert!(layer_gradient(&net, &data, LossFunction::L2, 1).unwrap().amax() < 1e-14);
        assert!(j_matrix(&net, &data, LossFunction::L2).unwrap().amax() < 1e-14);
    }

    #[test]
    fn depth_one_gradient_is_least_squares() {
        let (net, data) = problem(&[4, 3], 9, 4);
        let g = layer_gradient(&net, &data, LossFunction::L2, 1).unwrap();
        let expected = (net.layer(1) * data.x() - data.y()) * data.x().transpose();
        assert!((g - expected).amax() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..6 {
            let (net, data) = problem(&[3, 4, 5, 2], 6, seed);
            for lf in [LossFunction::L2, LossFunction::Lp(4)] {
                for l in 1..=3 {
                    let g = layer_gradient(&net, &data, lf, l).unwrap();
                    let fd = finite_difference(&net, &data, lf, l);
                    let rel = (&g - &fd).amax() / g.amax().max(1e-12);
                    assert!(rel < 1e-5, "seed {seed} {lf} layer {l}: {rel}");
                }
            }
        }
    }

    #[test]
    fn bad_layer_and_shape() {
        let (net, data) = problem(&[3, 2], 4, 5);
        assert!(layer_gradient(&net, &data, LossFunction::L2, 0).is_err());
        assert!(layer_gradient(&net, &data, LossFunction::L2, 2).is_err());
        let other = Dataset::new(Matrix::zeros(4, 4), Matrix::zeros(2, 4)).unwrap();
        assert!(total_loss(&net, &other, LossFunction::L2).is_err());
    }

    #[test]
    fn distances_and_decomposition() {
        let (net, data) = problem(&[5, 6, 3], 12, 6);
        let w_star = data.y() * pseudo_inverse(data.x());
        let w_star_x = &w_star * data.x();
        let opt = (&w_star_x - data.y()).norm_squared();
        let rep = error_report(&net, &data, LossFunction::L2, opt).unwrap();
        let direct = (net.end_to_end() * data.x() - &w_star_x).norm_squared();
        assert!((2.0 * rep.total_loss - opt - direct).abs() <= 1e-8 * direct);
        assert!((rep.dist_to_opt - direct / 12.0).abs() <= 1e-9 * direct);
        let exact = error_report_against(
            &net,
            &data,
            LossFunction::L2,
            &Reference {
                objective: opt,
                w_star_x: Some(w_star_x),
            },
        )
        .unwrap();
        assert!((exact.dist_to_opt - direct / 12.0).abs() <= 1e-12 * direct);

        let at_opt = Network::new(vec![w_star]).unwrap();
        let rep = error_report(&at_opt, &data, LossFunction::L2, opt).unwrap();
        assert!(rep.dist_to_opt.abs() < 1e-12);
        assert_eq!(rep.dist_display, DISPLAY_FLOOR);
        assert_eq!(display_dist(3e-10), 3e-10);
    }
}
