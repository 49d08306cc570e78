//! Closed-form global optima of `min ‖WX − Y‖_F²`, with and without a rank cap.

use nalgebra::DVector;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{LossFunction, Reference};
use crate::matcore::{compact_svd, numeric_rank, pseudo_inverse, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub w_star: Matrix,
    /// `‖W*X − Y‖_F²`.
    pub optimal_loss: f64,
    /// `s = min(n*, r*)`; the rank of the least-norm solution when the cap is inactive.
    pub effective_rank: usize,
    /// The cap did not bind and `w_star` is the least-norm solution `YX†`.
    pub unconstrained: bool,
}

fn check_columns(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch {
            context: "X and Y example counts",
            expected: format!("{} columns", x.ncols()),
            actual: format!("{} columns", y.ncols()),
        });
    }
    Ok(())
}

/// `‖WX − Y‖_F²`.
pub fn l2_objective(w: &Matrix, x: &Matrix, y: &Matrix) -> f64 {
    (w * x - y).norm_squared()
}

/// `W* = YX†`.
pub fn least_norm_solution(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    check_columns(x, y)?;
    Ok(y * pseudo_inverse(x))
}

/// `YX† + M(XX† − I)`: every minimizer of the unconstrained problem.
pub fn general_solution(x: &Matrix, y: &Matrix, m: &Matrix) -> Result<Matrix> {
    check_columns(x, y)?;
    if m.shape() != (y.nrows(), x.nrows()) {
        return Err(Error::DimensionMismatch {
            context: "general solution offset M",
            expected: format!("{}×{}", y.nrows(), x.nrows()),
            actual: format!("{}×{}", m.nrows(), m.ncols()),
        });
    }
    let pinv = pseudo_inverse(x);
    let n0 = x.nrows();
    let projector = x * &pinv - Matrix::identity(n0, n0);
    Ok(y * pinv + m * projector)
}

/// Minimizer of `‖WX − Y‖_F²` over `rank(W) ≤ n_star`.
///
/// With `X = U_x Σ_x V_xᵀ` (compact) and `YV_x = Û Σ̂ V̂ᵀ`, the solution keeps
/// the top `s` terms of the latter: `W* = Û_s Σ̂_s V̂_sᵀ Σ_x⁻¹ U_xᵀ`.
pub fn rank_constrained_solution(x: &Matrix, y: &Matrix, n_star: usize) -> Result<OracleSolution> {
    check_columns(x, y)?;
    if n_star == 0 {
        return Err(Error::domain("rank cap n* must be at least 1"));
    }
    let least = least_norm_solution(x, y)?;
    let r_least = numeric_rank(&least);
    if r_least <= n_star {
        return Ok(OracleSolution {
            optimal_loss: l2_objective(&least, x, y),
            w_star: least,
            effective_rank: r_least,
            unconstrained: true,
        });
    }
    let sx = compact_svd(x);
    let yv = y * &sx.v;
    let sy = compact_svd(&yv);
    let s = n_star.min(sy.s.len());
    let core = sy.u.columns(0, s)
        * Matrix::from_diagonal(&DVector::from_column_slice(&sy.s[..s]))
        * sy.v.columns(0, s).transpose();
    let inv_sigma = Matrix::from_diagonal(&DVector::from_iterator(
        sx.s.len(),
        sx.s.iter().map(|v| 1.0 / v),
    ));
    let w_star = core * inv_sigma * sx.u.transpose();
    Ok(OracleSolution {
        optimal_loss: l2_objective(&w_star, x, y),
        w_star,
        effective_rank: s,
        unconstrained: false,
    })
}

/// `‖W*X − Y‖_F²` for the rank-capped problem.
pub fn optimal_loss(x: &Matrix, y: &Matrix, n_star: usize) -> Result<f64> {
    Ok(rank_constrained_solution(x, y, n_star)?.optimal_loss)
}

/// Distance reference for training on `data` with loss `lf` under a rank cap.
/// L2 measures against the capped optimum. Lp has no closed form and is
/// measured against its objective at the L2 optimum, so its distances can go
/// negative.
pub fn reference_for(data: &Dataset, lf: LossFunction, n_star: usize) -> Result<Reference> {
    let sol = rank_constrained_solution(data.x(), data.y(), n_star)?;
    let wx = &sol.w_star * data.x();
    Ok(match lf {
        LossFunction::L2 => Reference {
            objective: sol.optimal_loss,
            w_star_x: sol.unconstrained.then_some(wx),
        },
        _ => Reference::from_objective(lf.objective_of_residual(&(wx - data.y()))),
    })
}

/// Largest end-to-end rank a network with this dimension chain can express.
pub fn rank_cap(dims: &[usize]) -> usize {
    dims.iter().copied().min().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gaussian_matrix, gen_input_gaussian, gen_output_uniform, rng_for};
    use crate::init::random_orthogonal;
    use crate::matcore::{max_norm, singular_values};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn identity_input() {
        let y = gen_output_uniform(3, 3, 1);
        let w = least_norm_solution(&Matrix::identity(3, 3), &y).unwrap();
        assert!(max_norm(&(w - &y)) < 1e-12);
    }

    #[test]
    fn full_row_rank_normal_equations() {
        let x = gen_input_gaussian(4, 10, 2);
        let y = gen_output_uniform(2, 10, 3);
        let w = least_norm_solution(&x, &y).unwrap();
        let explicit = &y * x.transpose() * (&x * x.transpose()).try_inverse().unwrap();
        assert!(max_norm(&(&w - explicit)) < 1e-8 * max_norm(&w));
        let lhs = &w * &x * x.transpose();
        let rhs = &y * x.transpose();
        assert!(max_norm(&(lhs - &rhs)) < 1e-8 * max_norm(&rhs));
    }

    #[test]
    fn whitened_input() {
        // rows of an orthogonal matrix: XXᵀ = I
        let q = random_orthogonal(6, 4);
        let x = q.rows(0, 3).into_owned();
        let y = gen_output_uniform(2, 6, 5);
        let w = least_norm_solution(&x, &y).unwrap();
        assert!(max_norm(&(w - &y * x.transpose())) < 1e-12);
    }

    #[test]
    fn general_family_shares_the_loss() {
        let b = gen_input_gaussian(5, 2, 6);
        let x = &b * gen_input_gaussian(2, 8, 7); // rank 2, 5 rows
        let y = gen_output_uniform(3, 8, 8);
        let least = least_norm_solution(&x, &y).unwrap();
        let base = l2_objective(&least, &x, &y);
        assert_eq!(general_solution(&x, &y, &Matrix::zeros(3, 5)).unwrap(), least);
        let mut rng = rng_for(9, 0);
        for _ in 0..100 {
            let m = gaussian_matrix(3, 5, 2.0, &mut rng);
            let w = general_solution(&x, &y, &m).unwrap();
            assert!(rel(l2_objective(&w, &x, &y), base) < 1e-9);
            assert!(w.norm() >= least.norm() - 1e-12);
        }
        assert!(general_solution(&x, &y, &Matrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn full_row_rank_ignores_offset() {
        let x = gen_input_gaussian(3, 7, 10);
        let y = gen_output_uniform(2, 7, 11);
        let m = gaussian_matrix(2, 3, 1.0, &mut rng_for(1, 1));
        let a = general_solution(&x, &y, &m).unwrap();
        let b = least_norm_solution(&x, &y).unwrap();
        assert!(max_norm(&(a - b)) < 1e-10);
    }

    #[test]
    fn eckart_young_on_identity_input() {
        let u = random_orthogonal(4, 1);
        let v = random_orthogonal(4, 2);
        let sig = [4.0, 3.0, 2.0, 1.0];
        let y = &u * Matrix::from_diagonal(&DVector::from_column_slice(&sig)) * v.transpose();
        let x = Matrix::identity(4, 4);
        for n in 1..=4 {
            let sol = rank_constrained_solution(&x, &y, n).unwrap();
            let dropped: f64 = sig[n..].iter().map(|s| s * s).sum();
            assert!((sol.optimal_loss - dropped).abs() < 1e-10, "n* = {n}");
            assert_eq!(sol.effective_rank, n);
            let s = singular_values(&sol.w_star);
            assert!(s.iter().skip(n).all(|&v| v < 1e-10));
        }
    }

    #[test]
    fn inactive_cap_gives_least_norm() {
        let x = gen_input_gaussian(4, 9, 12);
        let y = gen_output_uniform(2, 9, 13);
        let sol = rank_constrained_solution(&x, &y, 2).unwrap();
        assert!(sol.unconstrained);
        assert_eq!(sol.w_star, least_norm_solution(&x, &y).unwrap());
        assert!(rank_constrained_solution(&x, &y, 0).is_err());
    }

    #[test]
    fn beats_random_rank_one_candidates() {
        let x = gen_input_gaussian(4, 6, 14);
        let y = gen_output_uniform(3, 6, 15);
        let best = optimal_loss(&x, &y, 1).unwrap();
        let mut rng = rng_for(16, 0);
        for _ in 0..500 {
            let a = gaussian_matrix(3, 1, 1.0, &mut rng);
            let b = gaussian_matrix(1, 4, 1.0, &mut rng);
            // scale each candidate optimally along its own ray
            let w = a * b;
            let p = &w * &x;
            let t = p.dot(&y) / p.norm_squared();
            assert!(best <= l2_objective(&(w * t), &x, &y) + 1e-12);
        }
    }

    #[test]
    fn optimal_loss_properties() {
        let w0 = gen_input_gaussian(3, 1, 17) * gen_input_gaussian(1, 5, 18);
        let x = gen_input_gaussian(5, 9, 19);
        assert!(optimal_loss(&x, &(&w0 * &x), 1).unwrap() < 1e-16 * (&w0 * &x).norm_squared());

        let y = gen_output_uniform(3, 9, 20);
        let pinv = pseudo_inverse(&x);
        let projector_residual = (&y * (Matrix::identity(9, 9) - pinv * &x)).norm_squared();
        assert!(rel(optimal_loss(&x, &y, 5).unwrap(), projector_residual) < 1e-10);

        let losses: Vec<f64> = (1..=4).map(|n| optimal_loss(&x, &y, n).unwrap()).collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{losses:?}");
    }

    #[test]
    fn references() {
        let x = gen_input_gaussian(4, 9, 21);
        let data = Dataset::new(x.clone(), gen_output_uniform(3, 9, 22)).unwrap();
        let free = reference_for(&data, LossFunction::L2, 3).unwrap();
        assert!(free.w_star_x.is_some());
        let capped = reference_for(&data, LossFunction::L2, 1).unwrap();
        assert!(capped.w_star_x.is_none());
        assert!(capped.objective > free.objective);
        let l4 = reference_for(&data, LossFunction::Lp(4), 3).unwrap();
        let r = free.w_star_x.unwrap() - data.y();
        assert!((l4.objective - r.iter().map(|v| v.powi(4)).sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn rank_cap_of_chain() {
        assert_eq!(rank_cap(&[32, 4, 4, 4]), 4);
        assert_eq!(rank_cap(&[3, 8, 2]), 2);
    }
}
