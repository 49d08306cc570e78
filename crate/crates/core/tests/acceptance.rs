//! Acceptance suite. Each test prints one `PASS`/`FAIL` line straight to the
//! process stderr so the verdicts show up even when libtest captures output.

use std::io::Write;
use std::time::Instant;

use layerwise::data::{gaussian_matrix, rng_for, synthetic, teacher_outputs, Dataset, Spectrum, SyntheticSpec};
use layerwise::init::{initialize, InitKind};
use layerwise::loss::{layer_gradient, total_loss, LossFunction};
use layerwise::matcore::{cond, Matrix};
use layerwise::network::Network;
use layerwise::optim::{bcgd_step, compute_lr, run_bcgd, LrPolicy, Ordering, StopRule, SweepState};
use layerwise::oracle::{
    general_solution, l2_objective, least_norm_solution, rank_constrained_solution, reference_for,
};
use layerwise::sgd::{run_bcsgd, FloorTracker};
use layerwise::theory::{audit, contraction_margin, r_l};

fn verdict(n: u32, ok: bool, detail: String) {
    let line = format!(
        "acceptance {n:>2}: {} {detail}\n",
        if ok { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn gaussian_data(d_in: usize, d_out: usize, m: usize, seed: u64) -> Dataset {
    synthetic(&SyntheticSpec {
        d_in,
        d_out,
        m,
        spectrum: Spectrum::Gaussian,
        seed,
    })
    .unwrap()
}

fn chain(n0: usize, width: usize, nl: usize, depth: usize) -> Vec<usize> {
    let mut dims = vec![n0];
    dims.extend(std::iter::repeat_n(width, depth - 1));
    dims.push(nl);
    dims
}

#[test]
fn a01_one_sweep_convergence() {
    let start = Instant::now();
    let data = gaussian_data(32, 4, 100, 1);
    let depth = 200;
    let dims = chain(32, 32, 4, depth);
    let mut net = initialize(&InitKind::OrthIdentity.into(), &dims, 1).unwrap();
    let reference = reference_for(&data, LossFunction::L2, 4).unwrap();
    let traj = run_bcgd(
        &mut net,
        &data,
        LossFunction::L2,
        LrPolicy::OptimalL2,
        Ordering::Descending,
        StopRule::sweeps(1),
        &reference,
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let k = cond(data.x());
    let dist = traj.final_dist();
    let ok = traj.len() == depth && dist <= 1e-8;
    verdict(
        1,
        ok,
        format!(
            "one descending sweep, L={depth}: dist {dist:.3e} (<= 1e-8), κ²(X)={:.2}, initial {:.3e}, {elapsed:.1}s",
            k * k,
            traj.meta.initial_dist
        ),
    );
    assert!(ok);
}

fn loss_sequence(kind: InitKind, width: usize, data: &Dataset) -> Vec<f64> {
    let dims = chain(32, width, 4, 4);
    let mut net = initialize(&kind.into(), &dims, 7).unwrap();
    let reference = reference_for(data, LossFunction::L2, 4).unwrap();
    let traj = run_bcgd(
        &mut net,
        data,
        LossFunction::L2,
        LrPolicy::OptimalL2,
        Ordering::Descending,
        StopRule::sweeps(10),
        &reference,
    )
    .unwrap();
    traj.records.iter().map(|r| r.loss_after).collect()
}

#[test]
fn a02_width_irrelevance() {
    let data = gaussian_data(32, 4, 100, 2);
    let mut worst = 0.0_f64;
    for kind in [InitKind::OrthIdentity, InitKind::Balanced] {
        let base = loss_sequence(kind, 36, &data);
        assert_eq!(base.len(), 40);
        for width in [72, 128] {
            let other = loss_sequence(kind, width, &data);
            for (a, b) in base.iter().zip(&other) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let ok = worst <= 1e-10;
    verdict(
        2,
        ok,
        format!("widths 36/72/128, orth-identity and balanced: max loss gap {worst:.3e} (<= 1e-10)"),
    );
    assert!(ok);
}

#[test]
fn a03_exact_drop_identity() {
    let x = gaussian_matrix(6, 20, 1.0, &mut rng_for(3, 1));
    let y = gaussian_matrix(3, 20, 1.0, &mut rng_for(3, 2));
    let data = Dataset::new(x, y).unwrap();
    let dims = [6, 7, 8, 7, 5, 3];
    let mut net = initialize(&InitKind::Random.into(), &dims, 3).unwrap();
    let reference = reference_for(&data, LossFunction::L2, 3).unwrap();
    let mut state = SweepState::new(5, Ordering::Descending);
    let mut worst = 0.0_f64;
    let mut violations = 0;
    for _ in 0..25 {
        let i = state.layer();
        // independent evaluation of G, A, BX before the step
        let g = layer_gradient(&net, &data, LossFunction::L2, i).unwrap();
        let a = net.partial_product(5, i + 1).unwrap();
        let bx = net.partial_product(i - 1, 1).unwrap() * data.x();
        let before = 2.0 * total_loss(&net, &data, LossFunction::L2).unwrap();
        let drop = g.norm_squared().powi(2) / (&a * &g * &bx).norm_squared();
        bcgd_step(&mut net, &data, LossFunction::L2, &mut state, LrPolicy::OptimalL2, &reference).unwrap();
        let after = 2.0 * total_loss(&net, &data, LossFunction::L2).unwrap();
        let gap = (after - (before - drop)).abs() / before;
        worst = worst.max(gap);
        if gap > 1e-8 {
            violations += 1;
        }
    }
    let ok = violations == 0;
    verdict(
        3,
        ok,
        format!("25 optimal steps, L=5: {violations} violations, worst relative gap {worst:.3e} (<= 1e-8)"),
    );
    assert!(ok);
}

#[test]
fn a04_rate_bound_audit() {
    let data = gaussian_data(8, 3, 30, 4);
    let mut summary = Vec::new();
    let mut ok = true;
    for eta in [0.5, 1.0] {
        for depth in [2, 5] {
            let dims = chain(8, 8, 3, depth);
            let mut net = initialize(&InitKind::OrthIdentity.into(), &dims, 4).unwrap();
            let reference = reference_for(&data, LossFunction::L2, 3).unwrap();
            let traj = run_bcgd(
                &mut net,
                &data,
                LossFunction::L2,
                LrPolicy::theory(eta).unwrap(),
                Ordering::Descending,
                StopRule::sweeps(20),
                &reference,
            )
            .unwrap();
            let rep = audit(&traj);
            ok &= rep.passed() && rep.checked == 20 * depth;
            summary.push(format!("η={eta} L={depth}: {}", rep.violations.len()));
        }
    }
    verdict(4, ok, format!("violations per run [{}]", summary.join(", ")));
    assert!(ok);
}

fn fd_gradient(net: &Network, data: &Dataset, lf: LossFunction, l: usize) -> Matrix {
    let h = 1e-6;
    let w = net.layer(l);
    let mut g = Matrix::zeros(w.nrows(), w.ncols());
    let eval = |delta: f64, r: usize, c: usize| {
        let mut layers = net.layers().to_vec();
        layers[l - 1][(r, c)] += delta;
        total_loss(&Network::new(layers).unwrap(), data, lf).unwrap()
    };
    for r in 0..w.nrows() {
        for c in 0..w.ncols() {
            g[(r, c)] = (eval(h, r, c) - eval(-h, r, c)) / (2.0 * h);
        }
    }
    g
}

#[test]
fn a05_gradient_finite_differences() {
    let mut rng = rng_for(5, 0);
    let mut worst = 0.0_f64;
    use rand_like::Draw;
    for case in 0..50 {
        let depth = 1 + rng.draw(4);
        let dims: Vec<usize> = (0..=depth).map(|_| 1 + rng.draw(6)).collect();
        let m = 1 + rng.draw(8);
        let layers: Vec<Matrix> = (1..=depth)
            .map(|l| gaussian_matrix(dims[l], dims[l - 1], 1.0 / (dims[l - 1] as f64).sqrt(), &mut rng))
            .collect();
        let net = Network::new(layers).unwrap();
        let x = gaussian_matrix(dims[0], m, 1.0, &mut rng);
        let y = gaussian_matrix(dims[depth], m, 1.0, &mut rng);
        let data = Dataset::new(x, y).unwrap();
        for lf in [LossFunction::L2, LossFunction::Lp(4)] {
            for l in 1..=depth {
                let g = layer_gradient(&net, &data, lf, l).unwrap();
                let fd = fd_gradient(&net, &data, lf, l);
                let scale = g.amax().max(fd.amax());
                if scale == 0.0 {
                    continue;
                }
                let rel = (&g - &fd).amax() / scale;
                assert!(rel.is_finite(), "case {case}");
                worst = worst.max(rel);
            }
        }
    }
    let ok = worst < 1e-5;
    verdict(
        5,
        ok,
        format!("50 random nets, L2 and L4: max relative error {worst:.3e} (< 1e-5)"),
    );
    assert!(ok);
}

/// Tiny integer draws on top of the seeded generator used everywhere else.
mod rand_like {
    pub trait Draw {
        fn draw(&mut self, n: usize) -> usize;
    }

    impl Draw for rand_chacha::ChaCha8Rng {
        fn draw(&mut self, n: usize) -> usize {
            use rand_chacha::rand_core::RngCore;
            (self.next_u64() % n as u64) as usize
        }
    }
}

/// Capped optimum recomputed on a separate path: project `Y` onto the row
/// space of `X`, truncate the projection's SVD, add back the orthogonal part.
fn truncation_loss(x: &Matrix, y: &Matrix, n_star: usize) -> f64 {
    let m = x.ncols();
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12;
    let vt = svd.v_t.unwrap();
    let mut p = Matrix::zeros(m, m);
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > tol {
            let v = vt.row(k).transpose();
            p += &v * v.transpose();
        }
    }
    let yp = y * &p;
    let outside = (y - &yp).norm_squared();
    let mut s: Vec<f64> = yp.svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    outside + s.iter().skip(n_star).map(|v| v * v).sum::<f64>()
}

#[test]
fn a06_oracle_correctness() {
    let mut rng = rng_for(6, 0);
    // (a) full row rank: normal equations
    let x = gaussian_matrix(5, 12, 1.0, &mut rng);
    let y = gaussian_matrix(3, 12, 1.0, &mut rng);
    let w = least_norm_solution(&x, &y).unwrap();
    let rhs = &y * x.transpose();
    let rel_a = (&w * &x * x.transpose() - &rhs).norm() / rhs.norm();

    // (b) rank-deficient X, random offsets
    let xd = gaussian_matrix(6, 2, 1.0, &mut rng) * gaussian_matrix(2, 10, 1.0, &mut rng);
    let yd = gaussian_matrix(3, 10, 1.0, &mut rng);
    let base = l2_objective(&least_norm_solution(&xd, &yd).unwrap(), &xd, &yd);
    let mut rel_b = 0.0_f64;
    for _ in 0..100 {
        let m = gaussian_matrix(3, 6, 3.0, &mut rng);
        let wg = general_solution(&xd, &yd, &m).unwrap();
        rel_b = rel_b.max((l2_objective(&wg, &xd, &yd) - base).abs() / base);
    }

    // (c) rank cap: independent truncation and random feasible candidates
    let xc = gaussian_matrix(4, 6, 1.0, &mut rng);
    let yc = gaussian_matrix(3, 6, 1.0, &mut rng);
    let mut rel_c = 0.0_f64;
    let mut beaten = 0;
    for n_star in 1..=2 {
        let sol = rank_constrained_solution(&xc, &yc, n_star).unwrap();
        let indep = truncation_loss(&xc, &yc, n_star);
        rel_c = rel_c.max((sol.optimal_loss - indep).abs() / indep);
        for k in 0..500 {
            let cand = if k % 2 == 0 {
                gaussian_matrix(3, n_star, 1.0, &mut rng) * gaussian_matrix(n_star, 4, 1.0, &mut rng)
            } else {
                // nearby feasible point: perturb a factorization of W*
                let svd = sol.w_star.clone().svd(true, true);
                let u = svd.u.unwrap().columns(0, n_star).into_owned();
                let sv = Matrix::from_diagonal(&svd.singular_values.rows(0, n_star).into_owned());
                let vt = svd.v_t.unwrap().rows(0, n_star).into_owned();
                (u + gaussian_matrix(3, n_star, 1e-3, &mut rng)) * sv * vt
            };
            if l2_objective(&cand, &xc, &yc) < sol.optimal_loss {
                beaten += 1;
            }
        }
    }
    let ok = rel_a <= 1e-8 && rel_b <= 1e-9 && rel_c <= 1e-8 && beaten == 0;
    verdict(
        6,
        ok,
        format!(
            "(a) {rel_a:.2e} (<= 1e-8), (b) {rel_b:.2e} (<= 1e-9), (c) {rel_c:.2e} (<= 1e-8), {beaten} of 1000 candidates below the optimum"
        ),
    );
    assert!(ok);
}

#[test]
fn a07_lp_two_matches_optimal() {
    let mut rng = rng_for(7, 0);
    use rand_like::Draw;
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let depth = 1 + rng.draw(4);
        let dims: Vec<usize> = (0..=depth).map(|_| 2 + rng.draw(5)).collect();
        let m = 3 + rng.draw(8);
        let layers: Vec<Matrix> = (1..=depth)
            .map(|l| gaussian_matrix(dims[l], dims[l - 1], 1.0, &mut rng))
            .collect();
        let net = Network::new(layers).unwrap();
        let data = Dataset::new(
            gaussian_matrix(dims[0], m, 1.0, &mut rng),
            gaussian_matrix(dims[depth], m, 1.0, &mut rng),
        )
        .unwrap();
        let mut state = SweepState::new(depth, Ordering::Ascending);
        for _ in 0..rng.draw(depth) {
            state.advance();
        }
        let a = compute_lr(LrPolicy::OptimalL2, &net, &data, LossFunction::L2, &state).unwrap();
        let b = compute_lr(LrPolicy::NearOptimalLp { p: 2 }, &net, &data, LossFunction::L2, &state).unwrap();
        worst = worst.max((a - b).abs() / a.abs());
    }
    let ok = worst <= 1e-12;
    verdict(7, ok, format!("100 random states: max relative gap {worst:.3e} (<= 1e-12)"));
    assert!(ok);
}

#[test]
fn a08_bcsgd_floor_bracket() {
    let start = Instant::now();
    let (d_in, d_out, m, depth, eta, sweeps, seeds) = (8, 2, 40, 2, 0.5, 2000, 20u64);
    let x = gaussian_matrix(d_in, m, (1.0 / d_in as f64).sqrt(), &mut rng_for(8, 1));
    let y = teacher_outputs(&x, d_out, 0.1, 8);
    let data = Dataset::new(x, y).unwrap();
    let reference = reference_for(&data, LossFunction::L2, d_out).unwrap();
    let oracle = reference.objective;
    // Hidden width 4. At width 8 the directions of W_1 that W_2 ignores
    // drift toward singular, κ̃(W_1X) blows up and the upper floor is +∞.
    let dims = chain(d_in, 4, d_out, depth);
    // constants gathered over the same window the average is taken on
    let mut tail_tracker = FloorTracker::new(eta, depth);
    let mut whole = FloorTracker::new(eta, depth);
    let mut tail_sum = 0.0;
    for seed in 0..seeds {
        let mut net = initialize(&InitKind::OrthIdentity.into(), &dims, 100 + seed).unwrap();
        let run = run_bcsgd(&mut net, &data, eta, sweeps, Ordering::Descending, seed, &reference).unwrap();
        tail_tracker.merge(&run.tail_tracker);
        whole.merge(&run.tracker);
        tail_sum += run.tail_mean();
    }
    let tail = tail_sum / seeds as f64;
    let b = tail_tracker.bracket(oracle).expect("finite condition numbers");
    let w = whole.bracket(oracle).expect("finite condition numbers");
    let lo = 0.5 * b.floor_lower;
    let hi = 2.0 * b.floor_upper;
    let ok = oracle > 0.0 && tail > lo && tail <= hi;
    verdict(
        8,
        ok,
        format!(
            "tail mean ‖(W−W*)X‖² {tail:.4e} in [{lo:.4e}, {hi:.4e}] (L(W*)={oracle:.3e}, tail γ_upp={:.6}, γ_low={:.6}; whole-run upper floor {:.3e}), {:.1}s",
            b.gamma_upp,
            b.gamma_low,
            w.floor_upper,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn a09_bottleneck_stagnation() {
    let data = gaussian_data(32, 4, 100, 9);
    let dims = [32, 4, 4, 4, 4];
    let mut net = initialize(&InitKind::OrthIdentity.into(), &dims, 9).unwrap();
    let reference = reference_for(&data, LossFunction::L2, 4).unwrap();
    let traj = run_bcgd(
        &mut net,
        &data,
        LossFunction::L2,
        LrPolicy::OptimalL2,
        Ordering::Descending,
        StopRule::sweeps(5),
        &reference,
    )
    .unwrap();
    let rep = audit(&traj);
    let mut mismatched = 0;
    let mut blocked = 0;
    for r in &traj.records {
        // W_{i−1:1}X has at most 4 rows while rank X = 32 for every i ≥ 2
        let rank_limited = r.layer >= 2;
        let gamma_one = r.gamma_bound == Some(1.0);
        let flagged = rep.vacuous.contains(&r.iteration);
        if rank_limited {
            blocked += 1;
        }
        if rank_limited != gamma_one || gamma_one != flagged {
            mismatched += 1;
        }
    }
    let ok = mismatched == 0 && blocked == 15 && rep.passed();
    verdict(
        9,
        ok,
        format!(
            "Arch-1 chain {dims:?}: {blocked} rank-limited updates, {} flagged vacuous, {mismatched} mismatches, {} violations",
            rep.vacuous.len(),
            rep.violations.len()
        ),
    );
    assert!(ok);
}

#[test]
fn a10_basin_constants() {
    let r1 = r_l(1);
    let mut decreasing = true;
    let mut above = true;
    let mut margin_ok = true;
    let mut prev = r_l(2) * 2.0;
    for l in 3..=10_000usize {
        let v = l as f64 * r_l(l);
        decreasing &= v < prev;
        above &= v > 0.2;
        prev = v;
    }
    for l in 1..=10_000usize {
        margin_ok &= contraction_margin(l) >= 0.2;
    }
    let far = 1e8 as usize;
    let limit_gap = (far as f64 * r_l(far) - 0.2).abs();
    let ok = r1 == 1.0 && decreasing && above && margin_ok && limit_gap <= 1e-6;
    verdict(
        10,
        ok,
        format!(
            "R_1={r1}, L·R_L decreasing on 2..1e4: {decreasing}, > 1/5: {above}, |L·R_L − 1/5| at L=1e8: {limit_gap:.2e}, margin >= 1/5: {margin_ok}"
        ),
    );
    assert!(ok);
}
