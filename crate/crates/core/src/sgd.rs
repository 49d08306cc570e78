//! Block coordinate stochastic gradient descent with state-dependent
//! importance sampling, and the error-floor brackets it settles into.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{rng_for, streams, Dataset};
use crate::error::{Error, Result};
use crate::loss::{check_dims, report_from_parts, ErrorReport, LossFunction, Reference};
use crate::matcore::{ensure_finite, rank_tolerance, ratio_or_inf, singular_values, Matrix};
use crate::network::Network;
use crate::optim::{base_meta, ProductCache, StepObserver, StepRecord, SweepState, Trajectory};

/// Discrete distribution over example indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDist {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl SampleDist {
    /// Normalizes nonnegative weights. A zero or non-finite total is degenerate.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Degenerate("sampling weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate(format!("sampling weights sum to {total}")));
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(SampleDist { probs, cumulative })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Inverse-CDF draw. Never returns an index of probability zero.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let idx = self.cumulative.partition_point(|&c| c <= u);
        let idx = idx.min(self.probs.len() - 1);
        if self.probs[idx] > 0.0 {
            idx
        } else {
            // u landed on the top edge after rounding; fall back to the last
            // index with mass
            self.probs.iter().rposition(|&p| p > 0.0).unwrap()
        }
    }
}

/// `‖(C x_i)ᵀ C X‖²` for every example, with `C X` given: squared column norms
/// of the Gram matrix `(CX)ᵀ CX`.
pub(crate) fn column_terms(cx: &Matrix) -> Vec<f64> {
    let gram = cx.tr_mul(cx);
    gram.column_iter().map(|c| c.norm_squared()).collect()
}

fn distribution_from_cx(cx: &Matrix) -> Result<(SampleDist, Vec<f64>)> {
    if cx.norm() == 0.0 {
        return Err(Error::Degenerate(
            "the lower partial product W_{i-1:1}X vanishes; nothing to sample".into(),
        ));
    }
    let terms = column_terms(cx);
    Ok((SampleDist::from_weights(&terms)?, terms))
}

/// `π(i) ∝ ‖(W_{i−1:1} x_i)ᵀ W_{i−1:1} X‖²` for the layer `state` points at,
/// normalized by the actual total `‖(CX)ᵀCX‖_F²`.
pub fn sampling_distribution(net: &Network, data: &Dataset, state: &SweepState) -> Result<SampleDist> {
    check_dims(net, data)?;
    let i = state.layer();
    net.check_layer(i)?;
    let cx = net.partial_product(i - 1, 1)? * data.x();
    Ok(distribution_from_cx(&cx)?.0)
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 2.0) {
        return Err(Error::domain(format!("stochastic rate needs 0 < η < 2, got {eta}")));
    }
    Ok(())
}

/// Singular values above the rank tolerance. Partial products of a wide
/// network are rank deficient by construction, so `σ_min` and the condition
/// numbers here refer to the smallest nonzero singular value.
fn nonzero_spectrum(a: &Matrix) -> Vec<f64> {
    let mut s = singular_values(a);
    let tol = rank_tolerance(a.nrows(), a.ncols(), largest(&s));
    s.retain(|&v| v > tol && v > 0.0);
    s
}

fn smallest(s: &[f64]) -> f64 {
    s.last().copied().unwrap_or(0.0)
}

fn largest(s: &[f64]) -> f64 {
    s.first().copied().unwrap_or(0.0)
}

/// `σ²_min(CX)/σ²_max(A) · η/‖(Cx_i)ᵀCX‖²`; zero when the scale factor or
/// the column term degenerates.
fn rate(s_a: &[f64], s_cx: &[f64], term: f64, eta: f64) -> f64 {
    let amax = largest(s_a);
    let cmin = smallest(s_cx);
    if !(amax > 0.0 && term > 0.0) {
        return 0.0;
    }
    (cmin * cmin) / (amax * amax) * eta / term
}

/// Learning rate for example `i` at the layer `state` points at.
pub fn bcsgd_lr(net: &Network, data: &Dataset, state: &SweepState, i: usize, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    check_dims(net, data)?;
    if i >= data.m() {
        return Err(Error::domain(format!("example index {i} outside 0..{}", data.m())));
    }
    let l = state.layer();
    net.check_layer(l)?;
    let a = net.partial_product(net.depth(), l + 1)?;
    let cx = net.partial_product(l - 1, 1)? * data.x();
    let terms = column_terms(&cx);
    Ok(rate(&nonzero_spectrum(&a), &nonzero_spectrum(&cx), terms[i], eta))
}

/// Contraction factors and limiting error floors. Floors are on the
/// `‖(W − W*)X‖_F²` scale, i.e. `m` times the normalized distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorBracket {
    pub gamma_upp: f64,
    pub gamma_low: f64,
    pub floor_upper: f64,
    pub floor_lower: f64,
}

/// Per-state constants entering the bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateConstants {
    /// `κ(A)`.
    pub kappa_a: f64,
    /// `κ(CX)`.
    pub kappa_c: f64,
    /// `κ̃(CX) = ‖CX‖_F / σ_min(CX)`.
    pub kappa_tilde_c: f64,
}

impl StateConstants {
    fn from_spectra(s_a: &[f64], s_cx: &[f64]) -> Self {
        let frob = s_cx.iter().map(|v| v * v).sum::<f64>().sqrt();
        StateConstants {
            kappa_a: ratio_or_inf(largest(s_a), smallest(s_a)),
            kappa_c: ratio_or_inf(largest(s_cx), smallest(s_cx)),
            kappa_tilde_c: ratio_or_inf(frob, smallest(s_cx)),
        }
    }

    pub fn finite(&self) -> bool {
        self.kappa_a.is_finite() && self.kappa_c.is_finite() && self.kappa_tilde_c.is_finite()
    }

    /// `1 − (1 − (1 − η/κ²(A))²)/κ̃⁴(CX)`.
    pub fn gamma_upp(&self, eta: f64) -> f64 {
        let t = 1.0 - eta / (self.kappa_a * self.kappa_a);
        1.0 - (1.0 - t * t) / self.kappa_tilde_c.powi(4)
    }

    /// `1 − (1 − (1 − η/κ²(CX))²)/(κ̃⁴(CX)/κ⁴(CX))`.
    pub fn gamma_low(&self, eta: f64) -> f64 {
        let t = 1.0 - eta / (self.kappa_c * self.kappa_c);
        1.0 - (1.0 - t * t) / (self.kappa_tilde_c.powi(4) / self.kappa_c.powi(4))
    }
}

/// Running extremes of the bracket ingredients over visited states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorTracker {
    pub eta: f64,
    pub depth: usize,
    /// `inf κ̃⁴(CX)`.
    pub m_low: f64,
    /// `sup κ⁴(A) κ̃⁴(CX)`.
    pub m_upp: f64,
    pub gamma_upp: f64,
    pub gamma_low: f64,
    /// A state with an infinite condition number was seen.
    pub unavailable: bool,
    pub observed: usize,
}

impl FloorTracker {
    pub fn new(eta: f64, depth: usize) -> Self {
        FloorTracker {
            eta,
            depth,
            m_low: f64::INFINITY,
            m_upp: 0.0,
            gamma_upp: f64::NEG_INFINITY,
            gamma_low: f64::INFINITY,
            unavailable: false,
            observed: 0,
        }
    }

    pub fn observe(&mut self, c: &StateConstants) {
        self.observed += 1;
        if !c.finite() {
            self.unavailable = true;
            return;
        }
        let kt4 = c.kappa_tilde_c.powi(4);
        self.m_low = self.m_low.min(kt4);
        self.m_upp = self.m_upp.max(c.kappa_a.powi(4) * kt4);
        self.gamma_upp = self.gamma_upp.max(c.gamma_upp(self.eta));
        self.gamma_low = self.gamma_low.min(c.gamma_low(self.eta));
    }

    pub fn merge(&mut self, other: &FloorTracker) {
        self.m_low = self.m_low.min(other.m_low);
        self.m_upp = self.m_upp.max(other.m_upp);
        self.gamma_upp = self.gamma_upp.max(other.gamma_upp);
        self.gamma_low = self.gamma_low.min(other.gamma_low);
        self.unavailable |= other.unavailable;
        self.observed += other.observed;
    }

    /// `η² L(W*) / (M_low (1 − γ_upp^L))` and `η² L(W*) / (M_upp (1 − γ_low^L))`.
    pub fn bracket(&self, oracle_loss: f64) -> Option<FloorBracket> {
        if self.unavailable || self.observed == 0 {
            return None;
        }
        let l = self.depth as i32;
        let e2 = self.eta * self.eta * oracle_loss;
        Some(FloorBracket {
            gamma_upp: self.gamma_upp,
            gamma_low: self.gamma_low,
            floor_upper: e2 / (self.m_low * (1.0 - self.gamma_upp.powi(l))),
            floor_lower: e2 / (self.m_upp * (1.0 - self.gamma_low.powi(l))),
        })
    }
}

fn state_constants(net: &Network, data: &Dataset, state: &SweepState) -> Result<StateConstants> {
    check_dims(net, data)?;
    let i = state.layer();
    net.check_layer(i)?;
    let a = net.partial_product(net.depth(), i + 1)?;
    let cx = net.partial_product(i - 1, 1)? * data.x();
    Ok(StateConstants::from_spectra(&nonzero_spectrum(&a), &nonzero_spectrum(&cx)))
}

/// Bracket using only the current state's constants.
pub fn floor_brackets(
    net: &Network,
    data: &Dataset,
    state: &SweepState,
    eta: f64,
    oracle_loss: f64,
) -> Result<Option<FloorBracket>> {
    check_eta(eta)?;
    let mut t = FloorTracker::new(eta, net.depth());
    t.observe(&state_constants(net, data, state)?);
    Ok(t.bracket(oracle_loss))
}

/// Stateful BCSGD driver.
pub struct Bcsgd<'a> {
    data: &'a Dataset,
    reference: &'a Reference,
    eta: f64,
    cache: ProductCache,
    rng: ChaCha8Rng,
    tracker: FloorTracker,
}

impl<'a> Bcsgd<'a> {
    pub fn new(net: &Network, data: &'a Dataset, eta: f64, seed: u64, reference: &'a Reference) -> Result<Self> {
        check_eta(eta)?;
        check_dims(net, data)?;
        Ok(Bcsgd {
            data,
            reference,
            eta,
            cache: ProductCache::new(net, data.x()),
            rng: rng_for(seed, streams::SAMPLING),
            tracker: FloorTracker::new(eta, net.depth()),
        })
    }

    pub fn tracker(&self) -> &FloorTracker {
        &self.tracker
    }

    /// Hands back the constants gathered so far and starts a fresh window.
    pub fn take_tracker(&mut self) -> FloorTracker {
        let fresh = FloorTracker::new(self.eta, self.tracker.depth);
        std::mem::replace(&mut self.tracker, fresh)
    }

    pub fn report(&mut self, net: &Network) -> ErrorReport {
        let pred = self.cache.prediction(net);
        report_from_parts(LossFunction::L2, &pred, self.data, self.reference)
    }

    pub fn step(&mut self, net: &mut Network, state: &mut SweepState) -> Result<StepRecord> {
        let l = state.layer();
        net.check_layer(l)?;
        let (a, cx) = self.cache.around(net, l);
        let pred = self.cache.prediction(net);
        let before = report_from_parts(LossFunction::L2, &pred, self.data, self.reference);
        let (dist, terms) = distribution_from_cx(&cx)?;
        let s_a = nonzero_spectrum(&a);
        let s_cx = nonzero_spectrum(&cx);
        self.tracker.observe(&StateConstants::from_spectra(&s_a, &s_cx));

        let i = dist.sample(&mut self.rng);
        let lr = rate(&s_a, &s_cx, terms[i], self.eta);
        let r_i = pred.column(i) - self.data.y().column(i);
        let left = a.tr_mul(&r_i);
        let grad = &left * cx.column(i).transpose();
        ensure_finite(&grad, &format!("sample gradient of layer {l} at iteration {}", state.iteration() + 1))?;

        let after = if lr != 0.0 {
            let w = net.layer_mut(l);
            *w -= &grad * lr;
            ensure_finite(w, &format!("layer {l} after iteration {}", state.iteration() + 1))?;
            self.cache.refresh_after_update(net, l);
            self.report(net)
        } else {
            before
        };
        let record = StepRecord {
            iteration: state.iteration() + 1,
            sweep: state.sweep() + 1,
            layer: l,
            lr,
            skipped: lr == 0.0,
            loss_before: before.total_loss,
            loss_after: after.total_loss,
            dist_before: before.dist_to_opt,
            dist_after: after.dist_to_opt,
            gamma_bound: None,
            grad_frobenius: left.norm() * cx.column(i).norm(),
            sampled_index: Some(i),
        };
        state.advance();
        Ok(record)
    }
}

/// One stochastic iteration; the RNG is advanced by one draw.
pub fn bcsgd_step(
    net: &mut Network,
    data: &Dataset,
    state: &mut SweepState,
    eta: f64,
    rng: &mut ChaCha8Rng,
    reference: &Reference,
) -> Result<StepRecord> {
    let mut driver = Bcsgd::new(net, data, eta, 0, reference)?;
    std::mem::swap(&mut driver.rng, rng);
    let rec = driver.step(net, state);
    std::mem::swap(&mut driver.rng, rng);
    rec
}

#[derive(Debug, Clone)]
pub struct BcsgdRun {
    pub trajectory: Trajectory,
    /// Constants over every visited state.
    pub tracker: FloorTracker,
    /// Constants over the second half of the sweeps only, the window the
    /// tail average is taken on.
    pub tail_tracker: FloorTracker,
}

impl BcsgdRun {
    pub fn bracket(&self) -> Option<FloorBracket> {
        self.tracker.bracket(self.trajectory.meta.reference_objective)
    }

    pub fn tail_bracket(&self) -> Option<FloorBracket> {
        self.tail_tracker.bracket(self.trajectory.meta.reference_objective)
    }

    pub fn tail_mean(&self) -> f64 {
        tail_mean(&self.trajectory)
    }
}

/// Mean of `‖(W − W*)X‖_F²` after each step in the second half of the
/// sweeps; NaN for an empty run.
pub fn tail_mean(traj: &Trajectory) -> f64 {
    let m = traj.meta.m as f64;
    let start = tail_start(traj.sweeps());
    let tail: Vec<&StepRecord> = traj.records.iter().filter(|r| r.sweep > start).collect();
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|r| r.dist_after * m).sum::<f64>() / tail.len() as f64
}

/// Sweeps `1..=tail_start(n)` are burn-in; the rest form the tail window.
fn tail_start(sweeps: usize) -> usize {
    sweeps / 2
}

/// BCSGD for a fixed number of sweeps. Requires an L2 reference; `seed`
/// drives only the sampling stream.
pub fn run_bcsgd(
    net: &mut Network,
    data: &Dataset,
    eta: f64,
    sweeps: usize,
    ordering: crate::optim::Ordering,
    seed: u64,
    reference: &Reference,
) -> Result<BcsgdRun> {
    run_bcsgd_with(net, data, eta, sweeps, ordering, seed, reference, &mut |_, _| Ok(()))
}

#[allow(clippy::too_many_arguments)]
pub fn run_bcsgd_with(
    net: &mut Network,
    data: &Dataset,
    eta: f64,
    sweeps: usize,
    ordering: crate::optim::Ordering,
    seed: u64,
    reference: &Reference,
    observe: &mut StepObserver<'_>,
) -> Result<BcsgdRun> {
    let mut driver = Bcsgd::new(net, data, eta, seed, reference)?;
    let mut meta = base_meta(net, data, LossFunction::L2, reference)?;
    meta.optimizer = "bcsgd".into();
    meta.policy = format!("bcsgd:{eta}");
    meta.ordering = ordering.to_string();
    meta.seed = seed;
    let mut state = SweepState::new(net.depth(), ordering);
    let mut records = Vec::with_capacity(sweeps * net.depth());
    let mut burn_in = None;
    while state.sweep() < sweeps {
        if burn_in.is_none() && state.sweep() == tail_start(sweeps) {
            burn_in = Some(driver.take_tracker());
        }
        let rec = driver.step(net, &mut state)?;
        observe(net, &rec)?;
        records.push(rec);
    }
    let tail_tracker = driver.take_tracker();
    let mut tracker = burn_in.unwrap_or_else(|| FloorTracker::new(eta, net.depth()));
    tracker.merge(&tail_tracker);
    Ok(BcsgdRun {
        trajectory: Trajectory { meta, records },
        tracker,
        tail_tracker,
    })
}
