//! Deterministic layer-wise training (BCGD) and plain gradient descent.

use std::fmt;
use std::str::FromStr;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{
    check_dims, gradient_from_parts, j_transpose_of_residual, report_from_parts, ErrorReport,
    LossFunction, Reference,
};
use crate::matcore::{ensure_finite, max_norm, singular_values, Matrix};
use crate::network::Network;
use crate::theory::{gamma_from_spectra, subspace_dim};

/// Denominators below this make a learning rate degenerate; the step is skipped.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ordering {
    Ascending,
    #[default]
    Descending,
}

impl Ordering {
    /// Layer updated at 1-based position `pos` of a sweep.
    pub fn layer_at(self, pos: usize, depth: usize) -> usize {
        match self {
            Ordering::Ascending => pos,
            Ordering::Descending => depth - pos + 1,
        }
    }
}

impl FromStr for Ordering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asc" | "ascending" => Ok(Ordering::Ascending),
            "desc" | "descending" => Ok(Ordering::Descending),
            _ => Err(Error::domain(format!("unknown ordering {s:?} (asc|desc)"))),
        }
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ordering::Ascending => "asc",
            Ordering::Descending => "desc",
        })
    }
}

/// Position inside the Gauss-Seidel schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepState {
    multi_index: Vec<usize>,
    sweep: usize,
    position: usize,
    ordering: Ordering,
    iteration: usize,
}

impl SweepState {
    pub fn new(depth: usize, ordering: Ordering) -> Self {
        assert!(depth > 0, "sweep state needs at least one layer");
        SweepState {
            multi_index: vec![0; depth],
            sweep: 0,
            position: 1,
            ordering,
            iteration: 0,
        }
    }

    pub fn depth(&self) -> usize {
        self.multi_index.len()
    }

    /// Layer about to be updated.
    pub fn layer(&self) -> usize {
        self.ordering.layer_at(self.position, self.depth())
    }

    /// Per-layer update counts `(k_1, …, k_L)`.
    pub fn multi_index(&self) -> &[usize] {
        &self.multi_index
    }

    /// Completed sweeps.
    pub fn sweep(&self) -> usize {
        self.sweep
    }

    /// 1-based position within the current sweep.
    pub fn position(&self) -> usize {
        self.position
    }

    pub fn ordering(&self) -> Ordering {
        self.ordering
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn advance(&mut self) {
        let l = self.layer();
        self.multi_index[l - 1] += 1;
        self.iteration += 1;
        if self.position == self.depth() {
            self.position = 1;
            self.sweep += 1;
        } else {
            self.position += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrPolicy {
    /// `η / (‖A‖² ‖BX‖²)` with `0 < η < 2`.
    TheoryL2 { eta: f64 },
    /// `‖G‖² / ‖A G BX‖²`, exact line search for L2.
    OptimalL2,
    /// `1 / (‖C(Δ)‖_max ‖A‖² ‖BX‖²)`.
    ConvexSafe,
    /// `‖G‖² / (‖C(Δ)‖_max ‖A G BX‖²)`.
    NearOptimalGeneral,
    /// `‖G‖² / ((p−1) ‖Δ‖_max^{p−2} ‖A G BX‖²)`.
    NearOptimalLp { p: u32 },
    Constant { eta: f64 },
}

impl LrPolicy {
    pub fn theory(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 2.0) {
            return Err(Error::domain(format!("theory learning rate needs 0 < η < 2, got {eta}")));
        }
        Ok(LrPolicy::TheoryL2 { eta })
    }

    /// The `η` plugged into the contraction factor `γ`, when the policy has one.
    /// The optimal rate does at least as well as any `η`, so it is audited at `η = 1`.
    pub fn gamma_eta(&self) -> Option<f64> {
        match self {
            LrPolicy::TheoryL2 { eta } => Some(*eta),
            LrPolicy::OptimalL2 => Some(1.0),
            _ => None,
        }
    }

    fn needs_spectral_norms(&self) -> bool {
        matches!(self, LrPolicy::TheoryL2 { .. } | LrPolicy::ConvexSafe)
    }
}

impl FromStr for LrPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_eta = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::domain(format!("bad learning-rate value {v:?}")))
        };
        match s.split_once(':') {
            None => match s {
                "optimal" => Ok(LrPolicy::OptimalL2),
                "convex" => Ok(LrPolicy::ConvexSafe),
                "general" => Ok(LrPolicy::NearOptimalGeneral),
                _ => Err(Error::domain(format!(
                    "unknown policy {s:?} (theory:<eta>|optimal|convex|general|lp:<p>|const:<eta>)"
                ))),
            },
            Some(("theory", v)) => LrPolicy::theory(parse_eta(v)?),
            Some(("const", v)) => {
                let eta = parse_eta(v)?;
                if !(eta >= 0.0 && eta.is_finite()) {
                    return Err(Error::domain(format!("constant rate must be finite and >= 0, got {eta}")));
                }
                Ok(LrPolicy::Constant { eta })
            }
            Some(("lp", v)) => {
                let p = LossFunction::lp(
                    v.parse()
                        .map_err(|_| Error::domain(format!("bad exponent {v:?}")))?,
                )?
                .p();
                Ok(LrPolicy::NearOptimalLp { p })
            }
            Some(_) => Err(Error::domain(format!("unknown policy {s:?}"))),
        }
    }
}

impl fmt::Display for LrPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrPolicy::TheoryL2 { eta } => write!(f, "theory:{eta}"),
            LrPolicy::OptimalL2 => f.write_str("optimal"),
            LrPolicy::ConvexSafe => f.write_str("convex"),
            LrPolicy::NearOptimalGeneral => f.write_str("general"),
            LrPolicy::NearOptimalLp { p } => write!(f, "lp:{p}"),
            LrPolicy::Constant { eta } => write!(f, "const:{eta}"),
        }
    }
}

/// One iteration of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based global iteration.
    pub iteration: usize,
    /// 1-based sweep the iteration belongs to.
    pub sweep: usize,
    /// Updated layer; 0 when every layer moves at once (GD).
    pub layer: usize,
    pub lr: f64,
    /// The learning rate was degenerate and the weights were left alone.
    pub skipped: bool,
    pub loss_before: f64,
    pub loss_after: f64,
    pub dist_before: f64,
    pub dist_after: f64,
    pub gamma_bound: Option<f64>,
    pub grad_frobenius: f64,
    /// Example drawn by a stochastic step.
    pub sampled_index: Option<usize>,
}

impl StepRecord {
    pub fn dist_display(&self) -> f64 {
        crate::loss::display_dist(self.dist_after)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMeta {
    pub optimizer: String,
    pub init: String,
    pub dims: Vec<usize>,
    pub seed: u64,
    pub policy: String,
    pub ordering: String,
    pub loss: String,
    pub m: usize,
    pub reference_objective: f64,
    pub initial_loss: f64,
    pub initial_dist: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub meta: RunMeta,
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distance after the last step, or the initial distance for an empty run.
    pub fn final_dist(&self) -> f64 {
        self.records
            .last()
            .map_or(self.meta.initial_dist, |r| r.dist_after)
    }

    pub fn sweeps(&self) -> usize {
        self.records.last().map_or(0, |r| r.sweep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub max_sweeps: usize,
    /// Stop after a sweep whose final raw distance is at or below this.
    pub target_dist: Option<f64>,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_sweeps: 100,
            target_dist: Some(1e-10),
        }
    }
}

impl StopRule {
    pub fn sweeps(max_sweeps: usize) -> Self {
        StopRule {
            max_sweeps,
            target_dist: None,
        }
    }
}

/// Cached prefixes `P_j = W_{j:1}X` (`0 ≤ j ≤ L`) and suffixes `S_j = W_{L:j}`
/// (`1 ≤ j ≤ L+1`). Updating layer `i` stales `P_{≥i}` and `S_{≤i}`.
#[derive(Debug, Clone)]
pub(crate) struct ProductCache {
    prefix: Vec<Option<Matrix>>,
    suffix: Vec<Option<Matrix>>,
    pred: Option<Matrix>,
}

impl ProductCache {
    pub(crate) fn new(net: &Network, x: &Matrix) -> Self {
        let depth = net.depth();
        let mut prefix = vec![None; depth + 1];
        prefix[0] = Some(x.clone());
        let mut suffix = vec![None; depth + 2];
        let nl = net.dims()[depth];
        suffix[depth + 1] = Some(Matrix::identity(nl, nl));
        ProductCache {
            prefix,
            suffix,
            pred: None,
        }
    }

    pub(crate) fn prefix(&mut self, net: &Network, j: usize) -> &Matrix {
        let start = (0..=j).rev().find(|&k| self.prefix[k].is_some()).unwrap_or(0);
        for k in start + 1..=j {
            let next = net.layer(k) * self.prefix[k - 1].as_ref().unwrap();
            self.prefix[k] = Some(next);
        }
        self.prefix[j].as_ref().unwrap()
    }

    pub(crate) fn suffix(&mut self, net: &Network, j: usize) -> &Matrix {
        let last = self.suffix.len() - 1;
        let start = (j..=last).find(|&k| self.suffix[k].is_some()).unwrap_or(last);
        for k in (j..start).rev() {
            let next = self.suffix[k + 1].as_ref().unwrap() * net.layer(k);
            self.suffix[k] = Some(next);
        }
        self.suffix[j].as_ref().unwrap()
    }

    /// Ensures both neighbours of layer `i` are available and returns clones.
    pub(crate) fn around(&mut self, net: &Network, i: usize) -> (Matrix, Matrix) {
        self.prefix(net, i - 1);
        self.suffix(net, i + 1);
        (
            self.suffix[i + 1].clone().unwrap(),
            self.prefix[i - 1].clone().unwrap(),
        )
    }

    pub(crate) fn invalidate(&mut self, i: usize) {
        for p in &mut self.prefix[i..] {
            *p = None;
        }
        for s in &mut self.suffix[..=i] {
            *s = None;
        }
        self.pred = None;
    }

    /// Records `P_i` and `S_i` after layer `i` changed; `P_{i−1}` and
    /// `S_{i+1}` must still be valid.
    pub(crate) fn refresh_after_update(&mut self, net: &Network, i: usize) {
        self.invalidate(i);
        let p = net.layer(i) * self.prefix[i - 1].as_ref().unwrap();
        let s = self.suffix[i + 1].as_ref().unwrap() * net.layer(i);
        self.pred = Some(self.suffix[i + 1].as_ref().unwrap() * &p);
        self.prefix[i] = Some(p);
        self.suffix[i] = Some(s);
    }

    /// `W_{L:1}X`.
    pub(crate) fn prediction(&mut self, net: &Network) -> Matrix {
        if self.pred.is_none() {
            let p = self.prefix(net, net.depth()).clone();
            self.pred = Some(p);
        }
        self.pred.clone().unwrap()
    }
}

/// Everything a layer update needs, evaluated at the current state.
pub(crate) struct StepParts {
    pub a: Matrix,
    pub bx: Matrix,
    pub prediction: Matrix,
    pub residual: Matrix,
    pub g: Matrix,
}

pub(crate) struct LrEval {
    pub lr: f64,
    pub skipped: bool,
}

fn guarded(num: f64, den: f64) -> LrEval {
    if den < DEGENERATE_DENOMINATOR || !den.is_finite() || !num.is_finite() {
        LrEval {
            lr: 0.0,
            skipped: true,
        }
    } else {
        LrEval {
            lr: num / den,
            skipped: false,
        }
    }
}

pub(crate) fn lr_from_parts(
    policy: LrPolicy,
    lf: LossFunction,
    parts: &StepParts,
    spectra: Option<(&[f64], &[f64])>,
) -> LrEval {
    let norms2 = || {
        let (sa, sb) = spectra.expect("spectra computed for norm-based policies");
        let na = sa.first().copied().unwrap_or(0.0);
        let nb = sb.first().copied().unwrap_or(0.0);
        na * na * nb * nb
    };
    let agbx2 = || (&parts.a * &parts.g * &parts.bx).norm_squared();
    let cmax = || {
        parts
            .residual
            .iter()
            .fold(0.0_f64, |m, r| m.max(lf.curvature_bound(*r)))
    };
    let g2 = parts.g.norm_squared();
    match policy {
        LrPolicy::TheoryL2 { eta } => guarded(eta, norms2()),
        LrPolicy::OptimalL2 => guarded(g2, agbx2()),
        LrPolicy::ConvexSafe => guarded(1.0, cmax() * norms2()),
        LrPolicy::NearOptimalGeneral => guarded(g2, cmax() * agbx2()),
        LrPolicy::NearOptimalLp { p } => {
            let scale = (p - 1) as f64 * max_norm(&parts.residual).powi(p as i32 - 2);
            guarded(g2, scale * agbx2())
        }
        LrPolicy::Constant { eta } => LrEval {
            lr: eta,
            skipped: false,
        },
    }
}

pub(crate) fn parts_for_layer(
    cache: &mut ProductCache,
    net: &Network,
    data: &Dataset,
    lf: LossFunction,
    i: usize,
) -> StepParts {
    let (a, bx) = cache.around(net, i);
    let prediction = cache.prediction(net);
    let residual = &prediction - data.y();
    let jt = j_transpose_of_residual(lf, &residual);
    let g = gradient_from_parts(&a, &jt, &bx);
    StepParts {
        a,
        bx,
        prediction,
        residual,
        g,
    }
}

/// Learning rate the policy assigns to the layer `state` is about to update.
pub fn compute_lr(
    policy: LrPolicy,
    net: &Network,
    data: &Dataset,
    lf: LossFunction,
    state: &SweepState,
) -> Result<f64> {
    check_dims(net, data)?;
    let i = state.layer();
    net.check_layer(i)?;
    let mut cache = ProductCache::new(net, data.x());
    let parts = parts_for_layer(&mut cache, net, data, lf, i);
    let spectra = policy
        .needs_spectral_norms()
        .then(|| (singular_values(&parts.a), singular_values(&parts.bx)));
    let spectra_ref = spectra.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));
    Ok(lr_from_parts(policy, lf, &parts, spectra_ref).lr)
}

/// Stateful BCGD driver that keeps the product cache warm across steps.
pub struct Bcgd<'a> {
    data: &'a Dataset,
    lf: LossFunction,
    policy: LrPolicy,
    reference: &'a Reference,
    /// `(r, r_x)` for the contraction factor.
    ranks: (usize, usize),
    cache: ProductCache,
}

impl<'a> Bcgd<'a> {
    pub fn new(
        net: &Network,
        data: &'a Dataset,
        lf: LossFunction,
        policy: LrPolicy,
        reference: &'a Reference,
    ) -> Result<Self> {
        check_dims(net, data)?;
        let ranks = (subspace_dim(net), crate::matcore::numeric_rank(data.x()));
        Ok(Bcgd {
            data,
            lf,
            policy,
            reference,
            ranks,
            cache: ProductCache::new(net, data.x()),
        })
    }

    /// Overrides `(dim K, rank X)` used for `γ`.
    pub fn with_ranks(mut self, r: usize, r_x: usize) -> Self {
        self.ranks = (r, r_x);
        self
    }

    pub fn report(&mut self, net: &Network) -> ErrorReport {
        let pred = self.cache.prediction(net);
        report_from_parts(self.lf, &pred, self.data, self.reference)
    }

    pub fn step(&mut self, net: &mut Network, state: &mut SweepState) -> Result<StepRecord> {
        let i = state.layer();
        net.check_layer(i)?;
        let parts = parts_for_layer(&mut self.cache, net, self.data, self.lf, i);
        ensure_finite(
            &parts.g,
            &format!("gradient of layer {i} at iteration {}", state.iteration() + 1),
        )?;
        let before = report_from_parts(self.lf, &parts.prediction, self.data, self.reference);

        let gamma_eta = match self.lf {
            LossFunction::L2 => self.policy.gamma_eta(),
            _ => None,
        };
        let spectra = (self.policy.needs_spectral_norms() || gamma_eta.is_some())
            .then(|| (singular_values(&parts.a), singular_values(&parts.bx)));
        let spectra_ref = spectra.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));
        let eval = lr_from_parts(self.policy, self.lf, &parts, spectra_ref);
        let gamma_bound = gamma_eta.map(|eta| {
            let (sa, sb) = spectra_ref.unwrap();
            gamma_from_spectra(
                sa,
                parts.a.shape(),
                sb,
                parts.bx.shape(),
                eta,
                self.ranks.0,
                self.ranks.1,
            )
        });

        let after = if eval.lr != 0.0 {
            let w = net.layer_mut(i);
            *w -= &parts.g * eval.lr;
            ensure_finite(w, &format!("layer {i} after iteration {}", state.iteration() + 1))?;
            self.cache.refresh_after_update(net, i);
            self.report(net)
        } else {
            before
        };

        let record = StepRecord {
            iteration: state.iteration() + 1,
            sweep: state.sweep() + 1,
            layer: i,
            lr: eval.lr,
            skipped: eval.skipped,
            loss_before: before.total_loss,
            loss_after: after.total_loss,
            dist_before: before.dist_to_opt,
            dist_after: after.dist_to_opt,
            gamma_bound,
            grad_frobenius: parts.g.norm(),
            sampled_index: None,
        };
        state.advance();
        Ok(record)
    }
}

/// One BCGD iteration on the layer `state` points at.
pub fn bcgd_step(
    net: &mut Network,
    data: &Dataset,
    lf: LossFunction,
    state: &mut SweepState,
    policy: LrPolicy,
    reference: &Reference,
) -> Result<StepRecord> {
    Bcgd::new(net, data, lf, policy, reference)?.step(net, state)
}

pub(crate) fn base_meta(net: &Network, data: &Dataset, lf: LossFunction, reference: &Reference) -> Result<RunMeta> {
    let initial = crate::loss::error_report_against(net, data, lf, reference)?;
    Ok(RunMeta {
        dims: net.dims().to_vec(),
        loss: lf.to_string(),
        m: data.m(),
        reference_objective: reference.objective,
        initial_loss: initial.total_loss,
        initial_dist: initial.dist_to_opt,
        ..RunMeta::default()
    })
}

/// Called after every step with the updated network.
pub type StepObserver<'o> = dyn FnMut(&Network, &StepRecord) -> Result<()> + 'o;

pub fn run_bcgd(
    net: &mut Network,
    data: &Dataset,
    lf: LossFunction,
    policy: LrPolicy,
    ordering: Ordering,
    stop: StopRule,
    reference: &Reference,
) -> Result<Trajectory> {
    run_bcgd_with(net, data, lf, policy, ordering, stop, reference, &mut |_, _| Ok(()))
}

#[allow(clippy::too_many_arguments)]
pub fn run_bcgd_with(
    net: &mut Network,
    data: &Dataset,
    lf: LossFunction,
    policy: LrPolicy,
    ordering: Ordering,
    stop: StopRule,
    reference: &Reference,
    observe: &mut StepObserver<'_>,
) -> Result<Trajectory> {
    let mut driver = Bcgd::new(net, data, lf, policy, reference)?;
    let mut meta = base_meta(net, data, lf, reference)?;
    meta.optimizer = "bcgd".into();
    meta.policy = policy.to_string();
    meta.ordering = ordering.to_string();
    let mut state = SweepState::new(net.depth(), ordering);
    let mut records = Vec::with_capacity(stop.max_sweeps * net.depth());
    while state.sweep() < stop.max_sweeps {
        for _ in 0..net.depth() {
            let rec = driver.step(net, &mut state)?;
            observe(net, &rec)?;
            records.push(rec);
        }
        let last = records.last().unwrap().dist_after;
        if stop.target_dist.is_some_and(|t| last <= t) {
            break;
        }
    }
    Ok(Trajectory { meta, records })
}

/// Simultaneous update of every layer from gradients taken at the pre-step weights.
pub fn gd_step(
    net: &mut Network,
    data: &Dataset,
    lf: LossFunction,
    eta: f64,
    reference: &Reference,
) -> Result<StepRecord> {
    gd_step_at(net, data, lf, eta, reference, 0)
}

fn gd_step_at(
    net: &mut Network,
    data: &Dataset,
    lf: LossFunction,
    eta: f64,
    reference: &Reference,
    done: usize,
) -> Result<StepRecord> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::domain(format!("GD step size must be finite and >= 0, got {eta}")));
    }
    check_dims(net, data)?;
    let depth = net.depth();
    let mut cache = ProductCache::new(net, data.x());
    let pred = cache.prediction(net);
    let before = report_from_parts(lf, &pred, data, reference);
    let jt = j_transpose_of_residual(lf, &(pred - data.y()));
    let mut grads = Vec::with_capacity(depth);
    for l in 1..=depth {
        let (a, bx) = cache.around(net, l);
        let g = gradient_from_parts(&a, &jt, &bx);
        ensure_finite(&g, &format!("gradient of layer {l} at GD iteration {}", done + 1))?;
        grads.push(g);
    }
    let grad_frobenius = grads.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
    let after = if eta != 0.0 {
        for (l, g) in grads.iter().enumerate() {
            let w = net.layer_mut(l + 1);
            *w -= g * eta;
            ensure_finite(w, &format!("layer {} after GD iteration {}", l + 1, done + 1))?;
        }
        let mut fresh = ProductCache::new(net, data.x());
        report_from_parts(lf, &fresh.prediction(net), data, reference)
    } else {
        before
    };
    Ok(StepRecord {
        iteration: done + 1,
        sweep: done + 1,
        layer: 0,
        lr: eta,
        skipped: false,
        loss_before: before.total_loss,
        loss_after: after.total_loss,
        dist_before: before.dist_to_opt,
        dist_after: after.dist_to_opt,
        gamma_bound: None,
        grad_frobenius,
        sampled_index: None,
    })
}

/// GD with a fixed step; one iteration counts as one sweep.
pub fn run_gd(
    net: &mut Network,
    data: &Dataset,
    lf: LossFunction,
    eta: f64,
    stop: StopRule,
    reference: &Reference,
) -> Result<Trajectory> {
    run_gd_with(net, data, lf, eta, stop, reference, &mut |_, _| Ok(()))
}

pub fn run_gd_with(
    net: &mut Network,
    data: &Dataset,
    lf: LossFunction,
    eta: f64,
    stop: StopRule,
    reference: &Reference,
    observe: &mut StepObserver<'_>,
) -> Result<Trajectory> {
    let mut meta = base_meta(net, data, lf, reference)?;
    meta.optimizer = "gd".into();
    meta.policy = LrPolicy::Constant { eta }.to_string();
    let mut records = Vec::with_capacity(stop.max_sweeps);
    for k in 0..stop.max_sweeps {
        let rec = gd_step_at(net, data, lf, eta, reference, k)?;
        let done = stop.target_dist.is_some_and(|t| rec.dist_after <= t);
        observe(net, &rec)?;
        records.push(rec);
        if done {
            break;
        }
    }
    Ok(Trajectory { meta, records })
}

/// Reference GD step size `n_L / (3 L ‖X‖²)`.
pub fn gd_reference_rate(x: &Matrix, dims: &[usize]) -> f64 {
    let depth = dims.len() - 1;
    let nx = singular_values(x).first().copied().unwrap_or(0.0);
    dims[depth] as f64 / (3.0 * depth as f64 * nx * nx)
}
