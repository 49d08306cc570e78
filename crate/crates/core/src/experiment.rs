//! Config-driven runs.
//!
//! Config files are flat `key = value` lines; `#` starts a comment and blank
//! lines are ignored. Keys (defaults in brackets):
//!
//! ```text
//! data             synthetic | <csv path>          [synthetic]
//! d_in, d_out, m   sizes; m is ignored for csv     [32, 4, 100]
//! spectrum         gaussian | uniform              [gaussian]
//! teacher_noise    <std>: Y = W0 X + noise instead of uniform Y   [unset]
//! dims             explicit chain, e.g. "32 20 20 4"              [unset]
//! depth, width     chain d_in, width x (depth-1), d_out; width may be "auto" = max(d_in, d_out)  [2, auto]
//! init             orthogonal | orth-identity | identity | balanced | random  [orth-identity]
//! loss             l2 | lp:<p>                     [l2]
//! optimizer        bcgd | bcsgd | gd               [bcgd]
//! policy           bcgd rate rule                  [optimal]
//! eta              bcsgd / gd step parameter       [0.5 / n_L/(3L‖X‖²)]
//! order            desc | asc                      [desc]
//! sweeps           max sweeps                      [100]
//! target           normalized distance stop, or "none"   [1e-10]
//! seed             init and sampling seed; data too unless data_seed is set  [0]
//! data_seed        seed for synthetic data and teacher   [seed]
//! rank             rank cap n* for the oracle      [min width]
//! output           trajectory CSV path             [unset]
//! checkpoint_every write the network every N steps next to the CSV  [0 = off]
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::data::{load_normalize_csv, synthetic, teacher_outputs, Dataset, Spectrum, SyntheticSpec};
use crate::error::{Error, Result};
use crate::init::{initialize, InitKind};
use crate::loss::LossFunction;
use crate::network::Network;
use crate::optim::{gd_reference_rate, run_bcgd_with, run_gd_with, LrPolicy, Ordering, StepRecord, StopRule, Trajectory};
use crate::oracle::{rank_cap, reference_for};
use crate::sgd::{run_bcsgd_with, FloorBracket, FloorTracker};
use crate::theory::{audit, AuditReport};
use crate::trajectory::save_trajectory;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Bcgd,
    Bcsgd,
    Gd,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bcgd" => Ok(Optimizer::Bcgd),
            "bcsgd" => Ok(Optimizer::Bcsgd),
            "gd" => Ok(Optimizer::Gd),
            _ => Err(Error::domain(format!("unknown optimizer {s:?} (bcgd|bcsgd|gd)"))),
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Optimizer::Bcgd => "bcgd",
            Optimizer::Bcsgd => "bcsgd",
            Optimizer::Gd => "gd",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Width {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub d_in: usize,
    pub d_out: usize,
    pub m: usize,
    pub spectrum: Spectrum,
    pub teacher_noise: Option<f64>,
    pub dims: Option<Vec<usize>>,
    pub depth: usize,
    pub width: Width,
    pub init: InitKind,
    pub loss: LossFunction,
    pub optimizer: Optimizer,
    pub policy: LrPolicy,
    pub eta: Option<f64>,
    pub order: Ordering,
    pub sweeps: usize,
    pub target: Option<f64>,
    pub seed: u64,
    pub data_seed: Option<u64>,
    pub rank: Option<usize>,
    pub output: Option<PathBuf>,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSource::Synthetic,
            d_in: 32,
            d_out: 4,
            m: 100,
            spectrum: Spectrum::Gaussian,
            teacher_noise: None,
            dims: None,
            depth: 2,
            width: Width::Auto,
            init: InitKind::OrthIdentity,
            loss: LossFunction::L2,
            optimizer: Optimizer::Bcgd,
            policy: LrPolicy::OptimalL2,
            eta: None,
            order: Ordering::Descending,
            sweeps: 100,
            target: Some(1e-10),
            seed: 0,
            data_seed: None,
            rank: None,
            output: None,
            checkpoint_every: 0,
        }
    }
}

pub const KEYS: [&str; 22] = [
    "data",
    "d_in",
    "d_out",
    "m",
    "spectrum",
    "teacher_noise",
    "dims",
    "depth",
    "width",
    "init",
    "loss",
    "optimizer",
    "policy",
    "eta",
    "order",
    "sweeps",
    "target",
    "seed",
    "data_seed",
    "rank",
    "output",
    "checkpoint_every",
];

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::domain(format!("{key}: cannot parse {value:?}")))
}

fn parse_dims(value: &str) -> Result<Vec<usize>> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| num("dims", t))
        .collect()
}

impl RunConfig {
    /// Sets one key from its text form; the same entry point serves config
    /// files and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "data" => {
                self.data = if value == "synthetic" {
                    DataSource::Synthetic
                } else {
                    DataSource::Csv(PathBuf::from(value))
                }
            }
            "d_in" => self.d_in = num(key, value)?,
            "d_out" => self.d_out = num(key, value)?,
            "m" => self.m = num(key, value)?,
            "spectrum" => {
                self.spectrum = match value {
                    "gaussian" => Spectrum::Gaussian,
                    "uniform" => Spectrum::Uniform,
                    _ => return Err(Error::domain(format!("spectrum: expected gaussian|uniform, got {value:?}"))),
                }
            }
            "teacher_noise" => self.teacher_noise = if value == "none" { None } else { Some(num(key, value)?) },
            "dims" => self.dims = Some(parse_dims(value)?),
            "depth" => self.depth = num(key, value)?,
            "width" => {
                self.width = if value == "auto" {
                    Width::Auto
                } else {
                    Width::Fixed(num(key, value)?)
                }
            }
            "init" => self.init = value.parse()?,
            "loss" => self.loss = value.parse()?,
            "optimizer" => self.optimizer = value.parse()?,
            "policy" => self.policy = value.parse()?,
            "eta" => self.eta = Some(num(key, value)?),
            "order" => self.order = value.parse()?,
            "sweeps" => self.sweeps = num(key, value)?,
            "target" => self.target = if value == "none" { None } else { Some(num(key, value)?) },
            "seed" => self.seed = num(key, value)?,
            "data_seed" => self.data_seed = if value == "none" { None } else { Some(num(key, value)?) },
            "rank" => self.rank = Some(num(key, value)?),
            "output" => self.output = Some(PathBuf::from(value)),
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            _ => return Err(Error::domain(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(k as u64 + 1, format!("expected key = value, got {line:?}")))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::parse(k as u64 + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv(
            "data",
            match &self.data {
                DataSource::Synthetic => "synthetic".into(),
                DataSource::Csv(p) => p.display().to_string(),
            },
        );
        kv("d_in", self.d_in.to_string());
        kv("d_out", self.d_out.to_string());
        kv("m", self.m.to_string());
        kv(
            "spectrum",
            match self.spectrum {
                Spectrum::Gaussian => "gaussian",
                Spectrum::Uniform => "uniform",
            }
            .into(),
        );
        if let Some(n) = self.teacher_noise {
            kv("teacher_noise", n.to_string());
        }
        if let Some(d) = &self.dims {
            kv("dims", d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "));
        }
        kv("depth", self.depth.to_string());
        kv(
            "width",
            match self.width {
                Width::Auto => "auto".into(),
                Width::Fixed(w) => w.to_string(),
            },
        );
        kv("init", self.init.to_string());
        kv("loss", self.loss.to_string());
        kv("optimizer", self.optimizer.to_string());
        kv("policy", self.policy.to_string());
        if let Some(e) = self.eta {
            kv("eta", e.to_string());
        }
        kv("order", self.order.to_string());
        kv("sweeps", self.sweeps.to_string());
        kv("target", self.target.map_or("none".into(), |t| t.to_string()));
        kv("seed", self.seed.to_string());
        if let Some(d) = self.data_seed {
            kv("data_seed", d.to_string());
        }
        if let Some(r) = self.rank {
            kv("rank", r.to_string());
        }
        if let Some(o) = &self.output {
            kv("output", o.display().to_string());
        }
        kv("checkpoint_every", self.checkpoint_every.to_string());
        s
    }

    /// The dimension chain this config trains.
    pub fn resolved_dims(&self) -> Vec<usize> {
        if let Some(d) = &self.dims {
            return d.clone();
        }
        let width = match self.width {
            Width::Auto => self.d_in.max(self.d_out),
            Width::Fixed(w) => w,
        };
        let mut dims = vec![self.d_in];
        dims.extend(std::iter::repeat_n(width, self.depth.saturating_sub(1)));
        dims.push(self.d_out);
        dims
    }

    /// Consistency checks that need no data.
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 {
            return Err(Error::domain("d_in and d_out must be positive"));
        }
        if self.data == DataSource::Synthetic && self.m == 0 {
            return Err(Error::domain("m must be positive"));
        }
        if self.dims.is_none() && self.depth == 0 {
            return Err(Error::domain("depth must be at least 1"));
        }
        let dims = self.resolved_dims();
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::domain(format!("dims {dims:?} need at least two positive entries")));
        }
        if dims[0] != self.d_in || dims[dims.len() - 1] != self.d_out {
            return Err(Error::domain(format!(
                "dims {dims:?} must start at d_in = {} and end at d_out = {}",
                self.d_in, self.d_out
            )));
        }
        if let Some(r) = self.rank {
            if r == 0 {
                return Err(Error::domain("rank must be at least 1"));
            }
        }
        if let Some(n) = self.teacher_noise {
            if !(n >= 0.0 && n.is_finite()) {
                return Err(Error::domain("teacher_noise must be finite and >= 0"));
            }
        }
        if let Some(t) = self.target {
            if !(t >= 0.0) {
                return Err(Error::domain("target must be >= 0 or none"));
            }
        }
        match self.optimizer {
            Optimizer::Bcsgd => {
                if self.loss != LossFunction::L2 {
                    return Err(Error::domain("bcsgd is defined for the l2 loss only"));
                }
                let eta = self.eta.unwrap_or(0.5);
                if !(eta > 0.0 && eta < 2.0) {
                    return Err(Error::domain(format!("bcsgd needs 0 < eta < 2, got {eta}")));
                }
            }
            Optimizer::Gd => {
                if let Some(eta) = self.eta {
                    if !(eta >= 0.0 && eta.is_finite()) {
                        return Err(Error::domain(format!("gd needs a finite eta >= 0, got {eta}")));
                    }
                }
            }
            Optimizer::Bcgd => match (self.policy, self.loss) {
                (LrPolicy::TheoryL2 { .. } | LrPolicy::OptimalL2, LossFunction::Lp(_)) => {
                    return Err(Error::domain(format!("policy {} requires the l2 loss", self.policy)));
                }
                (LrPolicy::NearOptimalLp { p }, lf) if lf.p() != p => {
                    return Err(Error::domain(format!("policy {} does not match loss {lf}", self.policy)));
                }
                _ => {}
            },
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let seed = self.data_seed.unwrap_or(self.seed);
        let data = match &self.data {
            DataSource::Synthetic => synthetic(&SyntheticSpec {
                d_in: self.d_in,
                d_out: self.d_out,
                m: self.m,
                spectrum: self.spectrum,
                seed,
            })?,
            DataSource::Csv(p) => load_normalize_csv(p, self.d_in, self.d_out)?,
        };
        match self.teacher_noise {
            Some(noise) => {
                let y = teacher_outputs(data.x(), self.d_out, noise, seed);
                Dataset::new(data.x().clone(), y)
            }
            None => Ok(data),
        }
    }

    fn stop(&self) -> StopRule {
        StopRule {
            max_sweeps: self.sweeps,
            target_dist: self.target,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub final_dist: f64,
    pub sweeps: usize,
    pub steps: usize,
    pub seconds: f64,
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "final dist {:.6e} after {} sweeps ({} steps) in {:.3}s",
            self.final_dist, self.sweeps, self.steps, self.seconds
        )
    }
}

/// Floor-bracket constants of a BCSGD run, over every visited state and over
/// the tail window (second half of the sweeps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Floors {
    pub whole: FloorTracker,
    pub tail: FloorTracker,
    pub oracle_loss: f64,
}

impl Floors {
    pub fn bracket(&self) -> Option<FloorBracket> {
        self.whole.bracket(self.oracle_loss)
    }

    pub fn tail_bracket(&self) -> Option<FloorBracket> {
        self.tail.bracket(self.oracle_loss)
    }

    pub fn merge(&mut self, other: &Floors) {
        self.whole.merge(&other.whole);
        self.tail.merge(&other.tail);
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub trajectory: Trajectory,
    pub summary: Summary,
    /// Present when the run recorded contraction factors.
    pub audit: Option<AuditReport>,
    /// BCSGD only.
    pub floors: Option<Floors>,
    pub checkpoints: Vec<PathBuf>,
}

/// Directory holding the checkpoints written next to `csv`.
pub fn checkpoint_dir(csv: &Path) -> PathBuf {
    let mut name = csv.file_stem().unwrap_or_default().to_os_string();
    name.push(".ckpt");
    csv.with_file_name(name)
}

/// Network file for iteration `k` inside a checkpoint directory.
pub fn checkpoint_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("iter_{k:07}.txt"))
}

struct Checkpoints {
    dir: Option<PathBuf>,
    every: usize,
    written: Vec<PathBuf>,
}

impl Checkpoints {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let dir = match (&cfg.output, cfg.checkpoint_every) {
            (Some(out), n) if n > 0 => {
                let dir = checkpoint_dir(out);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                Some(dir)
            }
            _ => None,
        };
        Ok(Checkpoints {
            dir,
            every: cfg.checkpoint_every,
            written: Vec::new(),
        })
    }

    fn save(&mut self, net: &Network, k: usize) -> Result<()> {
        if let Some(dir) = &self.dir {
            if k % self.every == 0 {
                let path = checkpoint_path(dir, k);
                net.save(&path)?;
                self.written.push(path);
            }
        }
        Ok(())
    }
}

/// Runs a config end to end: data, init, oracle, training, and the CSV when
/// `output` is set. Config errors surface before any training.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let data = cfg.dataset()?;
    run_on(cfg, &data)
}

/// [`run_experiment`] on data already in hand.
pub fn run_on(cfg: &RunConfig, data: &Dataset) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let dims = cfg.resolved_dims();
    if data.d_in() != dims[0] || data.d_out() != dims[dims.len() - 1] {
        return Err(Error::domain(format!(
            "data is {}→{} but dims are {dims:?}",
            data.d_in(),
            data.d_out()
        )));
    }
    let start = Instant::now();
    let mut net = initialize(&cfg.init.into(), &dims, cfg.seed)?;
    let n_star = cfg.rank.unwrap_or_else(|| rank_cap(&dims));
    let reference = reference_for(data, cfg.loss, n_star)?;
    let mut ckpt = Checkpoints::new(cfg)?;
    ckpt.save(&net, 0)?;
    let mut observe = |net: &Network, rec: &StepRecord| ckpt.save(net, rec.iteration);

    let (mut trajectory, floors) = match cfg.optimizer {
        Optimizer::Bcgd => {
            let t = run_bcgd_with(&mut net, data, cfg.loss, cfg.policy, cfg.order, cfg.stop(), &reference, &mut observe)?;
            (t, None)
        }
        Optimizer::Gd => {
            let eta = cfg.eta.unwrap_or_else(|| gd_reference_rate(data.x(), &dims));
            let t = run_gd_with(&mut net, data, cfg.loss, eta, cfg.stop(), &reference, &mut observe)?;
            (t, None)
        }
        Optimizer::Bcsgd => {
            let eta = cfg.eta.unwrap_or(0.5);
            let run = run_bcsgd_with(&mut net, data, eta, cfg.sweeps, cfg.order, cfg.seed, &reference, &mut observe)?;
            let floors = Floors {
                whole: run.tracker,
                tail: run.tail_tracker,
                oracle_loss: reference.objective,
            };
            (run.trajectory, Some(floors))
        }
    };
    trajectory.meta.init = cfg.init.to_string();
    trajectory.meta.seed = cfg.seed;
    if cfg.optimizer == Optimizer::Gd {
        trajectory.meta.ordering = String::new();
    }

    let audit = trajectory
        .records
        .iter()
        .any(|r| r.gamma_bound.is_some())
        .then(|| audit(&trajectory));
    if let Some(out) = &cfg.output {
        save_trajectory(&trajectory, out)?;
    }
    let summary = Summary {
        final_dist: trajectory.final_dist(),
        sweeps: trajectory.sweeps(),
        steps: trajectory.len(),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(ExperimentOutput {
        trajectory,
        summary,
        audit,
        floors,
        checkpoints: ckpt.written,
    })
}
