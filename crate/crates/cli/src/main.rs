use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use layerwise::data::write_csv;
use layerwise::experiment::{run_experiment, ExperimentOutput, Floors, Optimizer, RunConfig};
use layerwise::oracle::{rank_cap, rank_constrained_solution};
use layerwise::network::Network;
use layerwise::sgd::{tail_mean, FloorBracket};
use layerwise::theory::{audit, AuditReport};
use layerwise::trajectory::load_trajectory;

/// Layer-wise training of deep linear networks.
#[derive(Parser)]
#[command(name = "layerwise", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write it as CSV (inputs then outputs per row).
    GenData(GenDataArgs),
    /// Run the configured optimizer (BCGD unless the config says otherwise).
    Train(RunArgs),
    /// Run block coordinate SGD over several seeds and report the floor bracket.
    Bcsgd(BcsgdArgs),
    /// Run full gradient descent.
    Gd(RunArgs),
    /// Solve the least-squares problem for the configured data.
    Oracle(OracleArgs),
    /// Audit a trajectory CSV against its recorded contraction factors.
    Verify(VerifyArgs),
    /// Run several config files, in parallel.
    Batch(BatchArgs),
}

/// Every config key as a flag; flags override the config file.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `synthetic` or a CSV path.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    d_in: Option<String>,
    #[arg(long)]
    d_out: Option<String>,
    #[arg(long)]
    m: Option<String>,
    /// gaussian | uniform
    #[arg(long)]
    spectrum: Option<String>,
    #[arg(long)]
    teacher_noise: Option<String>,
    /// Explicit chain, e.g. "32 20 20 4".
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    depth: Option<String>,
    /// A number or `auto`.
    #[arg(long)]
    width: Option<String>,
    /// orthogonal | orth-identity | identity | balanced | random
    #[arg(long)]
    init: Option<String>,
    /// l2 | lp:<p>
    #[arg(long)]
    loss: Option<String>,
    /// bcgd | bcsgd | gd
    #[arg(long)]
    optimizer: Option<String>,
    /// theory:<eta> | optimal | convex | general | lp:<p> | const:<eta>
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    /// desc | asc
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    sweeps: Option<String>,
    /// Normalized distance to stop at, or `none`.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    data_seed: Option<String>,
    #[arg(long)]
    rank: Option<String>,
    /// Trajectory CSV path; metadata goes next to it as .json.
    #[arg(long, alias = "out")]
    output: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        let pairs = [
            ("data", &self.data),
            ("d_in", &self.d_in),
            ("d_out", &self.d_out),
            ("m", &self.m),
            ("spectrum", &self.spectrum),
            ("teacher_noise", &self.teacher_noise),
            ("dims", &self.dims),
            ("depth", &self.depth),
            ("width", &self.width),
            ("init", &self.init),
            ("loss", &self.loss),
            ("optimizer", &self.optimizer),
            ("policy", &self.policy),
            ("eta", &self.eta),
            ("order", &self.order),
            ("sweeps", &self.sweeps),
            ("target", &self.target),
            ("seed", &self.seed),
            ("data_seed", &self.data_seed),
            ("rank", &self.rank),
            ("output", &self.output),
            ("checkpoint_every", &self.checkpoint_every),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }

    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(|e| Failure::Config(anyhow::Error::new(e).context(format!("config {}", p.display()))))?,
            None => RunConfig::default(),
        };
        for (k, v) in self.overrides() {
            cfg.set(k, v).map_err(|e| Failure::Config(anyhow::Error::new(e).context(format!("--{}", k.replace('_', "-")))))?;
        }
        cfg.validate().map_err(|e| Failure::Config(e.into()))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct BcsgdArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Write W* as a one-layer network file.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    trajectory: PathBuf,
    /// Metadata sidecar; defaults to the CSV path with a .json extension.
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    /// Config files to run.
    #[arg(required = true)]
    configs: Vec<PathBuf>,
    /// Directory for outputs of configs without an `output` key.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 4)]
    jobs: usize,
}

enum Failure {
    Config(anyhow::Error),
    Audit(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<layerwise::Error> for Failure {
    fn from(e: layerwise::Error) -> Self {
        Failure::Run(e.into())
    }
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn bracket_json(b: Option<FloorBracket>) -> Value {
    match b {
        Some(b) => json!({
            "gamma_upp": b.gamma_upp,
            "gamma_low": b.gamma_low,
            "floor_upper": finite_or_string(b.floor_upper),
            "floor_lower": finite_or_string(b.floor_lower),
        }),
        None => Value::Null,
    }
}

/// JSON has no infinities.
fn finite_or_string(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(v.to_string())
    }
}

fn audit_json(a: &AuditReport) -> Value {
    json!({
        "steps": a.steps,
        "checked": a.checked,
        "vacuous": a.vacuous.len(),
        "violations": a.violations.len(),
        "scale": a.scale,
    })
}

fn sidecar(cfg: &RunConfig, out: &ExperimentOutput) -> Value {
    let meta = &out.trajectory.meta;
    json!({
        "config": cfg.to_text(),
        "optimizer": meta.optimizer,
        "init": meta.init,
        "dims": meta.dims,
        "seed": meta.seed,
        "policy": meta.policy,
        "ordering": meta.ordering,
        "loss": meta.loss,
        "m": meta.m,
        "reference_objective": meta.reference_objective,
        "initial_loss": meta.initial_loss,
        "initial_dist": meta.initial_dist,
        "final_dist": out.summary.final_dist,
        "sweeps": out.summary.sweeps,
        "steps": out.summary.steps,
        "audit": out.audit.as_ref().map(audit_json),
        "bracket": out.floors.map(|f| bracket_json(f.bracket())),
        "tail_bracket": out.floors.map(|f| bracket_json(f.tail_bracket())),
    })
}

fn write_sidecar(cfg: &RunConfig, out: &ExperimentOutput) -> anyhow::Result<()> {
    if let Some(csv) = &cfg.output {
        let path = sidecar_path(csv);
        let text = serde_json::to_string_pretty(&sidecar(cfg, out))?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn report_audit(out: &ExperimentOutput) -> Result<(), Failure> {
    if let Some(a) = &out.audit {
        println!("audit: {}", a.summary());
        if !a.passed() {
            return Err(Failure::Audit(format!("{} rate-bound violations", a.violations.len())));
        }
    }
    Ok(())
}

fn run_one(cfg: &RunConfig) -> Result<ExperimentOutput, Failure> {
    let out = run_experiment(cfg)?;
    write_sidecar(cfg, &out)?;
    Ok(out)
}

fn train(args: &RunArgs, force: Option<Optimizer>) -> Result<(), Failure> {
    let mut cfg = args.resolve()?;
    if let Some(opt) = force {
        cfg.optimizer = opt;
        cfg.validate().map_err(|e| Failure::Config(e.into()))?;
    }
    let out = run_one(&cfg)?;
    println!("{}", out.summary);
    if let Some(f) = out.floors {
        print_bracket("bracket (tail window)", f.tail_bracket());
    }
    report_audit(&out)
}

fn print_bracket(label: &str, b: Option<FloorBracket>) {
    match b {
        Some(b) => println!(
            "{label}: floor_lower {:.6e}  floor_upper {:.6e}  gamma_low {:.8}  gamma_upp {:.8}",
            b.floor_lower, b.floor_upper, b.gamma_low, b.gamma_upp
        ),
        None => println!("{label}: unavailable (a visited state had an infinite condition number)"),
    }
}

fn seeded_output(base: &Path, seed: u64) -> PathBuf {
    let stem = base.file_stem().unwrap_or_default().to_string_lossy();
    let ext = base.extension().map_or("csv".into(), |e| e.to_string_lossy().into_owned());
    base.with_file_name(format!("{stem}_seed{seed}.{ext}"))
}

fn bcsgd(args: &BcsgdArgs) -> Result<(), Failure> {
    let mut base = args.run.resolve()?;
    base.optimizer = Optimizer::Bcsgd;
    base.validate().map_err(|e| Failure::Config(e.into()))?;
    if args.seeds == 0 {
        return Err(Failure::Config(anyhow::anyhow!("--seeds must be at least 1")));
    }
    // keep the data fixed while the seed varies
    base.data_seed.get_or_insert(base.seed);
    let mut merged: Option<Floors> = None;
    let mut tail_sum = 0.0;
    for k in 0..args.seeds {
        let mut cfg = base.clone();
        cfg.seed = base.seed + k;
        if let Some(out) = &base.output {
            cfg.output = Some(if args.seeds > 1 { seeded_output(out, cfg.seed) } else { out.clone() });
        }
        let out = run_one(&cfg)?;
        let tail = tail_mean(&out.trajectory);
        tail_sum += tail;
        println!("seed {}: {}; tail mean ‖(W−W*)X‖² {:.6e}", cfg.seed, out.summary, tail);
        let f = out.floors.expect("bcsgd runs carry floors");
        match &mut merged {
            Some(m) => m.merge(&f),
            None => merged = Some(f),
        }
    }
    let merged = merged.unwrap();
    let tail = tail_sum / args.seeds as f64;
    println!("seeds {}: mean tail ‖(W−W*)X‖² {:.6e}, L(W*) {:.6e}", args.seeds, tail, merged.oracle_loss);
    print_bracket("bracket (tail window)", merged.tail_bracket());
    print_bracket("bracket (whole run)", merged.bracket());
    if let Some(b) = merged.tail_bracket() {
        let inside = tail >= 0.5 * b.floor_lower && tail <= 2.0 * b.floor_upper;
        println!(
            "tail mean {} [0.5·floor_lower, 2·floor_upper]",
            if inside { "inside" } else { "outside" }
        );
    }
    Ok(())
}

fn oracle(args: &OracleArgs) -> Result<(), Failure> {
    let cfg = args.run.resolve()?;
    let data = cfg.dataset()?;
    let n_star = cfg.rank.unwrap_or_else(|| rank_cap(&cfg.resolved_dims()));
    let sol = rank_constrained_solution(data.x(), data.y(), n_star)?;
    println!("optimal_loss {:e}", sol.optimal_loss);
    println!("w_star_frobenius {:e}", sol.w_star.norm());
    println!("rank_cap {n_star} effective_rank {} unconstrained {}", sol.effective_rank, sol.unconstrained);
    if let Some(path) = &args.save {
        Network::new(vec![sol.w_star])?.save(path)?;
    }
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let mut traj = load_trajectory(&args.trajectory)
        .with_context(|| format!("reading {}", args.trajectory.display()))?;
    let meta_path = args.meta.clone().unwrap_or_else(|| sidecar_path(&args.trajectory));
    if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?;
        let meta: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", meta_path.display()))?;
        if let (Some(first), Some(d0)) = (traj.records.first_mut(), meta["initial_dist"].as_f64()) {
            if first.dist_before.is_nan() {
                first.dist_before = d0;
            }
        }
    } else if args.meta.is_some() {
        return Err(Failure::Config(anyhow::anyhow!("metadata file {} not found", meta_path.display())));
    }
    let report = audit(&traj);
    println!("{}", report.summary());
    for v in report.violations.iter().take(20) {
        println!(
            "violation at iteration {} ({:?}): {:e} > {:e}",
            v.iteration, v.kind, v.observed, v.bound
        );
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Audit(format!("{} rate-bound violations", report.violations.len())))
    }
}

fn gen_data(args: &GenDataArgs) -> Result<(), Failure> {
    let cfg = args.run.resolve()?;
    let Some(out) = &cfg.output else {
        return Err(Failure::Config(anyhow::anyhow!("gen-data needs --output")));
    };
    let data = cfg.dataset()?;
    write_csv(&data, out)?;
    println!("wrote {} examples ({} → {}) to {}", data.m(), data.d_in(), data.d_out(), out.display());
    Ok(())
}

fn batch(args: &BatchArgs) -> Result<(), Failure> {
    let mut cfgs = Vec::new();
    for path in &args.configs {
        let mut cfg = RunConfig::load(path)
            .map_err(|e| Failure::Config(anyhow::Error::new(e).context(format!("config {}", path.display()))))?;
        cfg.validate()
            .map_err(|e| Failure::Config(anyhow::Error::new(e).context(format!("config {}", path.display()))))?;
        if cfg.output.is_none() {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            cfg.output = Some(args.out_dir.join(format!("{stem}.csv")));
        }
        cfgs.push(cfg);
    }
    let outputs: Vec<PathBuf> = cfgs.iter().filter_map(|c| c.output.clone()).collect();
    for (i, p) in outputs.iter().enumerate() {
        if outputs[..i].contains(p) {
            return Err(Failure::Config(anyhow::anyhow!("two configs write {}", p.display())));
        }
    }

    let jobs = args.jobs.max(1);
    let mut results: Vec<Option<Result<ExperimentOutput, Failure>>> = (0..cfgs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_cfgs, chunk_res) in cfgs.chunks(jobs).zip(results.chunks_mut(jobs)) {
            let handles: Vec<_> = chunk_cfgs.iter().map(|cfg| scope.spawn(move || run_one(cfg))).collect();
            for (slot, h) in chunk_res.iter_mut().zip(handles) {
                *slot = Some(h.join().unwrap_or_else(|_| Err(Failure::Run(anyhow::anyhow!("worker panicked")))));
            }
        }
    });

    let mut worst: Option<Failure> = None;
    for (path, res) in args.configs.iter().zip(results) {
        match res.unwrap() {
            Ok(out) => {
                println!("{}: {}", path.display(), out.summary);
                if let Err(f) = report_audit(&out) {
                    worst.get_or_insert(f);
                }
            }
            Err(f) => {
                let msg = match &f {
                    Failure::Config(e) | Failure::Run(e) => format!("{e:#}"),
                    Failure::Audit(s) => s.clone(),
                };
                println!("{}: failed: {msg}", path.display());
                if !matches!(worst, Some(Failure::Run(_))) {
                    worst = Some(f);
                }
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a, None),
        Command::Bcsgd(a) => bcsgd(a),
        Command::Gd(a) => train(a, Some(Optimizer::Gd)),
        Command::Oracle(a) => oracle(a),
        Command::Verify(a) => verify(a),
        Command::Batch(a) => batch(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Audit(msg)) => {
            eprintln!("audit failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
