//! Command-line front end: resolves parameters from flags, an optional
//! flat `key=value` config file, and paper defaults (in that precedence
//! order), runs the requested pipeline, and emits CSV/JSON artifacts.
//!
//! Every emitted CSV starts with `# config=<hash> seed=<seed>`; the JSON
//! run report carries the same fields. The hash covers the resolved run
//! parameters (not workspace placement), so identical configurations
//! produce byte-identical outputs wherever they are written.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::annealer::AnnealParams;
use crate::bench::{measure_scaling, ScalingPath};
use crate::dp::{greedy_policy, soft_value_iteration, value_iteration, SoftParams};
use crate::env::{step, ContState, EnvParams};
use crate::grid::{build_transition_model, GridSpec, TransitionModel};
use crate::qepi::{accuracy_experiment, run_qepi, QepiConfig, QepiHistory, SolverChoice};
use crate::qubo::BinaryEncoding;
use crate::util::grid_csv;
use crate::{Error, Result};

const DEFAULT_GAMMA: f64 = 0.99;
const DEFAULT_N_B: usize = 10;
const DEFAULT_X_MIN: f64 = -100.0;
const DEFAULT_SIGMA: f64 = 10.0;
const DEFAULT_ANNEALS: usize = 100;
const DEFAULT_DURATION: usize = 1280;
const DEFAULT_SWEEPS: usize = 400;
const DEFAULT_TOL: f64 = 1e-10;
const DEFAULT_MAX_UPDATES: usize = 10;
const DEFAULT_RUNS: usize = 50;
const SOLVER_URL_VAR: &str = "QEPI_SOLVER_URL";

/// Grid shape written as `POSITIONSxVELOCITIES`, e.g. `64x64`.
#[derive(Debug, Clone, Copy)]
pub struct GridShape {
    pub n_pos: usize,
    pub n_vel: usize,
}

impl FromStr for GridShape {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (p, v) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected POSxVEL like 64x64, got {s:?}"))?;
        let n_pos = p.trim().parse().map_err(|_| format!("bad position count {p:?}"))?;
        let n_vel = v.trim().parse().map_err(|_| format!("bad velocity count {v:?}"))?;
        if n_pos == 0 || n_vel == 0 {
            return Err("grid sides must be positive".into());
        }
        Ok(GridShape { n_pos, n_vel })
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.n_pos, self.n_vel)
    }
}

#[derive(Debug, Clone)]
struct UsizeList(Vec<usize>);

impl FromStr for UsizeList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| format!("bad integer {p:?} in list")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(UsizeList)
    }
}

#[derive(Debug, Clone)]
struct ShapeList(Vec<GridShape>);

impl FromStr for ShapeList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|p| p.trim().parse()).collect::<std::result::Result<Vec<_>, _>>().map(ShapeList)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverFlag {
    Simulated,
    BruteForce,
    Remote,
}

impl SolverFlag {
    fn name(self) -> &'static str {
        match self {
            SolverFlag::Simulated => "simulated",
            SolverFlag::BruteForce => "brute-force",
            SolverFlag::Remote => "remote",
        }
    }
}

impl FromStr for SolverFlag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "simulated" => Ok(SolverFlag::Simulated),
            "brute-force" => Ok(SolverFlag::BruteForce),
            "remote" => Ok(SolverFlag::Remote),
            other => Err(format!("unknown solver {other:?} (simulated|brute-force|remote)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PathFlag {
    Sparse,
    Dense,
}

impl FromStr for PathFlag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sparse" => Ok(PathFlag::Sparse),
            "dense" => Ok(PathFlag::Dense),
            other => Err(format!("unknown path {other:?} (sparse|dense)")),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "qepi",
    version,
    about = "Mountain-car planning with annealed QUBO policy evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Value iteration; writes value and policy grids.
    Vi(ViArgs),
    /// Value iteration with Gaussian-blurred action values.
    SoftVi(SoftViArgs),
    /// Full annealed policy-iteration run; writes a JSON report plus grids.
    Qepi(QepiArgs),
    /// Accuracy table over a (duration, anneal-count) grid of repeated runs.
    Accuracy(AccuracyArgs),
    /// Operation-count scaling sweep; writes counter and slope tables.
    Bench(BenchArgs),
    /// Simulate the value-iteration policy from a start state.
    Rollout(RolloutArgs),
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Flat key=value file; flags override its entries.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Grid as POSITIONSxVELOCITIES, e.g. 64x64.
    #[arg(long)]
    grid: Option<GridShape>,
    /// Discount factor in [0,1).
    #[arg(long)]
    gamma: Option<f64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed for anything randomized.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to one per core).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct ViArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Sweep budget.
    #[arg(long)]
    sweeps: Option<usize>,
    /// Sup-norm convergence tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct SoftViArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Blur standard deviation in grid cells.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct QepiArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Bits per encoded value.
    #[arg(long)]
    nb: Option<usize>,
    /// Most negative representable value.
    #[arg(long, allow_hyphen_values = true)]
    xmin: Option<f64>,
    /// Independent anneal restarts per solve.
    #[arg(long)]
    anneals: Option<usize>,
    /// Sweeps per anneal.
    #[arg(long)]
    duration: Option<usize>,
    /// Policy-update budget.
    #[arg(long)]
    max_updates: Option<usize>,
    /// QUBO backend.
    #[arg(long, value_enum)]
    solver: Option<SolverFlag>,
}

#[derive(Args, Debug, Default)]
struct AccuracyArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    nb: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    xmin: Option<f64>,
    /// Comma-separated sweep budgets, e.g. 16,1280.
    #[arg(long)]
    durations: Option<UsizeList>,
    /// Comma-separated anneal counts, e.g. 4,100.
    #[arg(long)]
    anneal_counts: Option<UsizeList>,
    /// Runs per table cell.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    max_updates: Option<usize>,
    #[arg(long, value_enum)]
    solver: Option<SolverFlag>,
}

#[derive(Args, Debug, Default)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated grid shapes, e.g. 16x16,24x24,32x32,48x48.
    #[arg(long)]
    sizes: Option<ShapeList>,
    #[arg(long)]
    nb: Option<usize>,
    /// Storage strategy for the normal equations.
    #[arg(long, value_enum)]
    path: Option<PathFlag>,
}

#[derive(Args, Debug, Default)]
struct RolloutArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    start_pos: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    start_vel: Option<f64>,
    /// Step budget for the simulation.
    #[arg(long)]
    steps: Option<usize>,
}

/// Values from the optional config file, consulted when a flag is absent.
struct Overlay {
    map: BTreeMap<String, String>,
}

impl Overlay {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut map = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)?;
            for (number, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!(
                        "{}:{}: expected key=value, got {line:?}",
                        path.display(),
                        number + 1
                    ))
                })?;
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Self { map })
    }

    fn resolve<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match self.optional(key, flag)? {
            Some(v) => Ok(v),
            None => Ok(default),
        }
    }

    fn optional<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.map.get(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("config key {key}: {e}"))),
            None => Ok(None),
        }
    }
}

fn required_grid(overlay: &Overlay, flag: Option<GridShape>, subcommand: &str) -> Result<GridShape> {
    overlay.optional("grid", flag)?.ok_or_else(|| {
        Error::Config(format!(
            "missing required --grid (POSITIONSxVELOCITIES)\n{}",
            usage(subcommand)
        ))
    })
}

fn usage(subcommand: &str) -> String {
    let mut root = Cli::command();
    match root.find_subcommand_mut(subcommand) {
        Some(cmd) => cmd.render_usage().to_string(),
        None => root.render_usage().to_string(),
    }
}

fn build_model(shape: GridShape) -> Result<(EnvParams, GridSpec, TransitionModel)> {
    let params = EnvParams::default();
    let grid = GridSpec::new(shape.n_pos, shape.n_vel, &params)?;
    let model = build_transition_model(&params, &grid)?;
    Ok((params, grid, model))
}

fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// First 16 hex digits of the SHA-256 of the canonical config echo.
fn config_hash<T: Serialize>(echo: &T) -> String {
    let canonical = serde_json::to_string(echo).expect("config echo serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn stamped(hash: &str, seed: u64, body: &str) -> String {
    format!("# config={hash} seed={seed}\n{body}")
}

fn solver_choice(flag: SolverFlag) -> Result<SolverChoice> {
    match flag {
        SolverFlag::Simulated => Ok(SolverChoice::Simulated),
        SolverFlag::BruteForce => Ok(SolverChoice::BruteForce),
        SolverFlag::Remote => {
            let url = std::env::var(SOLVER_URL_VAR).map_err(|_| {
                Error::Config(format!("--solver remote needs the {SOLVER_URL_VAR} env var"))
            })?;
            Ok(SolverChoice::Remote(crate::annealer::RemoteConfig::new(url)))
        }
    }
}

/// Parses `args` and runs the requested subcommand.
///
/// Exit status: 0 on success (and for --help/--version), 2 for
/// configuration problems including unknown flags, 3 when a solver
/// fails.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Vi(args) => run_vi(args),
        Command::SoftVi(args) => run_soft_vi(args),
        Command::Qepi(args) => run_qepi_command(args),
        Command::Accuracy(args) => run_accuracy(args),
        Command::Bench(args) => run_bench(args),
        Command::Rollout(args) => run_rollout(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Solver(_) | Error::Remote(_) => 3,
                _ => 2,
            }
        }
    }
}

#[derive(Serialize)]
struct ViEcho {
    command: &'static str,
    grid: String,
    gamma: f64,
    sweeps: usize,
    tol: f64,
    sigma: Option<f64>,
    seed: u64,
}

fn run_vi(args: ViArgs) -> Result<()> {
    let overlay = Overlay::load(args.common.config.as_deref())?;
    configure_threads(overlay.optional("threads", args.common.threads)?);
    let shape = required_grid(&overlay, args.common.grid, "vi")?;
    let gamma = overlay.resolve("gamma", args.common.gamma, DEFAULT_GAMMA)?;
    let sweeps = overlay.resolve("sweeps", args.sweeps, DEFAULT_SWEEPS)?;
    let tol = overlay.resolve("tol", args.tol, DEFAULT_TOL)?;
    let seed = overlay.resolve("seed", args.common.seed, 0)?;
    let out = overlay.resolve("out", args.common.out, PathBuf::from("."))?;

    let echo = ViEcho {
        command: "vi",
        grid: shape.to_string(),
        gamma,
        sweeps,
        tol,
        sigma: None,
        seed,
    };
    let hash = config_hash(&echo);

    let (_, _, model) = build_model(shape)?;
    let outcome = value_iteration(&model, gamma, sweeps, tol)?;
    let policy = greedy_policy(&model, &outcome.values, gamma);

    let values = write_file(
        &out,
        "vi_values.csv",
        &stamped(&hash, seed, &grid_csv(outcome.values.as_slice(), shape.n_pos, shape.n_vel)),
    )?;
    let actions = write_file(
        &out,
        "vi_policy.csv",
        &stamped(&hash, seed, &grid_csv(policy.actions(), shape.n_pos, shape.n_vel)),
    )?;
    println!(
        "vi: converged={} sweeps={} wrote {} {}",
        outcome.converged,
        outcome.sweeps,
        values.display(),
        actions.display()
    );
    Ok(())
}

fn run_soft_vi(args: SoftViArgs) -> Result<()> {
    let overlay = Overlay::load(args.common.config.as_deref())?;
    configure_threads(overlay.optional("threads", args.common.threads)?);
    let shape = required_grid(&overlay, args.common.grid, "soft-vi")?;
    let gamma = overlay.resolve("gamma", args.common.gamma, DEFAULT_GAMMA)?;
    let sweeps = overlay.resolve("sweeps", args.sweeps, DEFAULT_SWEEPS)?;
    let tol = overlay.resolve("tol", args.tol, DEFAULT_TOL)?;
    let sigma = overlay.resolve("sigma", args.sigma, DEFAULT_SIGMA)?;
    let seed = overlay.resolve("seed", args.common.seed, 0)?;
    let out = overlay.resolve("out", args.common.out, PathBuf::from("."))?;

    let echo = ViEcho {
        command: "soft-vi",
        grid: shape.to_string(),
        gamma,
        sweeps,
        tol,
        sigma: Some(sigma),
        seed,
    };
    let hash = config_hash(&echo);

    let (_, _, model) = build_model(shape)?;
    let soft = SoftParams { sigma, ..SoftParams::default() };
    let outcome = soft_value_iteration(&model, gamma, &soft, sweeps, tol)?;

    let values = write_file(
        &out,
        "soft_vi_values.csv",
        &stamped(&hash, seed, &grid_csv(outcome.values.as_slice(), shape.n_pos, shape.n_vel)),
    )?;
    let actions = write_file(
        &out,
        "soft_vi_policy.csv",
        &stamped(&hash, seed, &grid_csv(outcome.policy.actions(), shape.n_pos, shape.n_vel)),
    )?;
    println!(
        "soft-vi: converged={} sweeps={} wrote {} {}",
        outcome.converged,
        outcome.sweeps,
        values.display(),
        actions.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct QepiEcho {
    command: &'static str,
    grid: String,
    gamma: f64,
    n_b: usize,
    x_min: f64,
    anneals: usize,
    duration_steps: usize,
    max_policy_updates: usize,
    solver: &'static str,
    seed: u64,
}

#[derive(Serialize)]
struct QepiReport<'a> {
    config_hash: &'a str,
    seed: u64,
    config: &'a QepiEcho,
    /// One duration step is one full sweep over every bit.
    duration_unit: &'static str,
    converged: bool,
    range_warning: bool,
    policy_updates: usize,
    values_csv: &'a str,
    policy_csv: &'a str,
    history: &'a QepiHistory,
}

fn run_qepi_command(args: QepiArgs) -> Result<()> {
    let overlay = Overlay::load(args.common.config.as_deref())?;
    configure_threads(overlay.optional("threads", args.common.threads)?);
    let shape = required_grid(&overlay, args.common.grid, "qepi")?;
    let gamma = overlay.resolve("gamma", args.common.gamma, DEFAULT_GAMMA)?;
    let n_b = overlay.resolve("nb", args.nb, DEFAULT_N_B)?;
    let x_min = overlay.resolve("xmin", args.xmin, DEFAULT_X_MIN)?;
    let anneals = overlay.resolve("anneals", args.anneals, DEFAULT_ANNEALS)?;
    let duration = overlay.resolve("duration", args.duration, DEFAULT_DURATION)?;
    let max_updates = overlay.resolve("max-updates", args.max_updates, DEFAULT_MAX_UPDATES)?;
    let solver_flag = overlay.resolve("solver", args.solver, SolverFlag::Simulated)?;
    let seed = overlay.resolve("seed", args.common.seed, 0)?;
    let out = overlay.resolve("out", args.common.out, PathBuf::from("."))?;

    let echo = QepiEcho {
        command: "qepi",
        grid: shape.to_string(),
        gamma,
        n_b,
        x_min,
        anneals,
        duration_steps: duration,
        max_policy_updates: max_updates,
        solver: solver_flag.name(),
        seed,
    };
    let hash = config_hash(&echo);

    let (_, _, model) = build_model(shape)?;
    let cfg = QepiConfig {
        gamma,
        encoding: BinaryEncoding::new(n_b, x_min)?,
        anneal: AnnealParams {
            duration_steps: duration,
            num_anneals: anneals,
            seed,
            ..AnnealParams::default()
        },
        max_policy_updates: max_updates,
        solver: solver_choice(solver_flag)?,
    };
    let (policy, values, history) = run_qepi(&model, &cfg)?;

    let values_name = "qepi_values.csv";
    let policy_name = "qepi_policy.csv";
    write_file(
        &out,
        values_name,
        &stamped(&hash, seed, &grid_csv(values.as_slice(), shape.n_pos, shape.n_vel)),
    )?;
    write_file(
        &out,
        policy_name,
        &stamped(&hash, seed, &grid_csv(policy.actions(), shape.n_pos, shape.n_vel)),
    )?;
    let report = QepiReport {
        config_hash: &hash,
        seed,
        config: &echo,
        duration_unit: "sweep",
        converged: history.converged,
        range_warning: history.range_warning(),
        policy_updates: history.updates.len(),
        values_csv: values_name,
        policy_csv: policy_name,
        history: &history,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    let report_path = write_file(&out, "qepi_report.json", &text)?;
    println!(
        "qepi: converged={} updates={} range_warning={} wrote {}",
        history.converged,
        history.updates.len(),
        history.range_warning(),
        report_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AccuracyEcho {
    command: &'static str,
    grid: String,
    gamma: f64,
    n_b: usize,
    x_min: f64,
    durations: Vec<usize>,
    anneal_counts: Vec<usize>,
    runs: usize,
    max_policy_updates: usize,
    solver: &'static str,
    seed: u64,
}

fn run_accuracy(args: AccuracyArgs) -> Result<()> {
    let overlay = Overlay::load(args.common.config.as_deref())?;
    configure_threads(overlay.optional("threads", args.common.threads)?);
    let shape = required_grid(&overlay, args.common.grid, "accuracy")?;
    let gamma = overlay.resolve("gamma", args.common.gamma, DEFAULT_GAMMA)?;
    let n_b = overlay.resolve("nb", args.nb, DEFAULT_N_B)?;
    let x_min = overlay.resolve("xmin", args.xmin, DEFAULT_X_MIN)?;
    let durations =
        overlay.resolve("durations", args.durations, UsizeList(vec![16, DEFAULT_DURATION]))?;
    let anneal_counts =
        overlay.resolve("anneal-counts", args.anneal_counts, UsizeList(vec![4, DEFAULT_ANNEALS]))?;
    let runs = overlay.resolve("runs", args.runs, DEFAULT_RUNS)?;
    let max_updates = overlay.resolve("max-updates", args.max_updates, DEFAULT_MAX_UPDATES)?;
    let solver_flag = overlay.resolve("solver", args.solver, SolverFlag::Simulated)?;
    let seed = overlay.resolve("seed", args.common.seed, 0)?;
    let out = overlay.resolve("out", args.common.out, PathBuf::from("."))?;

    let echo = AccuracyEcho {
        command: "accuracy",
        grid: shape.to_string(),
        gamma,
        n_b,
        x_min,
        durations: durations.0.clone(),
        anneal_counts: anneal_counts.0.clone(),
        runs,
        max_policy_updates: max_updates,
        solver: solver_flag.name(),
        seed,
    };
    let hash = config_hash(&echo);

    let (_, _, model) = build_model(shape)?;
    let cfg = QepiConfig {
        gamma,
        encoding: BinaryEncoding::new(n_b, x_min)?,
        anneal: AnnealParams::default(),
        max_policy_updates: max_updates,
        solver: solver_choice(solver_flag)?,
    };
    let table = accuracy_experiment(&model, &cfg, &durations.0, &anneal_counts.0, runs, seed)?;
    let path = write_file(&out, "accuracy.csv", &stamped(&hash, seed, &table.to_csv()))?;
    print!("{}", table.to_csv());
    println!("accuracy: wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct BenchEcho {
    command: &'static str,
    sizes: Vec<String>,
    n_b: usize,
    gamma: f64,
    path: &'static str,
    seed: u64,
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let overlay = Overlay::load(args.common.config.as_deref())?;
    configure_threads(overlay.optional("threads", args.common.threads)?);
    let gamma = overlay.resolve("gamma", args.common.gamma, DEFAULT_GAMMA)?;
    let path_flag = overlay.resolve("path", args.path, PathFlag::Sparse)?;
    let scaling_path = match path_flag {
        PathFlag::Sparse => ScalingPath::Sparse,
        PathFlag::Dense => ScalingPath::Dense,
    };
    let default_sizes = match scaling_path {
        ScalingPath::Sparse => "16x16,24x24,32x32,48x48",
        ScalingPath::Dense => "8x8,8x16,16x16,16x32",
    };
    let sizes = overlay.resolve("sizes", args.sizes, default_sizes.parse::<ShapeList>().unwrap())?;
    let default_n_b = match scaling_path {
        ScalingPath::Sparse => DEFAULT_N_B,
        ScalingPath::Dense => 2,
    };
    let n_b = overlay.resolve("nb", args.nb, default_n_b)?;
    let seed = overlay.resolve("seed", args.common.seed, 0)?;
    let out = overlay.resolve("out", args.common.out, PathBuf::from("."))?;

    let echo = BenchEcho {
        command: "bench",
        sizes: sizes.0.iter().map(GridShape::to_string).collect(),
        n_b,
        gamma,
        path: scaling_path.name(),
        seed,
    };
    let hash = config_hash(&echo);

    let shapes: Vec<(usize, usize)> = sizes.0.iter().map(|s| (s.n_pos, s.n_vel)).collect();
    let report = measure_scaling(&shapes, n_b, gamma, scaling_path)?;
    let scaling = write_file(&out, "bench_scaling.csv", &stamped(&hash, seed, &report.to_csv()))?;
    let slopes = write_file(&out, "bench_slopes.csv", &stamped(&hash, seed, &report.slopes_csv()))?;
    print!("{}", report.slopes_csv());
    println!("bench: wrote {} {}", scaling.display(), slopes.display());
    Ok(())
}

#[derive(Serialize)]
struct RolloutEcho {
    command: &'static str,
    grid: String,
    gamma: f64,
    sweeps: usize,
    tol: f64,
    start_pos: f64,
    start_vel: f64,
    steps: usize,
    seed: u64,
}

fn run_rollout(args: RolloutArgs) -> Result<()> {
    let overlay = Overlay::load(args.common.config.as_deref())?;
    configure_threads(overlay.optional("threads", args.common.threads)?);
    let shape = required_grid(&overlay, args.common.grid, "rollout")?;
    let gamma = overlay.resolve("gamma", args.common.gamma, DEFAULT_GAMMA)?;
    let sweeps = overlay.resolve("sweeps", args.sweeps, DEFAULT_SWEEPS)?;
    let tol = overlay.resolve("tol", args.tol, DEFAULT_TOL)?;
    let start_pos = overlay.resolve("start-pos", args.start_pos, -0.5)?;
    let start_vel = overlay.resolve("start-vel", args.start_vel, 0.0)?;
    let steps = overlay.resolve("steps", args.steps, DEFAULT_SWEEPS)?;
    let seed = overlay.resolve("seed", args.common.seed, 0)?;
    let out = overlay.resolve("out", args.common.out, PathBuf::from("."))?;

    let echo = RolloutEcho {
        command: "rollout",
        grid: shape.to_string(),
        gamma,
        sweeps,
        tol,
        start_pos,
        start_vel,
        steps,
        seed,
    };
    let hash = config_hash(&echo);

    let (params, grid, model) = build_model(shape)?;
    let outcome = value_iteration(&model, gamma, sweeps, tol)?;
    let policy = greedy_policy(&model, &outcome.values, gamma);

    let mut body = String::from("step,position,velocity,action,reward\n");
    let mut state = ContState { position: start_pos, velocity: start_vel };
    let mut reached: Option<usize> = None;
    for t in 0..steps {
        let (ip, iv) = grid.cell_of(state);
        let action = policy[grid.flat_index(ip, iv)];
        let next = step(state, action, &params)?;
        body.push_str(&format!(
            "{t},{},{},{action},{}\n",
            state.position, state.velocity, next.reward
        ));
        state = next.state;
        if next.terminal {
            reached = Some(t + 1);
            break;
        }
    }
    let path = write_file(&out, "rollout.csv", &stamped(&hash, seed, &body))?;
    match reached {
        Some(n) => println!("rollout: reached the goal after {n} steps, wrote {}", path.display()),
        None => println!("rollout: goal not reached within {steps} steps, wrote {}", path.display()),
    }
    Ok(())
}
