//! Configuration, dispatch and report output for the `rdl` binary.

use clap::{Parser, ValueEnum};
use rdl_core::experiments::*;
use rdl_core::harmonic_oracle::{GridSpec, PlaneWave};
use rdl_core::haar_ops::SearchBudget;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub const DEFAULT_SEED: u64 = 0xD1AD1C;
pub const SEED_ENV: &str = "RDL_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] rdl_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Moments,
    WeakConvergence,
    MartingaleApprox,
    WeakFormulation,
    GvIdentity,
    NormComparison,
    Vector,
    PointwiseRiesz,
    CauchyRiemann,
    TransformIdentity,
    OperatorAlgebra,
}

impl Experiment {
    pub fn name(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }

    /// Experiments that run at a single resolution, with their default `N`.
    fn single_resolution(self) -> Option<u32> {
        match self {
            Self::Moments => Some(3),
            Self::WeakFormulation | Self::Vector => Some(8),
            Self::TransformIdentity => Some(2),
            _ => None,
        }
    }
}

impl FromStr for Experiment {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        <Self as ValueEnum>::from_str(s, true).map_err(|_| config_err(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Enumeration,
    Montecarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WalkScaling {
    Coupled,
    Decoupled,
}

/// Effective run configuration, echoed into every report (thread count goes to `run_info`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub d: u32,
    pub i: u32,
    /// Resolutions; the experiment's own default when absent.
    pub ns: Option<Vec<u32>>,
    pub horizon: f64,
    pub y: f64,
    pub p: f64,
    pub paths: u64,
    pub depth: u32,
    pub half_width: f64,
    pub points: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub mode: Mode,
    pub walk: WalkScaling,
    /// Stopping band for decoupled walks.
    pub eps: Option<f64>,
    /// Coarse time step for the vector experiment.
    pub theta: Option<f64>,
    pub bridge: bool,
    pub coarse_integral: bool,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Moments,
            d: 2,
            i: 1,
            ns: None,
            horizon: 4.0,
            y: 1.0,
            p: 2.0,
            paths: 100_000,
            depth: 8,
            half_width: 20.0,
            points: 256,
            seed: DEFAULT_SEED,
            out: PathBuf::from("runs"),
            mode: Mode::Enumeration,
            walk: WalkScaling::Coupled,
            eps: None,
            theta: None,
            bridge: true,
            coarse_integral: false,
            threads: None,
        }
    }
}

#[derive(Debug, Default, Parser)]
#[command(name = "rdl", about = "Run a dyadic Riesz transform experiment and write its report")]
pub struct Flags {
    /// Flat `key = value` file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub experiment: Option<Experiment>,
    #[arg(long)]
    pub d: Option<u32>,
    #[arg(long)]
    pub i: Option<u32>,
    /// Comma-separated resolutions.
    #[arg(long = "N", value_delimiter = ',')]
    pub ns: Option<Vec<u32>>,
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub y: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub paths: Option<u64>,
    #[arg(long)]
    pub depth: Option<u32>,
    /// Grid half-width.
    #[arg(long = "L")]
    pub half_width: Option<f64>,
    /// Grid points per axis.
    #[arg(long = "M")]
    pub points: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, value_enum)]
    pub walk: Option<WalkScaling>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub bridge: Option<bool>,
    #[arg(long = "coarse-integral")]
    pub coarse_integral: Option<bool>,
    #[arg(long)]
    pub threads: Option<usize>,
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.trim()
        .parse()
        .map_err(|_| config_err(format!("malformed value `{v}` for `{key}`")))
}

fn parse_list(key: &str, v: &str) -> CliResult<Vec<u32>> {
    v.split(',').map(|s| parse_value(key, s)).collect()
}

/// Applies one `key = value` pair from a configuration file.
fn apply_file_entry(cfg: &mut RunConfig, key: &str, v: &str) -> CliResult<()> {
    match key {
        "experiment" => cfg.experiment = v.trim().parse()?,
        "d" => cfg.d = parse_value(key, v)?,
        "i" => cfg.i = parse_value(key, v)?,
        "N" => cfg.ns = Some(parse_list(key, v)?),
        "T" => cfg.horizon = parse_value(key, v)?,
        "y" => cfg.y = parse_value(key, v)?,
        "p" => cfg.p = parse_value(key, v)?,
        "paths" => cfg.paths = parse_value(key, v)?,
        "depth" => cfg.depth = parse_value(key, v)?,
        "L" => cfg.half_width = parse_value(key, v)?,
        "M" => cfg.points = parse_value(key, v)?,
        "seed" => cfg.seed = parse_value(key, v)?,
        "out" => cfg.out = PathBuf::from(v.trim()),
        "mode" => cfg.mode = Mode::from_str(v.trim(), true).map_err(config_err)?,
        "walk" => cfg.walk = WalkScaling::from_str(v.trim(), true).map_err(config_err)?,
        "eps" => cfg.eps = Some(parse_value(key, v)?),
        "theta" => cfg.theta = Some(parse_value(key, v)?),
        "bridge" => cfg.bridge = parse_value(key, v)?,
        "coarse-integral" => cfg.coarse_integral = parse_value(key, v)?,
        "threads" => cfg.threads = Some(parse_value(key, v)?),
        _ => return Err(config_err(format!("unknown key `{key}`"))),
    }
    Ok(())
}

pub fn apply_file(cfg: &mut RunConfig, text: &str) -> CliResult<()> {
    let ini = ini::Ini::load_from_str(text).map_err(|e| config_err(format!("malformed file: {e}")))?;
    for (section, props) in ini.iter() {
        if let Some(name) = section {
            return Err(config_err(format!("sections are not supported, found [{name}]")));
        }
        for (k, v) in props.iter() {
            apply_file_entry(cfg, k.trim(), v)?;
        }
    }
    Ok(())
}

/// Defaults, then `RDL_SEED`, then the file, then flags.
pub fn parse_config(flags: &Flags, seed_env: Option<&str>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(s) = seed_env {
        cfg.seed = parse_value(SEED_ENV, s)?;
    }
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        apply_file(&mut cfg, &text)?;
    }
    macro_rules! over {
        ($($f:ident),*) => { $(if let Some(v) = &flags.$f { cfg.$f = v.clone(); })* };
    }
    over!(experiment, d, i, horizon, y, p, paths, depth, half_width, points, seed, out, mode, walk, bridge, coarse_integral);
    if let Some(v) = &flags.ns {
        cfg.ns = Some(v.clone());
    }
    for (dst, src) in [(&mut cfg.eps, flags.eps), (&mut cfg.theta, flags.theta)] {
        if src.is_some() {
            *dst = src;
        }
    }
    if flags.threads.is_some() {
        cfg.threads = flags.threads;
    }
    validate(&cfg)?;
    Ok(cfg)
}

pub fn validate(cfg: &RunConfig) -> CliResult<()> {
    if cfg.d == 0 || cfg.d > 3 {
        return Err(config_err(format!("d = {} outside 1..=3", cfg.d)));
    }
    if cfg.i == 0 || cfg.i > cfg.d {
        return Err(config_err(format!("i = {} requires 1 <= i <= d = {}", cfg.i, cfg.d)));
    }
    if let Some(ns) = &cfg.ns {
        if ns.is_empty() || ns.iter().any(|&n| n < 2) {
            return Err(config_err("every N must be at least 2"));
        }
        if ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("N values must be strictly increasing"));
        }
        if cfg.experiment.single_resolution().is_some() && ns.len() != 1 {
            return Err(config_err(format!("{} takes a single N", cfg.experiment.name())));
        }
    }
    let positive = [("T", cfg.horizon), ("y", cfg.y), ("L", cfg.half_width)];
    if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
        return Err(config_err(format!("{k} = {v} must be positive")));
    }
    if !(cfg.p > 1.0 && cfg.p.is_finite()) {
        return Err(config_err(format!("p = {} must exceed 1", cfg.p)));
    }
    if cfg.paths < 2 {
        return Err(config_err("paths must be at least 2"));
    }
    if cfg.depth == 0 || cfg.depth > 24 {
        return Err(config_err(format!("depth = {} outside 1..=24", cfg.depth)));
    }
    if !cfg.points.is_power_of_two() || cfg.points < 8 {
        return Err(config_err(format!("M = {} must be a power of two >= 8", cfg.points)));
    }
    if cfg.walk == WalkScaling::Decoupled && cfg.eps.is_none() {
        return Err(config_err("decoupled walks need eps"));
    }
    if let Some(e) = cfg.eps {
        if !(e > 0.0 && e < cfg.y) {
            return Err(config_err(format!("eps = {e} must lie in (0, y)")));
        }
    }
    if cfg.theta.is_some_and(|t| !(t > 0.0)) {
        return Err(config_err("theta must be positive"));
    }
    if cfg.threads == Some(0) {
        return Err(config_err("threads must be at least 1"));
    }
    Ok(())
}

fn resolutions(cfg: &RunConfig) -> Vec<u32> {
    cfg.ns.clone().unwrap_or_else(|| match cfg.experiment.single_resolution() {
        Some(n) => vec![n],
        None => vec![4, 8, 16],
    })
}

fn grid(cfg: &RunConfig) -> CliResult<GridSpec> {
    Ok(GridSpec::new(cfg.d, cfg.half_width, cfg.points)?)
}

/// Plane wave with a fixed oblique frequency in `d` dimensions.
fn plane_wave(d: u32) -> CliResult<PlaneWave> {
    let xi = [1.0, 0.5, -0.25][..d as usize].to_vec();
    Ok(PlaneWave::new(xi, 0.4, 1.0)?)
}

fn band(cfg: &RunConfig) -> Option<f64> {
    match cfg.walk {
        WalkScaling::Coupled => None,
        WalkScaling::Decoupled => cfg.eps,
    }
}

/// Runs the configured experiment in the current thread pool.
pub fn run_experiment(cfg: &RunConfig) -> CliResult<ExperimentReport> {
    let ns = resolutions(cfg);
    let (d, i) = (cfg.d, cfg.i);
    let report = match cfg.experiment {
        Experiment::Moments => run_moment_suite(&MomentConfig {
            d,
            i,
            n: ns[0],
            horizon: cfg.horizon,
            mode: match cfg.mode {
                Mode::Enumeration => SamplingMode::Enumeration,
                Mode::Montecarlo => SamplingMode::MonteCarlo,
            },
            paths: cfg.paths,
            seed: cfg.seed,
        })?,
        Experiment::WeakConvergence => run_weak_convergence(&WeakConvergenceConfig {
            d,
            i,
            y: cfg.y,
            horizon: cfg.horizon,
            ns,
            paths: cfg.paths,
            reference_paths: 10 * cfg.paths,
            psi: default_weak_payoff(d),
            tolerance: None,
            eps: band(cfg),
            seed: cfg.seed,
        })?,
        Experiment::MartingaleApprox => run_martingale_approx(&MartingaleApproxConfig {
            d,
            i,
            y: cfg.y,
            horizon: cfg.horizon,
            ns,
            ps: vec![cfg.p, 2.0 * cfg.p],
            paths: cfg.paths,
            f: HarmonicTest::PlaneWave(plane_wave(d)?),
            chunk: 4,
            eps: band(cfg),
            coarse_integral: cfg.coarse_integral,
            seed: cfg.seed,
        })?,
        Experiment::WeakFormulation => {
            let (f, g) = weak_formulation_pair(d)?;
            run_weak_formulation(&WeakFormulationConfig {
                d,
                i,
                y: cfg.y,
                horizon: cfg.horizon,
                n: ns[0],
                paths: cfg.paths,
                f,
                g,
                substep: None,
                bridge: cfg.bridge,
                eps: band(cfg),
                grid: grid(cfg)?,
                seed: cfg.seed,
            })?
        }
        Experiment::GvIdentity => {
            let mut c = GvIdentityConfig::default_for(d);
            c.i = i;
            c.grid = grid(cfg)?;
            run_gv_identity(&c)?
        }
        Experiment::NormComparison => run_norm_comparison(&NormComparisonConfig {
            d,
            i,
            p: cfg.p,
            depth: cfg.depth,
            grid: grid(cfg)?,
            budget: SearchBudget::default(),
            slack: 0.05,
            seed: cfg.seed,
        })?,
        Experiment::Vector => {
            let spec = grid(cfg)?;
            let (f, g) = vector_functions(&spec)?;
            let base = VectorConfig::default();
            run_vector_experiment(&VectorConfig {
                d,
                f,
                g,
                n: ns[0],
                theta: cfg.theta.unwrap_or(base.theta),
                eps: cfg.eps.unwrap_or(base.eps),
                box_half_width: cfg.half_width,
                start_center: vec![0.0; d as usize],
                paths: cfg.paths,
                grid: spec,
                norm_p: cfg.p,
                norm_depth: cfg.depth,
                seed: cfg.seed,
                ..base
            })?
        }
        Experiment::PointwiseRiesz => {
            if d > 2 {
                return Err(config_err("pointwise-riesz supports d = 1 or 2"));
            }
            let mut c = PointwiseConfig::default_for(d);
            c.i = i;
            c.paths = cfg.paths;
            c.grid = grid(cfg)?;
            c.seed = cfg.seed;
            run_pointwise_riesz(&c)?
        }
        Experiment::CauchyRiemann => run_cauchy_riemann(&CauchyRiemannConfig {
            dims: vec![d],
            ..Default::default()
        })?,
        Experiment::TransformIdentity => run_transform_identity(&TransformIdentityConfig {
            d,
            slices: vec![i],
            f: plane_wave(d)?,
            n: ns[0],
            horizon: cfg.horizon,
            y: cfg.y,
            ..Default::default()
        })?,
        Experiment::OperatorAlgebra => run_operator_algebra(&OperatorAlgebraConfig {
            seed: cfg.seed,
            ..Default::default()
        })?,
    };
    let mut report = report;
    let mut run = serde_json::to_value(cfg).expect("config serializes");
    if let Some(m) = run.as_object_mut() {
        m.remove("threads");
    }
    report.params = serde_json::json!({ "run": run, "experiment": report.params });
    Ok(report)
}

/// Runs `cfg` on a pool capped at `cfg.threads` and stamps the run metadata.
pub fn run_with_threads(cfg: &RunConfig) -> CliResult<ExperimentReport> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| config_err(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let mut report = pool.install(|| run_experiment(cfg))?;
    report.run_info = Some(RunInfo {
        timestamp: timestamp(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        threads: pool.current_num_threads(),
    });
    Ok(report)
}

fn timestamp() -> String {
    let now = time::OffsetDateTime::now_utc();
    now.format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_else(|_| now.unix_timestamp().to_string())
}

/// `param,value,estimate,stderr,exact` rows, numbers with 17 significant digits.
pub fn sweep_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("param,value,estimate,stderr,exact\n");
    for e in &report.estimates {
        let _ = writeln!(
            out,
            "{}/{},{:.16e},{:.16e},{:.16e},{}",
            e.quantity, e.param, e.value, e.estimate, e.stderr, e.exact as u8
        );
    }
    out
}

/// Report JSON without the run metadata, for rerun comparisons.
pub fn deterministic_json(report: &ExperimentReport) -> String {
    serde_json::to_string_pretty(&report.without_run_info()).expect("reports serialize")
}

/// Writes `<out>/<experiment>-<timestamp>/{report.json, sweep.csv}`; returns the directory.
pub fn write_report(out: &Path, report: &ExperimentReport) -> CliResult<PathBuf> {
    let stamp = time::OffsetDateTime::now_utc();
    let fmt = time::macros::format_description!("[year][month][day]T[hour][minute][second]Z");
    let base = format!("{}-{}", report.experiment, stamp.format(&fmt).unwrap_or_default());
    let mut dir = out.join(&base);
    let mut k = 1;
    while dir.exists() {
        dir = out.join(format!("{base}-{k}"));
        k += 1;
    }
    std::fs::create_dir_all(&dir)?;
    let json = serde_json::to_string_pretty(report).expect("reports serialize");
    std::fs::write(dir.join("report.json"), json + "\n")?;
    std::fs::write(dir.join("sweep.csv"), sweep_csv(report))?;
    Ok(dir)
}

/// Process exit status of a finished report: 0 iff every check passed.
pub fn exit_status(report: &ExperimentReport) -> i32 {
    if report.passed() {
        0
    } else {
        1
    }
}

/// Full command-line entry: parse, run, write, and return the exit status.
pub fn main_with(flags: Flags, seed_env: Option<&str>) -> i32 {
    let cfg = match parse_config(&flags, seed_env) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("rdl: {e}");
            return 2;
        }
    };
    let report = match run_with_threads(&cfg) {
        Ok(r) => r,
        Err(CliError::Config(m)) => {
            eprintln!("rdl: configuration: {m}");
            return 2;
        }
        Err(e) => {
            eprintln!("rdl: {e}");
            return 3;
        }
    };
    let dir = match write_report(&cfg.out, &report) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("rdl: {e}");
            return 3;
        }
    };
    println!("{}", dir.display());
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for c in report.failures() {
        eprintln!("rdl: assertion failed: {}", c.name);
    }
    exit_status(&report)
}
