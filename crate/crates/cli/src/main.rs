//! `alphasign` command-line front end.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use alphasign::basis_regression::{default_knot_candidates, select_knots_bic, DEFAULT_ORDER};
use alphasign::dgp::{simulate, AlphaMode, AlphaSpec, ErrorDistribution, ErrorGenerator, ErrorScenario, Example, DEFAULT_BURN_IN};
use alphasign::harness::{
    power_curve, power_curve_csv, replication_rng, rolling_windows, Experiment, ExperimentConfig, KnotPolicy,
    RollingReport, WindowKnots,
};
use alphasign::io::{format_factors, format_panel, read_factors, read_panel};
use alphasign::stat_tests::{run_all_tests, CssCalibration, KnotChoice, MntDof, SuiteOptions, TestName, TestResult};
use alphasign::{Error, ErrorKind, FactorMatrix, ReturnPanel};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "alphasign", version, about = "Robust high-dimensional alpha tests for conditional factor models")]
#[command(args_override_self = true)]
struct Cli {
    /// Flat `key=value` file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Run the six tests on a return panel and its factors.
    Test(TestArgs),
    /// Empirical size of the tests on simulated null panels.
    SimulateSize(SimArgs),
    /// Empirical power over a grid of alpha strengths.
    SimulatePower(PowerArgs),
    /// Run the tests on every overlapping window of a panel.
    Rolling(RollingArgs),
    /// Report the BIC table used to choose the number of interior knots.
    Knots(KnotsArgs),
    /// Write one simulated return panel and its factors.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Args)]
struct DataArgs {
    /// Return panel CSV (first column labels, header of asset names).
    #[arg(long, value_name = "PATH")]
    returns: PathBuf,
    /// Factor CSV with the same row count; an `rf` column is subtracted from returns.
    #[arg(long, value_name = "PATH")]
    factors: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct SuiteArgs {
    /// Interior knots: a count, or `auto` for BIC.
    #[arg(long, default_value = "auto", value_parser = parse_knots)]
    knots: KnotArg,
    /// Spline order.
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: usize,
    /// Comma-separated subset of HDA, MNT, Ada, CSS, CSM, CC.
    #[arg(long, value_delimiter = ',', value_parser = parse_test)]
    tests: Option<Vec<TestName>>,
    /// Significance level for reported rejections.
    #[arg(long, default_value_t = 0.05, value_parser = parse_level)]
    level: f64,
    /// Residual degrees of freedom used by MNT.
    #[arg(long, value_enum, default_value_t = MntDofArg::Factors)]
    mnt_dof: MntDofArg,
    /// CSS centering and reference distribution.
    #[arg(long, value_enum, default_value_t = CssArg::FiniteSample)]
    css: CssArg,
}

#[derive(Debug, Clone, Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    suite: SuiteArgs,
    /// Output CSV; stdout when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct SimArgs {
    #[arg(long, default_value = "1", value_parser = parse_example)]
    example: Example,
    /// normal, t3, mixture or icm.
    #[arg(long, default_value = "normal", value_parser = parse_errors)]
    errors: ErrorDistribution,
    #[arg(long = "N", default_value_t = 200, value_parser = clap::value_parser!(usize))]
    n: usize,
    #[arg(long = "T", default_value_t = 350, value_parser = clap::value_parser!(usize))]
    t: usize,
    #[arg(long, default_value_t = 500, value_parser = parse_positive)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Re-run BIC on every replication instead of once per cell.
    #[arg(long)]
    reselect_knots: bool,
    /// `constant` (alpha_it = alpha_i) or `over-t` (alpha_it = alpha_i / T).
    #[arg(long, value_enum, default_value_t = AlphaModeArg::Constant)]
    alpha_mode: AlphaModeArg,
    #[command(flatten)]
    suite: SuiteArgs,
    /// Output CSV; stdout when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct PowerArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Number of assets with nonzero alpha.
    #[arg(long, default_value_t = 2)]
    sparsity: usize,
    /// Comma-separated alpha strengths `c`.
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10,12,14,16,18,20", value_parser = parse_nonneg)]
    strength_grid: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
struct RollingArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Window length `h`.
    #[arg(long, value_parser = parse_positive)]
    window: usize,
    #[command(flatten)]
    suite: SuiteArgs,
    /// Per-window p-values; stdout when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Rejection ratios at 1% and 5%; printed to stdout when `--out` is given.
    #[arg(long, value_name = "PATH")]
    summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct KnotsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated candidate counts; default 1..=ceil(T^0.2)+4.
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<usize>>,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: usize,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct GenerateArgs {
    #[arg(long, default_value = "1", value_parser = parse_example)]
    example: Example,
    #[arg(long, default_value = "normal", value_parser = parse_errors)]
    errors: ErrorDistribution,
    #[arg(long = "N", default_value_t = 200)]
    n: usize,
    #[arg(long = "T", default_value_t = 350)]
    t: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    sparsity: usize,
    #[arg(long, default_value_t = 0.0, value_parser = parse_nonneg)]
    strength: f64,
    #[arg(long, value_enum, default_value_t = AlphaModeArg::Constant)]
    alpha_mode: AlphaModeArg,
    /// Where to write the return panel.
    #[arg(long, value_name = "PATH")]
    returns_out: PathBuf,
    /// Where to write the factors.
    #[arg(long, value_name = "PATH")]
    factors_out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum KnotArg {
    Fixed(usize),
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MntDofArg {
    Factors,
    Sieve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CssArg {
    Asymptotic,
    FiniteSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlphaModeArg {
    Constant,
    OverT,
}

fn parse_knots(s: &str) -> Result<KnotArg, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(KnotArg::Auto);
    }
    s.parse()
        .map(KnotArg::Fixed)
        .map_err(|_| format!("expected a knot count or 'auto', got '{s}'"))
}

fn parse_test(s: &str) -> Result<TestName, String> {
    TestName::from_str(s).map_err(|e| e.to_string())
}

fn parse_example(s: &str) -> Result<Example, String> {
    Example::from_str(s).map_err(|e| e.to_string())
}

fn parse_errors(s: &str) -> Result<ErrorDistribution, String> {
    ErrorDistribution::from_str(s).map_err(|e| e.to_string())
}

fn parse_level(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err(format!("level must lie in (0, 1), got '{s}'")),
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("expected a positive integer, got '{s}'")),
    }
}

fn parse_nonneg(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a nonnegative number, got '{s}'")),
    }
}

impl SuiteArgs {
    fn options(&self) -> SuiteOptions {
        SuiteOptions {
            order: self.order,
            knots: match self.knots {
                KnotArg::Fixed(n) => KnotChoice::Fixed(n),
                KnotArg::Auto => KnotChoice::Bic(None),
            },
            mnt_dof: match self.mnt_dof {
                MntDofArg::Factors => MntDof::Factors,
                MntDofArg::Sieve => MntDof::Sieve,
            },
            css: match self.css {
                CssArg::Asymptotic => CssCalibration::Asymptotic,
                CssArg::FiniteSample => CssCalibration::FiniteSample,
            },
            ..SuiteOptions::default()
        }
    }

    fn tests(&self) -> Vec<TestName> {
        self.tests.clone().unwrap_or_else(|| TestName::ALL.to_vec())
    }
}

impl AlphaModeArg {
    fn mode(self) -> AlphaMode {
        match self {
            AlphaModeArg::Constant => AlphaMode::Constant,
            AlphaModeArg::OverT => AlphaMode::OverT,
        }
    }
}

impl SimArgs {
    fn experiment_config(&self, alpha: AlphaSpec) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(self.example, ErrorScenario::new(self.errors), self.n, self.t, self.reps, self.seed);
        cfg.alpha = alpha;
        cfg.level = self.suite.level;
        cfg.tests = self.suite.tests();
        cfg.suite = self.suite.options();
        cfg.knots = match (self.suite.knots, self.reselect_knots) {
            (KnotArg::Fixed(n), _) => KnotPolicy::Fixed(n),
            (KnotArg::Auto, false) => KnotPolicy::BicPerCell,
            (KnotArg::Auto, true) => KnotPolicy::BicPerReplication,
        };
        cfg
    }
}

/// Failure carrying the process exit status.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}

fn run(argv: Vec<OsString>) -> CliResult<()> {
    let argv = with_config_defaults(argv)?;
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return if code == 0 {
                Ok(())
            } else {
                Err(Failure {
                    code,
                    message: String::new(),
                })
            };
        }
    };
    let hash = config_hash(&cli.command);
    match &cli.command {
        Command::Test(a) => cmd_test(a, &hash),
        Command::SimulateSize(a) => cmd_simulate_size(a, &hash),
        Command::SimulatePower(a) => cmd_simulate_power(a, &hash),
        Command::Rolling(a) => cmd_rolling(a, &hash),
        Command::Knots(a) => cmd_knots(a, &hash),
        Command::Generate(a) => cmd_generate(a, &hash),
    }
}

/// Splices `--key value` pairs from the `--config` file in front of the
/// user's own flags, so the latter win when both are present.
fn with_config_defaults(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut path = None;
    let mut iter = argv.iter().enumerate();
    while let Some((_, arg)) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            path = iter.next().map(|(_, p)| PathBuf::from(p));
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let entries = parse_config(&text).map_err(Failure::usage)?;

    // the subcommand is the first argument that is neither a flag nor a flag's value
    let sub_at = argv
        .iter()
        .enumerate()
        .skip(1)
        .find(|(i, a)| {
            let s = a.to_string_lossy();
            let prev = argv[i - 1].to_string_lossy();
            !s.starts_with('-') && prev != "--config"
        })
        .map(|(i, _)| i);
    let Some(sub_at) = sub_at else {
        return Ok(argv);
    };
    let mut out: Vec<OsString> = argv[..=sub_at].to_vec();
    for (key, value) in entries {
        if value.eq_ignore_ascii_case("true") {
            out.push(format!("--{key}").into());
        } else if !value.eq_ignore_ascii_case("false") {
            out.push(format!("--{key}").into());
            out.push(value.into());
        }
    }
    out.extend_from_slice(&argv[sub_at + 1..]);
    Ok(out)
}

fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", i + 1))?;
        let key = k.trim().trim_start_matches("--");
        if key.is_empty() || key == "config" {
            return Err(format!("config line {}: invalid key '{}'", i + 1, k.trim()));
        }
        map.insert(key.to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// SHA-256 of the resolved settings, output paths excluded.
fn config_hash(command: &Command) -> String {
    let mut c = command.clone();
    match &mut c {
        Command::Test(a) => a.out = None,
        Command::SimulateSize(a) => a.out = None,
        Command::SimulatePower(a) => a.sim.out = None,
        Command::Rolling(a) => {
            a.out = None;
            a.summary = None;
        }
        Command::Knots(a) => a.out = None,
        Command::Generate(a) => {
            a.returns_out = PathBuf::new();
            a.factors_out = PathBuf::new();
        }
    }
    let digest = Sha256::digest(format!("{VERSION}\n{c:?}").as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn provenance(hash: &str, seed: Option<u64>) -> String {
    let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    format!("# alphasign {VERSION} config_hash={hash} seed={seed}\n")
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| {
            Failure::from(Error::Io {
                path: path.to_path_buf(),
                source,
            })
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_data(args: &DataArgs) -> CliResult<(ReturnPanel, FactorMatrix)> {
    let mut panel = read_panel(&args.returns)?;
    let factors = read_factors(&args.factors)?;
    if factors.periods() != panel.periods() {
        return Err(Error::Contract(format!(
            "return panel has {} rows but factor file has {}",
            panel.periods(),
            factors.periods()
        ))
        .into());
    }
    if let Some(rf) = factors.risk_free() {
        panel.subtract_risk_free(rf)?;
    }
    Ok((panel, factors))
}

fn cmd_test(args: &TestArgs, hash: &str) -> CliResult<()> {
    let (panel, factors) = load_data(&args.data)?;
    let suite = run_all_tests(&panel, &factors, &args.suite.options())?;
    let mut text = provenance(hash, None);
    writeln!(
        text,
        "# N={} T={} interior_knots={} omega_T={}",
        panel.assets(),
        panel.periods(),
        suite.interior_knots,
        suite.omega_t
    )
    .unwrap();
    writeln!(text, "{},reject", TestResult::CSV_HEADER).unwrap();
    for name in args.suite.tests() {
        let r = suite.get(name);
        writeln!(text, "{},{}", r.csv_row(), r.p_value < args.suite.level).unwrap();
    }
    emit(args.out.as_deref(), &text)
}

fn cmd_simulate_size(args: &SimArgs, hash: &str) -> CliResult<()> {
    let cfg = args.experiment_config(AlphaSpec::null());
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let start = Instant::now();
    let exp = Experiment::new(cfg)?;
    let report = exp.run();
    let mut text = provenance(hash, Some(args.seed));
    writeln!(
        text,
        "# example={} errors={} N={} T={} reps={} level={} interior_knots={}",
        args.example,
        args.errors.as_str(),
        args.n,
        args.t,
        args.reps,
        args.suite.level,
        report.interior_knots.map_or_else(|| "per-replication".to_string(), |n| n.to_string())
    )
    .unwrap();
    text.push_str(&report.to_csv());
    emit(args.out.as_deref(), &text)?;
    eprintln!(
        "{} replications, {} failed, {:.1}s",
        report.attempted(),
        report.failures.len(),
        start.elapsed().as_secs_f64()
    );
    if !report.is_valid() {
        eprintln!("warning: more than 5% of replications failed; rates are not reliable");
    }
    Ok(())
}

fn cmd_simulate_power(args: &PowerArgs, hash: &str) -> CliResult<()> {
    let sim = &args.sim;
    let alpha = AlphaSpec {
        sparsity: args.sparsity,
        strength: 0.0,
        mode: sim.alpha_mode.mode(),
    };
    let cfg = sim.experiment_config(alpha);
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let start = Instant::now();
    let points = power_curve(&cfg, &args.strength_grid)?;
    let mut text = provenance(hash, Some(sim.seed));
    text.push_str(&power_curve_csv(&cfg, &points));
    emit(sim.out.as_deref(), &text)?;
    let failed: usize = points.iter().map(|p| p.report.failures.len()).sum();
    eprintln!(
        "{} grid points x {} replications, {failed} failed, {:.1}s",
        points.len(),
        sim.reps,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_rolling(args: &RollingArgs, hash: &str) -> CliResult<()> {
    let (panel, factors) = load_data(&args.data)?;
    if args.window > panel.periods() {
        return Err(Failure::usage(format!(
            "window {} exceeds the {} available periods",
            args.window,
            panel.periods()
        )));
    }
    let knots = match args.suite.knots {
        KnotArg::Fixed(n) => WindowKnots::Fixed(n),
        KnotArg::Auto => WindowKnots::Bic(None),
    };
    let report = rolling_windows(&panel, &factors, args.window, &knots, &args.suite.options())?;
    let tests = args.suite.tests();
    let header = provenance(hash, None);
    let windows = format!("{header}{}", report.windows_csv(&tests, panel.labels()));
    let summary = format!("{header}{}", report.summary_csv(&tests));
    emit(args.out.as_deref(), &windows)?;
    match (&args.summary, &args.out) {
        (Some(path), _) => emit(Some(path), &summary)?,
        (None, Some(_)) => emit(None, &summary)?,
        (None, None) => {}
    }
    report_window_failures(&report);
    Ok(())
}

fn report_window_failures(report: &RollingReport) {
    let failed = report.failures();
    if failed > 0 {
        eprintln!("warning: {failed} of {} windows failed", report.windows.len());
    }
}

fn cmd_knots(args: &KnotsArgs, hash: &str) -> CliResult<()> {
    let (panel, factors) = load_data(&args.data)?;
    let candidates = args
        .candidates
        .clone()
        .unwrap_or_else(|| default_knot_candidates(panel.periods()));
    let selection = select_knots_bic(&panel, factors.data(), args.order, &candidates)?;
    let mut text = provenance(hash, None);
    text.push_str("interior_knots,bic,chosen\n");
    for entry in &selection.table {
        let bic = entry.bic.map(|b| b.to_string()).unwrap_or_default();
        writeln!(text, "{},{},{}", entry.interior_knots, bic, entry.interior_knots == selection.chosen).unwrap();
    }
    emit(args.out.as_deref(), &text)
}

fn cmd_generate(args: &GenerateArgs, hash: &str) -> CliResult<()> {
    let alpha = AlphaSpec {
        sparsity: args.sparsity,
        strength: args.strength,
        mode: args.alpha_mode.mode(),
    };
    if args.sparsity > args.n {
        return Err(Failure::usage(format!("sparsity {} exceeds N = {}", args.sparsity, args.n)));
    }
    let errors = ErrorGenerator::new(ErrorScenario::new(args.errors), args.n).map_err(|e| Failure::usage(e.to_string()))?;
    let mut rng = replication_rng(args.seed, 0);
    let sim = simulate(args.example, &errors, &alpha, args.t, DEFAULT_BURN_IN, &mut rng)?;
    let header = provenance(hash, Some(args.seed));
    emit(Some(&args.returns_out), &format!("{header}{}", format_panel(&sim.panel)))?;
    emit(Some(&args.factors_out), &format!("{header}{}", format_factors(&sim.factors)))
}
