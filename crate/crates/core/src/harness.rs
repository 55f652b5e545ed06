//! Monte Carlo size and power experiments, and rolling-window analysis.
//!
//! Every replication owns a ChaCha8 stream selected by its index, so a
//! report is a pure function of its configuration and any partition of the
//! replication range merges back into the full run exactly.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis_regression::{build_design, default_knot_candidates, select_knots_bic, SplineConfig};
use crate::dgp::{simulate, AlphaSpec, ErrorGenerator, ErrorScenario, Example, SimulatedPanel, DEFAULT_BURN_IN};
use crate::error::{Error, Result, Stage};
use crate::panel::{check_aligned, FactorMatrix, ReturnPanel};
use crate::stat_tests::{run_with_design, SuiteOptions, TestName, TestSuite};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "ALPHASIGN_THREADS";

/// Share of failed replications above which a report is flagged invalid.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

const TEST_COUNT: usize = TestName::ALL.len();

/// How the number of interior knots is chosen inside an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum KnotPolicy {
    Fixed(usize),
    /// BIC once per cell, on the null version of replication 0.
    #[default]
    BicPerCell,
    /// BIC on every replication.
    BicPerReplication,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub example: Example,
    pub scenario: ErrorScenario,
    pub assets: usize,
    pub periods: usize,
    pub reps: usize,
    pub seed: u64,
    pub alpha: AlphaSpec,
    pub level: f64,
    pub tests: Vec<TestName>,
    pub knots: KnotPolicy,
    /// Candidates for BIC; the default range for `T` when `None`.
    pub knot_candidates: Option<Vec<usize>>,
    pub suite: SuiteOptions,
    pub burn_in: usize,
    /// Keep per-replication p-values and statistics in the report.
    pub retain: bool,
}

impl ExperimentConfig {
    pub fn new(example: Example, scenario: ErrorScenario, assets: usize, periods: usize, reps: usize, seed: u64) -> Self {
        Self {
            example,
            scenario,
            assets,
            periods,
            reps,
            seed,
            alpha: AlphaSpec::null(),
            level: 0.05,
            tests: TestName::ALL.to_vec(),
            knots: KnotPolicy::default(),
            knot_candidates: None,
            suite: SuiteOptions::default(),
            burn_in: DEFAULT_BURN_IN,
            retain: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Domain("reps must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Domain(format!("level {} outside (0, 1)", self.level)));
        }
        if self.tests.is_empty() {
            return Err(Error::Domain("no tests requested".into()));
        }
        if self.assets < 3 {
            return Err(Error::Domain(format!("N = {} is below the minimum of 3", self.assets)));
        }
        if self.alpha.sparsity > self.assets {
            return Err(Error::Domain(format!("sparsity {} exceeds N = {}", self.alpha.sparsity, self.assets)));
        }
        if !(self.alpha.strength >= 0.0 && self.alpha.strength.is_finite()) {
            return Err(Error::Domain(format!("alpha strength {} must be finite and nonnegative", self.alpha.strength)));
        }
        self.scenario.validate()
    }

    fn candidates(&self) -> Vec<usize> {
        self.knot_candidates
            .clone()
            .unwrap_or_else(|| default_knot_candidates(self.periods))
    }
}

/// Deterministic generator for one replication.
pub fn replication_rng(seed: u64, rep_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep_index as u64);
    rng
}

/// P-values and statistics of all six tests for one replication, in
/// [`TestName::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationOutcome {
    pub p_values: [f64; TEST_COUNT],
    pub statistics: [Option<f64>; TEST_COUNT],
    pub interior_knots: usize,
}

impl ReplicationOutcome {
    fn from_suite(suite: &TestSuite) -> Self {
        let mut p_values = [0.0; TEST_COUNT];
        let mut statistics = [None; TEST_COUNT];
        for r in &suite.results {
            p_values[r.name.index()] = r.p_value;
            statistics[r.name.index()] = r.statistic;
        }
        Self {
            p_values,
            statistics,
            interior_knots: suite.interior_knots,
        }
    }

    pub fn p_value(&self, name: TestName) -> f64 {
        self.p_values[name.index()]
    }

    pub fn statistic(&self, name: TestName) -> Option<f64> {
        self.statistics[name.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub index: usize,
    pub outcome: std::result::Result<ReplicationOutcome, String>,
}

/// A configured experiment with the error factorization and cell knots prepared.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    errors: ErrorGenerator,
    cell_knots: Option<usize>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let errors = ErrorGenerator::new(config.scenario, config.assets)?;
        let mut exp = Self {
            config,
            errors,
            cell_knots: None,
        };
        exp.cell_knots = match exp.config.knots {
            KnotPolicy::Fixed(n) => Some(n),
            KnotPolicy::BicPerCell => Some(exp.select_cell_knots()?),
            KnotPolicy::BicPerReplication => None,
        };
        Ok(exp)
    }

    /// Reuses knots chosen elsewhere, e.g. across the strength grid of a power curve.
    pub fn with_knots(config: ExperimentConfig, knots: usize) -> Result<Self> {
        config.validate()?;
        let errors = ErrorGenerator::new(config.scenario, config.assets)?;
        Ok(Self {
            config,
            errors,
            cell_knots: Some(knots),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// Knots shared by every replication, if the policy fixes them.
    pub fn cell_knots(&self) -> Option<usize> {
        self.cell_knots
    }

    fn select_cell_knots(&self) -> Result<usize> {
        // Alpha is drawn last, so the null panel shares factors and errors
        // with replication 0 under any alpha specification.
        let mut rng = replication_rng(self.config.seed, 0);
        let sim = simulate(
            self.config.example,
            &self.errors,
            &AlphaSpec::null(),
            self.config.periods,
            self.config.burn_in,
            &mut rng,
        )?;
        let selection = select_knots_bic(&sim.panel, sim.factors.data(), self.config.suite.order, &self.config.candidates())
            .map_err(|e| e.at(Stage::KnotSelection))?;
        Ok(selection.chosen)
    }

    /// The simulated data of one replication.
    pub fn simulate(&self, rep_index: usize) -> Result<SimulatedPanel> {
        let mut rng = replication_rng(self.config.seed, rep_index);
        simulate(
            self.config.example,
            &self.errors,
            &self.config.alpha,
            self.config.periods,
            self.config.burn_in,
            &mut rng,
        )
    }

    pub fn run_replication(&self, rep_index: usize) -> Result<ReplicationOutcome> {
        let sim = self.simulate(rep_index)?;
        let order = self.config.suite.order;
        let n = match self.cell_knots {
            Some(n) => n,
            None => {
                select_knots_bic(&sim.panel, sim.factors.data(), order, &self.config.candidates())
                    .map_err(|e| e.at(Stage::KnotSelection))?
                    .chosen
            }
        };
        let config = SplineConfig::new(order, n)?;
        let design = build_design(sim.factors.data(), config).map_err(|e| e.at(Stage::Design))?;
        let suite = run_with_design(&sim.panel, &design, &self.config.suite)?;
        Ok(ReplicationOutcome::from_suite(&suite))
    }

    /// Replications `range`, in parallel on the pool sized by [`THREADS_ENV`].
    pub fn run_range(&self, range: std::ops::Range<usize>) -> ExperimentReport {
        let start = Instant::now();
        let records: Vec<ReplicationRecord> = with_pool(|| {
            range
                .clone()
                .into_par_iter()
                .map(|index| ReplicationRecord {
                    index,
                    outcome: self.run_replication(index).map_err(|e| e.to_string()),
                })
                .collect()
        });
        let mut report = ExperimentReport::from_records(&self.config, self.cell_knots, records);
        report.wall_time = start.elapsed();
        report
    }

    pub fn run(&self) -> ExperimentReport {
        self.run_range(0..self.config.reps)
    }
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

/// One replication without a prepared [`Experiment`]; knot selection is
/// repeated, so prefer [`Experiment::run_replication`] in loops.
pub fn run_replication(config: &ExperimentConfig, rep_index: usize) -> Result<ReplicationOutcome> {
    Experiment::new(config.clone())?.run_replication(rep_index)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    Ok(Experiment::new(config.clone())?.run())
}

/// Aggregated outcome of a batch of replications.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub level: f64,
    pub tests: Vec<TestName>,
    pub interior_knots: Option<usize>,
    /// Rejections at `level` in [`TestName::ALL`] order.
    pub rejections: [usize; TEST_COUNT],
    pub successes: usize,
    pub failures: Vec<(usize, String)>,
    /// Per-replication outcomes sorted by index when retention is on.
    pub records: Option<Vec<ReplicationRecord>>,
    pub wall_time: Duration,
}

impl PartialEq for ExperimentReport {
    /// Ignores wall time.
    fn eq(&self, other: &Self) -> bool {
        self.level == other.level
            && self.tests == other.tests
            && self.interior_knots == other.interior_knots
            && self.rejections == other.rejections
            && self.successes == other.successes
            && self.failures == other.failures
            && self.records == other.records
    }
}

impl ExperimentReport {
    fn from_records(config: &ExperimentConfig, interior_knots: Option<usize>, records: Vec<ReplicationRecord>) -> Self {
        let mut rejections = [0; TEST_COUNT];
        let mut successes = 0;
        let mut failures = Vec::new();
        for rec in &records {
            match &rec.outcome {
                Ok(out) => {
                    successes += 1;
                    for (count, p) in rejections.iter_mut().zip(out.p_values) {
                        if p < config.level {
                            *count += 1;
                        }
                    }
                }
                Err(msg) => failures.push((rec.index, msg.clone())),
            }
        }
        Self {
            level: config.level,
            tests: config.tests.clone(),
            interior_knots,
            rejections,
            successes,
            failures,
            records: config.retain.then_some(records),
            wall_time: Duration::ZERO,
        }
    }

    pub fn attempted(&self) -> usize {
        self.successes + self.failures.len()
    }

    /// Rejection rate over successful replications; zero when none succeeded.
    pub fn rejection_rate(&self, name: TestName) -> f64 {
        if self.successes == 0 {
            return 0.0;
        }
        self.rejections[name.index()] as f64 / self.successes as f64
    }

    /// Rates for the requested tests, in request order.
    pub fn rates(&self) -> Vec<(TestName, f64)> {
        self.tests.iter().map(|&t| (t, self.rejection_rate(t))).collect()
    }

    pub fn failure_share(&self) -> f64 {
        match self.attempted() {
            0 => 0.0,
            n => self.failures.len() as f64 / n as f64,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.successes > 0 && self.failure_share() <= MAX_FAILURE_SHARE
    }

    /// Successful outcomes in replication order; empty without retention.
    pub fn outcomes(&self) -> Vec<&ReplicationOutcome> {
        self.records
            .iter()
            .flatten()
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect()
    }

    /// Combines reports over disjoint replication ranges of the same experiment.
    pub fn merge(mut self, other: ExperimentReport) -> Result<ExperimentReport> {
        if self.level != other.level || self.tests != other.tests || self.interior_knots != other.interior_knots {
            return Err(Error::Contract("reports come from different experiments".into()));
        }
        for (a, b) in self.rejections.iter_mut().zip(other.rejections) {
            *a += b;
        }
        self.successes += other.successes;
        self.failures.extend(other.failures);
        self.failures.sort_by_key(|f| f.0);
        self.records = match (self.records, other.records) {
            (Some(mut a), Some(b)) => {
                a.extend(b);
                a.sort_by_key(|r| r.index);
                Some(a)
            }
            _ => None,
        };
        self.wall_time += other.wall_time;
        Ok(self)
    }

    pub const CSV_HEADER: &'static str = "test,rejection_rate,rejections,replications,failures,valid";

    /// One row per requested test, without a trailing header comment.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", Self::CSV_HEADER).unwrap();
        for &t in &self.tests {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                t,
                self.rejection_rate(t),
                self.rejections[t.index()],
                self.successes,
                self.failures.len(),
                self.is_valid()
            )
            .unwrap();
        }
        out
    }
}

/// One point of a power curve.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerPoint {
    pub strength: f64,
    pub report: ExperimentReport,
}

/// Reruns `base` for every strength in `grid`, sharing the cell knots and
/// the replication streams across the grid.
pub fn power_curve(base: &ExperimentConfig, grid: &[f64]) -> Result<Vec<PowerPoint>> {
    let first = Experiment::new(base.clone())?;
    let knots = first.cell_knots();
    grid.iter()
        .map(|&strength| {
            let mut cfg = base.clone();
            cfg.alpha.strength = strength;
            let exp = match knots {
                Some(n) => Experiment::with_knots(cfg, n)?,
                None => Experiment::new(cfg)?,
            };
            Ok(PowerPoint {
                strength,
                report: exp.run(),
            })
        })
        .collect()
}

pub const POWER_CSV_HEADER: &str = "example,scenario,N,T,s,c,test,rejection_rate";

/// Long-format rows for plotting, one per (strength, test).
pub fn power_curve_csv(base: &ExperimentConfig, points: &[PowerPoint]) -> String {
    let mut out = String::new();
    writeln!(out, "{POWER_CSV_HEADER}").unwrap();
    for point in points {
        for (test, rate) in point.report.rates() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                base.example,
                base.scenario,
                base.assets,
                base.periods,
                base.alpha.sparsity,
                point.strength,
                test,
                rate
            )
            .unwrap();
        }
    }
    out
}

/// Levels at which rolling rejection ratios are reported.
pub const ROLLING_LEVELS: [f64; 2] = [0.01, 0.05];

#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    /// First row of the window.
    pub start: usize,
    pub outcome: std::result::Result<ReplicationOutcome, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingReport {
    pub window: usize,
    pub windows: Vec<WindowResult>,
}

impl RollingReport {
    /// Share of successful windows with `p < level`.
    pub fn rejection_ratio(&self, name: TestName, level: f64) -> f64 {
        let ok: Vec<f64> = self
            .windows
            .iter()
            .filter_map(|w| w.outcome.as_ref().ok().map(|o| o.p_value(name)))
            .collect();
        if ok.is_empty() {
            return 0.0;
        }
        ok.iter().filter(|&&p| p < level).count() as f64 / ok.len() as f64
    }

    pub fn failures(&self) -> usize {
        self.windows.iter().filter(|w| w.outcome.is_err()).count()
    }

    pub fn window_csv_header(tests: &[TestName]) -> String {
        let mut h = String::from("window,start_label,end_label");
        for t in tests {
            write!(h, ",{t}").unwrap();
        }
        h
    }

    /// One row per window with the p-values of `tests`; failed windows have empty cells.
    pub fn windows_csv(&self, tests: &[TestName], labels: &[String]) -> String {
        let mut out = String::new();
        writeln!(out, "{}", Self::window_csv_header(tests)).unwrap();
        for (w, res) in self.windows.iter().enumerate() {
            let first = labels.get(res.start).cloned().unwrap_or_default();
            let last = labels.get(res.start + self.window - 1).cloned().unwrap_or_default();
            write!(out, "{w},{first},{last}").unwrap();
            for &t in tests {
                match &res.outcome {
                    Ok(o) => write!(out, ",{}", o.p_value(t)).unwrap(),
                    Err(_) => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    /// `test,ratio_0.01,ratio_0.05` rows.
    pub fn summary_csv(&self, tests: &[TestName]) -> String {
        let mut out = String::from("test");
        for level in ROLLING_LEVELS {
            write!(out, ",ratio_{level}").unwrap();
        }
        out.push('\n');
        for &t in tests {
            write!(out, "{t}").unwrap();
            for level in ROLLING_LEVELS {
                write!(out, ",{}", self.rejection_ratio(t, level)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Knots used inside a rolling window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WindowKnots {
    Fixed(usize),
    /// BIC within each window over these candidates, or the default range for `h`.
    Bic(Option<Vec<usize>>),
}

/// Runs the suite on each of the `T - h + 1` windows `w..w+h`.
pub fn rolling_windows(
    panel: &ReturnPanel,
    factors: &FactorMatrix,
    window: usize,
    knots: &WindowKnots,
    suite: &SuiteOptions,
) -> Result<RollingReport> {
    check_aligned(panel, factors)?;
    let t_len = panel.periods();
    if window > t_len {
        return Err(Error::Contract(format!("window {window} exceeds T = {t_len}")));
    }
    let candidates = match knots {
        WindowKnots::Fixed(n) => vec![*n],
        WindowKnots::Bic(Some(c)) => c.clone(),
        WindowKnots::Bic(None) => default_knot_candidates(window),
    };
    let smallest = candidates
        .iter()
        .copied()
        .min()
        .ok_or_else(|| Error::Domain("no knot candidates".into()))?;
    let width = (1 + factors.count()) * SplineConfig::new(suite.order, smallest)?.basis_dim();
    if window < width + 1 {
        return Err(Error::Contract(format!(
            "window {window} is below the minimum fit size {}",
            width + 1
        )));
    }

    let run_window = |start: usize| -> Result<ReplicationOutcome> {
        let p = panel.slice_rows(start, window);
        let f = factors.slice_rows(start, window);
        let n = if candidates.len() == 1 {
            candidates[0]
        } else {
            select_knots_bic(&p, f.data(), suite.order, &candidates)
                .map_err(|e| e.at(Stage::KnotSelection))?
                .chosen
        };
        let design = build_design(f.data(), SplineConfig::new(suite.order, n)?).map_err(|e| e.at(Stage::Design))?;
        Ok(ReplicationOutcome::from_suite(&run_with_design(&p, &design, suite)?))
    };

    let windows = with_pool(|| {
        (0..=t_len - window)
            .into_par_iter()
            .map(|start| WindowResult {
                start,
                outcome: run_window(start).map_err(|e| e.to_string()),
            })
            .collect()
    });
    Ok(RollingReport { window, windows })
}
