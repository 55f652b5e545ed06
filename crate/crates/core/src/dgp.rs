//! Seeded generators for the simulation designs.
//!
//! Three return-generating examples share the same building blocks:
//!
//! 1. conditional CAPM, one AR(1)-GARCH(1,1) market factor, loading
//!    `G(10 t/T, 2, 2)`;
//! 2. three AR-GARCH factors, loadings `a_j + b_j z_t` driven by a latent
//!    AR(1) state that the fit never observes;
//! 3. the factors of example 2 with loadings `a_j G(10 t/T, 2, 2) + b_j`.
//!
//! Loadings are identical across assets in all three examples, so they are
//! stored once per period.
//!
//! Errors follow one of four scenarios around `Sigma = (0.5^{|i-j|})`:
//! Gaussian, multivariate t(3) with scatter `Sigma`, a standardized
//! 0.9/0.1 scale mixture, and an independent-components model
//! `Sigma^{1/2} w` with `t(3)/sqrt(3)` components.
//!
//! [`simulate`] draws everything from one generator in a fixed order:
//! factor paths, latent state, errors, then the alpha support and values.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Open01, StandardNormal, StudentT};

use crate::error::{Error, Result};
use crate::panel::{FactorMatrix, ReturnPanel};

pub const DEFAULT_BURN_IN: usize = 50;

/// AR(1) mean equation with GARCH(1,1) variance:
/// `f_t - mu = a (f_{t-1} - mu) + h_t^{1/2} phi_t`,
/// `h_t = omega + beta h_{t-1} + alpha h_{t-1} phi_{t-1}^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorSpec {
    pub mean: f64,
    pub ar_coef: f64,
    pub garch_omega: f64,
    pub garch_beta: f64,
    pub garch_alpha: f64,
}

impl FactorSpec {
    pub const MARKET: FactorSpec = FactorSpec {
        mean: 0.34,
        ar_coef: 0.05,
        garch_omega: 0.32,
        garch_beta: 0.67,
        garch_alpha: 0.13,
    };
    pub const SMB: FactorSpec = FactorSpec {
        mean: 0.04,
        ar_coef: 0.07,
        garch_omega: 0.33,
        garch_beta: 0.51,
        garch_alpha: 0.03,
    };
    pub const HML: FactorSpec = FactorSpec {
        mean: 0.06,
        ar_coef: 0.04,
        garch_omega: 0.26,
        garch_beta: 0.72,
        garch_alpha: 0.05,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.garch_omega > 0.0) {
            return Err(Error::Domain(format!("GARCH omega {} must be positive", self.garch_omega)));
        }
        if self.garch_beta < 0.0 || self.garch_alpha < 0.0 || !(self.garch_beta + self.garch_alpha < 1.0) {
            return Err(Error::Domain(format!(
                "GARCH beta + alpha = {} is not covariance stationary",
                self.garch_beta + self.garch_alpha
            )));
        }
        Ok(())
    }

    /// Fixed point of the variance recursion, `omega / (1 - beta - alpha)`.
    pub fn unconditional_variance(&self) -> f64 {
        self.garch_omega / (1.0 - self.garch_beta - self.garch_alpha)
    }
}

/// AR-GARCH path driven by an arbitrary innovation source. The recursion
/// starts at `f = 0, h = 1` with a zero initial shock, and the first
/// `burn_in` points are discarded.
pub fn ar_garch_path_with(
    spec: &FactorSpec,
    periods: usize,
    burn_in: usize,
    mut innovation: impl FnMut() -> f64,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut f = 0.0;
    let mut h = 1.0;
    let mut prev_shock: f64 = 0.0;
    let mut out = Vec::with_capacity(periods);
    for step in 0..burn_in + periods {
        h = spec.garch_omega + spec.garch_beta * h + spec.garch_alpha * h * prev_shock * prev_shock;
        let shock = innovation();
        f = spec.mean + spec.ar_coef * (f - spec.mean) + h.sqrt() * shock;
        prev_shock = shock;
        if step >= burn_in {
            out.push(f);
        }
    }
    Ok(out)
}

pub fn ar_garch_path<R: Rng + ?Sized>(spec: &FactorSpec, periods: usize, burn_in: usize, rng: &mut R) -> Result<Vec<f64>> {
    ar_garch_path_with(spec, periods, burn_in, || rng.sample(StandardNormal))
}

/// `[1 + exp{-k1 (z - k2)}]^{-1}`.
pub fn logistic_g(z: f64, k1: f64, k2: f64) -> f64 {
    1.0 / (1.0 + (-k1 * (z - k2)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Example {
    One,
    Two,
    Three,
}

impl Example {
    pub fn factor_count(&self) -> usize {
        match self {
            Example::One => 1,
            Example::Two | Example::Three => 3,
        }
    }

    pub fn factor_specs(&self) -> Vec<FactorSpec> {
        match self {
            Example::One => vec![FactorSpec::MARKET],
            Example::Two | Example::Three => vec![FactorSpec::MARKET, FactorSpec::SMB, FactorSpec::HML],
        }
    }

    pub fn number(&self) -> u8 {
        match self {
            Example::One => 1,
            Example::Two => 2,
            Example::Three => 3,
        }
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Example {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(Example::One),
            "2" => Ok(Example::Two),
            "3" => Ok(Example::Three),
            other => Err(Error::Domain(format!("unknown example '{other}' (expected 1, 2 or 3)"))),
        }
    }
}

const EX2_LOADINGS: [(f64, f64); 3] = [(0.8, 0.3), (0.5, 0.1), (0.6, 0.2)];
const EX3_LOADINGS: [(f64, f64); 3] = [(0.5, 0.5), (0.1, 0.5), (0.2, 0.5)];

/// Latent state `z_t = 0.5 z_{t-1} + sigma_t e_t`, `sigma_t^2 = 0.1 + 0.3 sigma_{t-1}^2`,
/// started at `z = 0, sigma^2 = 1`.
pub fn latent_state_with(periods: usize, burn_in: usize, mut innovation: impl FnMut() -> f64) -> Vec<f64> {
    let mut z: f64 = 0.0;
    let mut var: f64 = 1.0;
    let mut out = Vec::with_capacity(periods);
    for step in 0..burn_in + periods {
        var = 0.1 + 0.3 * var;
        z = 0.5 * z + var.sqrt() * innovation();
        if step >= burn_in {
            out.push(z);
        }
    }
    out
}

/// Factor loadings common to all assets.
#[derive(Debug, Clone, PartialEq)]
pub struct Loadings {
    /// `T x p`, entry `(t, j)` is `beta_{.jt}`.
    pub common: DMatrix<f64>,
    /// Latent state path (example 2 only).
    pub state: Option<Vec<f64>>,
    assets: usize,
}

impl Loadings {
    pub fn assets(&self) -> usize {
        self.assets
    }

    /// `beta_{ijt}`; identical for every asset `i`.
    pub fn beta(&self, asset: usize, factor: usize, t: usize) -> f64 {
        assert!(asset < self.assets, "asset index out of range");
        self.common[(t, factor)]
    }
}

/// Loadings for a given example; example 2 consumes state innovations from `rng`.
pub fn gen_loadings<R: Rng + ?Sized>(example: Example, assets: usize, periods: usize, burn_in: usize, rng: &mut R) -> Loadings {
    let state = match example {
        Example::Two => Some(latent_state_with(periods, burn_in, || rng.sample(StandardNormal))),
        _ => None,
    };
    loadings_from_state(example, assets, periods, state)
}

/// Deterministic part of [`gen_loadings`] given the latent state path.
pub fn loadings_from_state(example: Example, assets: usize, periods: usize, state: Option<Vec<f64>>) -> Loadings {
    let p = example.factor_count();
    let tf = periods as f64;
    let common = DMatrix::from_fn(periods, p, |t, j| {
        let g = logistic_g(10.0 * (t + 1) as f64 / tf, 2.0, 2.0);
        match example {
            Example::One => g,
            Example::Two => {
                let z = state.as_ref().expect("example 2 needs a state path")[t];
                EX2_LOADINGS[j].0 + EX2_LOADINGS[j].1 * z
            }
            Example::Three => EX3_LOADINGS[j].0 * g + EX3_LOADINGS[j].1,
        }
    });
    Loadings {
        common,
        state,
        assets,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorDistribution {
    Normal,
    T3,
    Mixture,
    Icm,
}

impl ErrorDistribution {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorDistribution::Normal => "normal",
            ErrorDistribution::T3 => "t3",
            ErrorDistribution::Mixture => "mixture",
            ErrorDistribution::Icm => "icm",
        }
    }
}

impl FromStr for ErrorDistribution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "i" => Ok(ErrorDistribution::Normal),
            "t3" | "t" | "ii" => Ok(ErrorDistribution::T3),
            "mixture" | "iii" => Ok(ErrorDistribution::Mixture),
            "icm" | "iv" => Ok(ErrorDistribution::Icm),
            other => Err(Error::Domain(format!(
                "unknown error scenario '{other}' (expected normal, t3, mixture or icm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorScenario {
    pub kind: ErrorDistribution,
    /// Weight on the unit-scale component of the mixture.
    pub mixture_kappa: f64,
    pub t_dof: f64,
}

impl ErrorScenario {
    pub fn new(kind: ErrorDistribution) -> Self {
        Self {
            kind,
            mixture_kappa: 0.9,
            t_dof: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mixture_kappa > 0.0 && self.mixture_kappa <= 1.0) {
            return Err(Error::Domain(format!("mixture weight {} outside (0, 1]", self.mixture_kappa)));
        }
        if !(self.t_dof > 2.0) {
            return Err(Error::Domain(format!("t degrees of freedom {} must exceed 2", self.t_dof)));
        }
        Ok(())
    }
}

impl fmt::Display for ErrorScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.as_str())
    }
}

/// `Sigma_{ij} = 0.5^{|i-j|}`.
pub fn ar1_scatter(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()))
}

/// Error sampler with the scatter factorization computed once.
#[derive(Debug, Clone)]
pub struct ErrorGenerator {
    scenario: ErrorScenario,
    assets: usize,
    /// Transposed mixing matrix `A'` so that a row of errors is `w' A'`.
    mixing_t: DMatrix<f64>,
}

impl ErrorGenerator {
    pub fn new(scenario: ErrorScenario, assets: usize) -> Result<Self> {
        scenario.validate()?;
        if assets == 0 {
            return Err(Error::Domain("error panel needs N >= 1".into()));
        }
        let sigma = ar1_scatter(assets);
        let mixing = match scenario.kind {
            ErrorDistribution::Icm => symmetric_sqrt(&sigma),
            _ => sigma
                .cholesky()
                .expect("AR(1) scatter is positive definite")
                .l(),
        };
        Ok(Self {
            scenario,
            assets,
            mixing_t: mixing.transpose(),
        })
    }

    pub fn scenario(&self) -> ErrorScenario {
        self.scenario
    }

    /// `T x N` panel of errors.
    pub fn sample<R: Rng + ?Sized>(&self, periods: usize, rng: &mut R) -> DMatrix<f64> {
        let n = self.assets;
        let mut w = DMatrix::zeros(periods, n);
        match self.scenario.kind {
            ErrorDistribution::Normal => fill_normal(&mut w, rng),
            ErrorDistribution::T3 => {
                let chi = ChiSquared::new(self.scenario.t_dof).expect("dof validated");
                for t in 0..periods {
                    for j in 0..n {
                        w[(t, j)] = rng.sample(StandardNormal);
                    }
                    let scale = (chi.sample(rng) / self.scenario.t_dof).sqrt();
                    w.row_mut(t).unscale_mut(scale);
                }
            }
            ErrorDistribution::Mixture => {
                let kappa = self.scenario.mixture_kappa;
                let norm = (kappa + 9.0 * (1.0 - kappa)).sqrt();
                for t in 0..periods {
                    for j in 0..n {
                        w[(t, j)] = rng.sample(StandardNormal);
                    }
                    let wide = kappa < 1.0 && rng.random::<f64>() >= kappa;
                    let scale = if wide { 3.0 } else { 1.0 } / norm;
                    if scale != 1.0 {
                        w.row_mut(t).scale_mut(scale);
                    }
                }
            }
            ErrorDistribution::Icm => {
                let nu = self.scenario.t_dof;
                let t_dist = StudentT::new(nu).expect("dof validated");
                let sd = (nu / (nu - 2.0)).sqrt();
                for t in 0..periods {
                    for j in 0..n {
                        w[(t, j)] = t_dist.sample(rng) / sd;
                    }
                }
            }
        }
        w * &self.mixing_t
    }
}

fn fill_normal<R: Rng + ?Sized>(w: &mut DMatrix<f64>, rng: &mut R) {
    // row-major draw order so a panel's first rows do not depend on N
    let (rows, cols) = w.shape();
    for t in 0..rows {
        for j in 0..cols {
            w[(t, j)] = rng.sample(StandardNormal);
        }
    }
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let root = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

pub fn gen_errors<R: Rng + ?Sized>(scenario: ErrorScenario, assets: usize, periods: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    Ok(ErrorGenerator::new(scenario, assets)?.sample(periods, rng))
}

/// How the per-asset alpha enters each period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaMode {
    /// `alpha_it = alpha_i`.
    #[default]
    Constant,
    /// `alpha_it = alpha_i / T`.
    OverT,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSpec {
    pub sparsity: usize,
    pub strength: f64,
    pub mode: AlphaMode,
}

impl AlphaSpec {
    pub fn null() -> Self {
        Self {
            sparsity: 0,
            strength: 0.0,
            mode: AlphaMode::Constant,
        }
    }

    pub fn sparse(sparsity: usize, strength: f64) -> Self {
        Self {
            sparsity,
            strength,
            mode: AlphaMode::Constant,
        }
    }

    /// `c sqrt(log N / (T s))`.
    pub fn upper_bound(&self, assets: usize, periods: usize) -> f64 {
        if self.sparsity == 0 {
            return 0.0;
        }
        self.strength * ((assets as f64).ln() / (periods * self.sparsity) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaDraw {
    /// `T x N`.
    pub panel: DMatrix<f64>,
    /// Sorted support indices.
    pub support: Vec<usize>,
}

/// Sparse alpha: support drawn without replacement, values `U(0, c sqrt(log N/(T s)))`.
pub fn gen_alpha<R: Rng + ?Sized>(spec: &AlphaSpec, assets: usize, periods: usize, rng: &mut R) -> Result<AlphaDraw> {
    if spec.sparsity > assets {
        return Err(Error::Contract(format!(
            "sparsity {} exceeds N = {assets}",
            spec.sparsity
        )));
    }
    let mut panel = DMatrix::zeros(periods, assets);
    if spec.sparsity == 0 {
        return Ok(AlphaDraw {
            panel,
            support: Vec::new(),
        });
    }
    let upper = spec.upper_bound(assets, periods);
    let mut support = sample(rng, assets, spec.sparsity).into_vec();
    support.sort_unstable();
    for &i in &support {
        let u: f64 = rng.sample(Open01);
        let a = upper * u;
        let value = match spec.mode {
            AlphaMode::Constant => a,
            AlphaMode::OverT => a / periods as f64,
        };
        panel.column_mut(i).fill(value);
    }
    Ok(AlphaDraw { panel, support })
}

/// `Y = alpha + sum_j beta_j o f_j + eps`.
pub fn assemble_panel(alpha: &DMatrix<f64>, loadings: &Loadings, factors: &DMatrix<f64>, errors: &DMatrix<f64>) -> Result<ReturnPanel> {
    let (t_len, n) = errors.shape();
    if alpha.shape() != (t_len, n) || factors.nrows() != t_len || loadings.common.shape() != factors.shape() {
        return Err(Error::Contract("simulation components have inconsistent shapes".into()));
    }
    let systematic: DVector<f64> = DVector::from_fn(t_len, |t, _| {
        (0..factors.ncols())
            .map(|j| loadings.common[(t, j)] * factors[(t, j)])
            .sum()
    });
    let mut y = alpha + errors;
    for mut col in y.column_iter_mut() {
        col += &systematic;
    }
    Ok(ReturnPanel::new(y))
}

#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub panel: ReturnPanel,
    pub factors: FactorMatrix,
    pub alpha_support: Vec<usize>,
}

/// One simulated data set. Randomness is consumed in the order factors,
/// latent state, errors, alpha.
pub fn simulate<R: Rng + ?Sized>(
    example: Example,
    errors: &ErrorGenerator,
    alpha: &AlphaSpec,
    periods: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<SimulatedPanel> {
    let n = errors.assets;
    let specs = example.factor_specs();
    let mut factors = DMatrix::zeros(periods, specs.len());
    for (j, spec) in specs.iter().enumerate() {
        let path = ar_garch_path(spec, periods, burn_in, rng)?;
        factors.column_mut(j).copy_from_slice(&path);
    }
    let loadings = gen_loadings(example, n, periods, burn_in, rng);
    let eps = errors.sample(periods, rng);
    let draw = gen_alpha(alpha, n, periods, rng)?;
    let panel = assemble_panel(&draw.panel, &loadings, &factors, &eps)?;
    Ok(SimulatedPanel {
        panel,
        factors: FactorMatrix::new(factors),
        alpha_support: draw.support,
    })
}
