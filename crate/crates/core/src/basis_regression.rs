//! B-spline sieve regression.
//!
//! Time-varying alphas and loadings are approximated by normalized B-splines
//! in `u = t/T` on uniformly spaced, clamped knots. The regression for asset
//! `i` uses the row
//!
//! ```text
//! Z_t = ( B~(t/T), f_t (x) B(t/T) )        B~_k = B_k - mean_s B_k(s/T)
//! ```
//!
//! with no intercept, so the long-run average alpha stays in the residual.
//! `Z~_t` is the same row with the first block uncentered; it spans the
//! constant and therefore absorbs the average alpha.
//!
//! Because the centered block sums to zero across its columns, `Z` always has
//! one structural linear dependence. The solver drops the last centered column
//! (the column span, residuals and projections are unchanged) and reports a
//! zero coefficient for it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::ReturnPanel;

/// Spline order used throughout the simulation studies (quadratic pieces).
pub const DEFAULT_ORDER: usize = 3;

/// Designs whose equilibrated reciprocal condition number falls at or below
/// this value are rejected.
pub const RCOND_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplineConfig {
    order: usize,
    interior_knots: usize,
}

impl SplineConfig {
    pub fn new(order: usize, interior_knots: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Domain("spline order must be at least 1".into()));
        }
        Ok(Self {
            order,
            interior_knots,
        })
    }

    /// Order-3 splines with `interior_knots` uniformly spaced knots.
    pub fn with_knots(interior_knots: usize) -> Self {
        Self {
            order: DEFAULT_ORDER,
            interior_knots,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn interior_knots(&self) -> usize {
        self.interior_knots
    }

    /// `L = n + q`.
    pub fn basis_dim(&self) -> usize {
        self.interior_knots + self.order
    }
}

/// Clamped knot sequence: `0` repeated `q` times, the interior knots, `1`
/// repeated `q` times.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    config: SplineConfig,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn config(&self) -> SplineConfig {
        self.config
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior(&self) -> &[f64] {
        let q = self.config.order;
        &self.knots[q..q + self.config.interior_knots]
    }

    fn span(&self, u: f64) -> usize {
        let q = self.config.order;
        let last = self.config.basis_dim() - 1;
        let count = self.knots.partition_point(|&k| k <= u);
        count.saturating_sub(1).clamp(q - 1, last)
    }

    /// Index of the first nonzero basis function at `u` and the `q` values
    /// starting there (Cox-de Boor triangle).
    fn nonzero_basis(&self, u: f64) -> (usize, Vec<f64>) {
        let q = self.config.order;
        let degree = q - 1;
        let i = self.span(u);
        let k = &self.knots;

        let mut vals = vec![0.0; q];
        let mut left = vec![0.0; q];
        let mut right = vec![0.0; q];
        vals[0] = 1.0;
        for j in 1..=degree {
            left[j] = u - k[i + 1 - j];
            right[j] = k[i + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        (i - degree, vals)
    }
}

/// Uniform interior knots at `i/(n+1)`, `i = 1..n`, with clamped ends.
pub fn make_knots(config: SplineConfig) -> KnotVector {
    let q = config.order;
    let n = config.interior_knots;
    let mut knots = Vec::with_capacity(n + 2 * q);
    knots.extend(std::iter::repeat_n(0.0, q));
    knots.extend((1..=n).map(|i| i as f64 / (n + 1) as f64));
    knots.extend(std::iter::repeat_n(1.0, q));
    KnotVector { config, knots }
}

/// Evaluates all `L` normalized B-splines at `u in [0, 1]`.
pub fn bspline_basis(config: SplineConfig, knots: &KnotVector, u: f64) -> Result<Vec<f64>> {
    if knots.config != config {
        return Err(Error::Contract(
            "knot vector was built for a different spline configuration".into(),
        ));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!("basis evaluated at u = {u}, outside [0, 1]")));
    }
    let mut out = vec![0.0; config.basis_dim()];
    let (first, vals) = knots.nonzero_basis(u);
    out[first..first + vals.len()].copy_from_slice(&vals);
    Ok(out)
}

/// Which regressor matrix an operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Basis {
    /// `Z`, centered alpha block.
    #[default]
    Centered,
    /// `Z~`, uncentered alpha block.
    Uncentered,
}

/// Thin-QR least-squares solver for a fixed regressor matrix.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    kept: Vec<usize>,
    ncols: usize,
}

impl LeastSquares {
    /// Factorizes `x`; fails if it is rank deficient.
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        let all: Vec<usize> = (0..x.ncols()).collect();
        let blocks = [("design".to_string(), all.clone())];
        Self::with_columns(x, all, &blocks)
    }

    fn with_columns(x: &DMatrix<f64>, kept: Vec<usize>, blocks: &[(String, Vec<usize>)]) -> Result<Self> {
        let rows = x.nrows();
        if kept.len() > rows {
            return Err(Error::Contract(format!(
                "{} regressors but only {rows} observations",
                kept.len()
            )));
        }
        let sub = x.select_columns(&kept);
        let rcond = equilibrated_rcond(&sub);
        if rcond <= RCOND_FLOOR {
            let block = blocks
                .iter()
                .find(|(_, cols)| {
                    let cols: Vec<usize> = cols.iter().copied().filter(|c| kept.contains(c)).collect();
                    !cols.is_empty() && equilibrated_rcond(&x.select_columns(&cols)) <= RCOND_FLOOR
                })
                .map(|(name, _)| name.clone())
                .unwrap_or_else(|| "joint alpha/factor".to_string());
            return Err(Error::Singular { block, rcond });
        }
        let (q, r) = if kept.is_empty() {
            (DMatrix::zeros(rows, 0), DMatrix::zeros(0, 0))
        } else {
            let qr = sub.qr();
            (qr.q(), qr.r())
        };
        Ok(Self {
            q,
            r,
            kept,
            ncols: x.ncols(),
        })
    }

    pub fn observations(&self) -> usize {
        self.q.nrows()
    }

    /// Number of columns actually used (rank of the design).
    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    /// `Y - X (X'X)^- X'Y`, column by column.
    pub fn residuals(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        if self.kept.is_empty() {
            return y.clone();
        }
        let qty = self.q.tr_mul(y);
        y - &self.q * qty
    }

    /// Coefficients, one column per column of `y`; dropped regressors get 0.
    pub fn coefficients(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.ncols, y.ncols());
        if self.kept.is_empty() {
            return out;
        }
        let qty = self.q.tr_mul(y);
        let sol = self
            .r
            .solve_upper_triangular(&qty)
            .expect("R has a nonzero diagonal after the condition check");
        for (row, &col) in self.kept.iter().enumerate() {
            out.row_mut(col).copy_from(&sol.row(row));
        }
        out
    }

    /// The annihilator `I - P` as a dense `T x T` matrix.
    pub fn annihilator(&self) -> DMatrix<f64> {
        let t = self.observations();
        let mut m = DMatrix::identity(t, t);
        if !self.kept.is_empty() {
            m -= &self.q * self.q.transpose();
        }
        m
    }

    /// Applies the annihilator `I - P` to a single vector.
    pub fn annihilate(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.kept.is_empty() {
            return v.clone();
        }
        let qtv = self.q.tr_mul(v);
        v - &self.q * qtv
    }
}

fn equilibrated_rcond(x: &DMatrix<f64>) -> f64 {
    if x.ncols() == 0 {
        return 1.0;
    }
    let mut scaled = x.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 || !norm.is_finite() {
            return 0.0;
        }
        col /= norm;
    }
    let sv = scaled.singular_values();
    let max = sv.max();
    let min = sv.min();
    if max > 0.0 {
        min / max
    } else {
        0.0
    }
}

/// Sieve regressors `Z`, `Z~` and the annihilated ones vector.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    config: SplineConfig,
    factors: usize,
    z: DMatrix<f64>,
    z_tilde: DMatrix<f64>,
    omega_t: f64,
    h: DVector<f64>,
    centered: LeastSquares,
    uncentered: LeastSquares,
}

impl DesignMatrix {
    pub fn config(&self) -> SplineConfig {
        self.config
    }

    pub fn periods(&self) -> usize {
        self.z.nrows()
    }

    pub fn factor_count(&self) -> usize {
        self.factors
    }

    /// `(1 + p) L`.
    pub fn width(&self) -> usize {
        self.z.ncols()
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn z_tilde(&self) -> &DMatrix<f64> {
        &self.z_tilde
    }

    /// `1' M_Z 1`.
    pub fn omega_t(&self) -> f64 {
        self.omega_t
    }

    /// `M_Z 1`.
    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn solver(&self, basis: Basis) -> &LeastSquares {
        match basis {
            Basis::Centered => &self.centered,
            Basis::Uncentered => &self.uncentered,
        }
    }

    pub fn annihilate(&self, v: &DVector<f64>, basis: Basis) -> DVector<f64> {
        self.solver(basis).annihilate(v)
    }

    /// Dense annihilator of either regressor matrix.
    pub fn annihilator(&self, basis: Basis) -> DMatrix<f64> {
        self.solver(basis).annihilator()
    }

    /// `M 1` for either regressor matrix; [`Basis::Centered`] gives [`Self::h`].
    pub fn annihilated_ones(&self, basis: Basis) -> DVector<f64> {
        self.annihilate(&DVector::from_element(self.periods(), 1.0), basis)
    }
}

/// Builds `Z` and `Z~` on the grid `u = t/T`, `t = 1..T`.
pub fn build_design(factors: &DMatrix<f64>, config: SplineConfig) -> Result<DesignMatrix> {
    let t_len = factors.nrows();
    let p = factors.ncols();
    let l = config.basis_dim();
    let width = (1 + p) * l;
    if t_len < width + 1 {
        return Err(Error::Contract(format!(
            "T = {t_len} leaves no degrees of freedom for {width} sieve regressors"
        )));
    }
    let knots = make_knots(config);

    let mut basis = DMatrix::zeros(t_len, l);
    for t in 0..t_len {
        let u = (t + 1) as f64 / t_len as f64;
        let (first, vals) = knots.nonzero_basis(u);
        for (k, v) in vals.into_iter().enumerate() {
            basis[(t, first + k)] = v;
        }
    }

    let mut z_tilde = DMatrix::zeros(t_len, width);
    z_tilde.columns_mut(0, l).copy_from(&basis);
    for j in 0..p {
        for k in 0..l {
            let col = (1 + j) * l + k;
            for t in 0..t_len {
                z_tilde[(t, col)] = factors[(t, j)] * basis[(t, k)];
            }
        }
    }

    let mut z = z_tilde.clone();
    for mut col in z.columns_mut(0, l).column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }

    let mut blocks = vec![("alpha".to_string(), (0..l).collect::<Vec<_>>())];
    for j in 0..p {
        blocks.push((format!("factor {}", j + 1), ((1 + j) * l..(2 + j) * l).collect()));
    }

    // The centered block sums to zero across its columns; drop its last column.
    let kept: Vec<usize> = (0..width).filter(|&c| c != l - 1).collect();
    let centered = LeastSquares::with_columns(&z, kept, &blocks)?;
    let uncentered = LeastSquares::with_columns(&z_tilde, (0..width).collect(), &blocks)?;

    let h = centered.annihilate(&DVector::from_element(t_len, 1.0));
    let omega_t = h.sum();

    Ok(DesignMatrix {
        config,
        factors: p,
        z,
        z_tilde,
        omega_t,
        h,
        centered,
        uncentered,
    })
}

/// Per-asset least-squares output.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// `N x (1+p)L`, row `i` is `lambda_i` for the centered design.
    pub coefficients: DMatrix<f64>,
    /// `T x N` residuals against `Z`.
    pub residuals: DMatrix<f64>,
    /// `T x N` residuals against `Z~`.
    pub residuals_tilde: DMatrix<f64>,
}

pub fn fit_panel(panel: &ReturnPanel, design: &DesignMatrix) -> Result<FitResult> {
    if panel.periods() != design.periods() {
        return Err(Error::Contract(format!(
            "panel has {} rows, design has {}",
            panel.periods(),
            design.periods()
        )));
    }
    let y = panel.data();
    Ok(FitResult {
        coefficients: design.centered.coefficients(y).transpose(),
        residuals: design.centered.residuals(y),
        residuals_tilde: design.uncentered.residuals(y),
    })
}

/// `log(NT)/(NT) * (p+1)(n+q)`.
pub fn bic_penalty(assets: usize, periods: usize, factors: usize, interior_knots: usize, order: usize) -> f64 {
    let nt = (assets * periods) as f64;
    nt.ln() / nt * ((factors + 1) * (interior_knots + order)) as f64
}

/// `{1, ..., ceil(T^(1/5)) + 4}`.
pub fn default_knot_candidates(periods: usize) -> Vec<usize> {
    let upper = (periods as f64).powf(0.2).ceil() as usize + 4;
    (1..=upper).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BicEntry {
    pub interior_knots: usize,
    /// `None` when the candidate design could not be fitted.
    pub bic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnotSelection {
    pub chosen: usize,
    pub table: Vec<BicEntry>,
}

/// BIC value of one candidate, evaluated on the `Z~` fit.
pub fn bic_value(panel: &ReturnPanel, factors: &DMatrix<f64>, config: SplineConfig) -> Result<f64> {
    let design = build_design(factors, config)?;
    let resid = design.uncentered.residuals(panel.data());
    let nt = (panel.assets() * panel.periods()) as f64;
    let ssr = resid.norm_squared();
    Ok((ssr / nt).ln()
        + bic_penalty(
            panel.assets(),
            panel.periods(),
            factors.ncols(),
            config.interior_knots(),
            config.order(),
        ))
}

/// Picks the interior knot count minimizing BIC; ties go to the smaller count.
pub fn select_knots_bic(
    panel: &ReturnPanel,
    factors: &DMatrix<f64>,
    order: usize,
    candidates: &[usize],
) -> Result<KnotSelection> {
    if candidates.is_empty() {
        return Err(Error::Contract("empty knot candidate range".into()));
    }
    if panel.periods() != factors.nrows() {
        return Err(Error::Contract(format!(
            "panel has {} rows but factors have {}",
            panel.periods(),
            factors.nrows()
        )));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut table = Vec::with_capacity(sorted.len());
    let mut best: Option<(usize, f64)> = None;
    let mut first_err = None;
    for n in sorted {
        let config = SplineConfig::new(order, n)?;
        match bic_value(panel, factors, config) {
            Ok(bic) => {
                if best.is_none_or(|(_, b)| bic < b) {
                    best = Some((n, bic));
                }
                table.push(BicEntry {
                    interior_knots: n,
                    bic: Some(bic),
                });
            }
            Err(e) => {
                first_err.get_or_insert(e);
                table.push(BicEntry {
                    interior_knots: n,
                    bic: None,
                });
            }
        }
    }
    match best {
        Some((chosen, _)) => Ok(KnotSelection { chosen, table }),
        None => Err(first_err.expect("at least one candidate was tried")),
    }
}
