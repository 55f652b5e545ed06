//! Spatial signs, the joint spatial-median / diagonal-scale estimator, and the
//! norm moments feeding the max-type statistic.
//!
//! The estimator solves
//!
//! ```text
//! mean_t U(D^{-1/2}(e_t - theta))                                   = 0
//! diag( mean_t U(D^{-1/2}(e_t - theta)) U(D^{-1/2}(e_t - theta))' ) = I/N
//! ```
//!
//! by the fixed-point iteration
//!
//! ```text
//! xi_t  <- D^{-1/2}(e_t - theta)
//! theta <- theta + D^{1/2} sum_t U(xi_t) / sum_t |xi_t|^{-1}
//! D     <- N D^{1/2} diag{ mean_t U(xi_t) U(xi_t)' } D^{1/2}
//! ```
//!
//! started from the coordinate-wise sample mean and variance. Observations
//! with `xi_t = 0` carry a zero spatial sign and are left out of every
//! average. The overall scale of `D` is not identified by the equations;
//! it is inherited from the starting value and cancels in the statistic.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;
/// Any diagonal scale entry below this aborts the iteration.
pub const SCALE_FLOOR: f64 = 1e-12;

/// `U(v) = v / |v|`, with `U(0) = 0`.
pub fn spatial_sign(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| x / norm).collect()
}

/// Replaces every row of `x` by its spatial sign.
pub fn sign_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SpatialOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialLocation {
    /// Spatial median, length `N`.
    pub theta: Vec<f64>,
    /// Diagonal of `D`, length `N`, strictly positive.
    pub scale_diag: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Larger of the two estimating-equation residuals at exit.
    pub eq_residual: f64,
}

impl SpatialLocation {
    /// `D^{-1/2} theta`.
    pub fn standardized_theta(&self) -> Vec<f64> {
        self.theta
            .iter()
            .zip(&self.scale_diag)
            .map(|(th, d)| th / d.sqrt())
            .collect()
    }
}

struct SignSums {
    sign_sum: Vec<f64>,
    sign_sq_sum: Vec<f64>,
    inv_norm_sum: f64,
    used: usize,
}

/// One pass over the observations (columns of `obs`, `N x T`) in fixed order.
fn sign_sums(obs: &DMatrix<f64>, theta: &[f64], inv_sd: &[f64], xi: &mut [f64]) -> SignSums {
    let n = obs.nrows();
    let mut sums = SignSums {
        sign_sum: vec![0.0; n],
        sign_sq_sum: vec![0.0; n],
        inv_norm_sum: 0.0,
        used: 0,
    };
    for col in obs.column_iter() {
        let mut sq = 0.0;
        for j in 0..n {
            let v = (col[j] - theta[j]) * inv_sd[j];
            xi[j] = v;
            sq += v * v;
        }
        if sq == 0.0 {
            continue;
        }
        let norm = sq.sqrt();
        let inv = 1.0 / norm;
        for j in 0..n {
            let u = xi[j] * inv;
            sums.sign_sum[j] += u;
            sums.sign_sq_sum[j] += u * u;
        }
        sums.inv_norm_sum += inv;
        sums.used += 1;
    }
    sums
}

fn equation_residual(sums: &SignSums, n: usize) -> f64 {
    if sums.used == 0 {
        return f64::INFINITY;
    }
    let m = sums.used as f64;
    let location = sums.sign_sum.iter().map(|s| (s / m).powi(2)).sum::<f64>().sqrt();
    let target = 1.0 / n as f64;
    let scale = sums
        .sign_sq_sum
        .iter()
        .map(|s| (s / m - target).abs())
        .fold(0.0, f64::max)
        * n as f64;
    location.max(scale)
}

/// Joint spatial median and diagonal scale of the rows of `residuals` (`T x N`).
///
/// Hitting `max_iter` is not an error: the last iterate is returned with
/// `converged = false`.
pub fn spatial_median_scale(residuals: &DMatrix<f64>, opts: SpatialOptions) -> Result<SpatialLocation> {
    let (t_len, n) = residuals.shape();
    if t_len < 2 {
        return Err(Error::Domain(format!("spatial median needs T >= 2, got {t_len}")));
    }
    if n == 0 {
        return Err(Error::Domain("spatial median of zero-dimensional data".into()));
    }
    let obs = residuals.transpose();

    let mut theta: Vec<f64> = obs.row_iter().map(|r| r.mean()).collect();
    let mut scale: Vec<f64> = obs
        .row_iter()
        .zip(&theta)
        .map(|(r, m)| r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (t_len - 1) as f64)
        .collect();
    if let Some((index, &value)) = scale.iter().enumerate().find(|(_, &d)| !(d > SCALE_FLOOR)) {
        return Err(Error::DegenerateScale { index, value });
    }

    let mut xi = vec![0.0; n];
    let mut iter = 0;
    loop {
        let inv_sd: Vec<f64> = scale.iter().map(|d| 1.0 / d.sqrt()).collect();
        let sums = sign_sums(&obs, &theta, &inv_sd, &mut xi);
        let resid = equation_residual(&sums, n);
        if resid <= opts.tol || iter == opts.max_iter || sums.used == 0 {
            return Ok(SpatialLocation {
                theta,
                scale_diag: scale,
                iterations: iter,
                converged: resid <= opts.tol,
                eq_residual: resid,
            });
        }
        for j in 0..n {
            theta[j] += scale[j].sqrt() * sums.sign_sum[j] / sums.inv_norm_sum;
        }
        let m = sums.used as f64;
        for (j, d) in scale.iter_mut().enumerate() {
            *d *= n as f64 * sums.sign_sq_sum[j] / m;
            if !(*d >= SCALE_FLOOR) {
                return Err(Error::DegenerateScale { index: j, value: *d });
            }
        }
        iter += 1;
    }
}

/// Norm moments of the standardized residuals and the scaling factor `zeta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimates {
    /// mean of `|xi_t|^2`
    pub varsigma2: f64,
    /// mean of `|xi_t|`
    pub varsigma1: f64,
    /// mean of `|xi_t|^{-1}`
    pub varsigma_neg1: f64,
    pub zeta_hat: f64,
}

/// `zeta = N s_{-1}^2 / (1 - 2 eta s_{-1} s_1 + eta s_2 s_{-1}^2)`, `eta = 1 - omega_T / T`.
pub fn zeta_from_moments(varsigma2: f64, varsigma1: f64, varsigma_neg1: f64, eta: f64, n: usize) -> Result<f64> {
    let denom = 1.0 - 2.0 * eta * varsigma_neg1 * varsigma1 + eta * varsigma2 * varsigma_neg1 * varsigma_neg1;
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!(
            "scaling-factor denominator is {denom:.3e}"
        )));
    }
    Ok(n as f64 * varsigma_neg1 * varsigma_neg1 / denom)
}

pub fn moment_estimates(residuals: &DMatrix<f64>, loc: &SpatialLocation, omega_t: f64) -> Result<MomentEstimates> {
    let (t_len, n) = residuals.shape();
    if loc.theta.len() != n || loc.scale_diag.len() != n {
        return Err(Error::Contract(format!(
            "location has dimension {}, residuals have {n} columns",
            loc.theta.len()
        )));
    }
    if let Some((index, &value)) = loc.scale_diag.iter().enumerate().find(|(_, &d)| !(d > 0.0)) {
        return Err(Error::DegenerateScale { index, value });
    }
    let inv_sd: Vec<f64> = loc.scale_diag.iter().map(|d| 1.0 / d.sqrt()).collect();
    let (mut s2, mut s1, mut sneg, mut used) = (0.0, 0.0, 0.0, 0usize);
    for row in residuals.row_iter() {
        let sq: f64 = (0..n)
            .map(|j| ((row[j] - loc.theta[j]) * inv_sd[j]).powi(2))
            .sum();
        if sq == 0.0 {
            continue;
        }
        let r = sq.sqrt();
        s2 += sq;
        s1 += r;
        sneg += 1.0 / r;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate("every standardized residual is zero".into()));
    }
    let m = used as f64;
    let (varsigma2, varsigma1, varsigma_neg1) = (s2 / m, s1 / m, sneg / m);
    let eta = 1.0 - omega_t / t_len as f64;
    let zeta_hat = zeta_from_moments(varsigma2, varsigma1, varsigma_neg1, eta, n)?;
    Ok(MomentEstimates {
        varsigma2,
        varsigma1,
        varsigma_neg1,
        zeta_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(t: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(t, n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn sign_examples() {
        assert_eq!(spatial_sign(&[3.0, 4.0]), vec![0.6, 0.8]);
        assert_eq!(spatial_sign(&[0.0, 0.0, 0.0]), vec![0.0; 3]);
    }

    proptest! {
        #[test]
        fn sign_has_unit_norm(v in prop::collection::vec(-1e3f64..1e3, 1..20)) {
            prop_assume!(v.iter().any(|&x| x != 0.0));
            let u = spatial_sign(&v);
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn symmetric_data_has_zero_median() {
        let half = gaussian(40, 6, 1);
        let mut x = DMatrix::zeros(80, 6);
        x.rows_mut(0, 40).copy_from(&half);
        x.rows_mut(40, 40).copy_from(&(-&half));
        let loc = spatial_median_scale(&x, SpatialOptions::default()).unwrap();
        assert!(loc.converged);
        for th in &loc.theta {
            assert!(th.abs() <= 1e-8);
        }
    }

    #[test]
    fn one_dimension_gives_sample_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..11).map(|_| rng.random_range(-3.0..5.0)).collect();
        let mut sorted = x.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let loc = spatial_median_scale(&DMatrix::from_column_slice(11, 1, &x), SpatialOptions::default()).unwrap();
        assert_abs_diff_eq!(loc.theta[0], sorted[5], epsilon = 1e-8);
    }

    #[test]
    fn converged_solution_satisfies_equations() {
        let x = gaussian(150, 12, 3);
        let loc = spatial_median_scale(&x, SpatialOptions::default()).unwrap();
        assert!(loc.converged);
        assert!(loc.eq_residual <= 1e-8);

        let n = 12;
        let mut mean_sign = vec![0.0; n];
        let mut mean_sq = vec![0.0; n];
        for row in x.row_iter() {
            let xi: Vec<f64> = (0..n).map(|j| (row[j] - loc.theta[j]) / loc.scale_diag[j].sqrt()).collect();
            let u = spatial_sign(&xi);
            for j in 0..n {
                mean_sign[j] += u[j] / 150.0;
                mean_sq[j] += u[j] * u[j] / 150.0;
            }
        }
        assert!(mean_sign.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-8);
        for v in mean_sq {
            assert!((v - 1.0 / n as f64).abs() * n as f64 <= 1e-8);
        }
    }

    #[test]
    fn translation_and_scale_equivariance() {
        let x = gaussian(120, 8, 4);
        let base = spatial_median_scale(&x, SpatialOptions::default()).unwrap();

        let shift: Vec<f64> = (0..8).map(|j| j as f64 - 3.5).collect();
        let mut shifted = x.clone();
        for mut row in shifted.row_iter_mut() {
            for j in 0..8 {
                row[j] += shift[j];
            }
        }
        let moved = spatial_median_scale(&shifted, SpatialOptions::default()).unwrap();
        for j in 0..8 {
            assert_abs_diff_eq!(moved.theta[j], base.theta[j] + shift[j], epsilon = 1e-7);
            assert_abs_diff_eq!(moved.scale_diag[j], base.scale_diag[j], epsilon = 1e-7);
        }

        let mut scaled = x.clone();
        scaled.column_mut(2).scale_mut(4.0);
        let sc = spatial_median_scale(&scaled, SpatialOptions::default()).unwrap();
        assert_abs_diff_eq!(sc.theta[2], 4.0 * base.theta[2], epsilon = 1e-7);
        assert_abs_diff_eq!(sc.scale_diag[2] / base.scale_diag[2], 16.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sc.theta[5], base.theta[5], epsilon = 1e-7);
    }

    #[test]
    fn iteration_cap_reports_unconverged() {
        let x = gaussian(100, 5, 5);
        let loc = spatial_median_scale(&x, SpatialOptions { tol: 1e-30, max_iter: 3 }).unwrap();
        assert!(!loc.converged);
        assert_eq!(loc.iterations, 3);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let mut x = gaussian(30, 3, 6);
        x.column_mut(1).fill(2.0);
        assert!(matches!(
            spatial_median_scale(&x, SpatialOptions::default()),
            Err(Error::DegenerateScale { index: 1, .. })
        ));
        assert!(spatial_median_scale(&DMatrix::zeros(1, 3), SpatialOptions::default()).is_err());
    }

    fn unit_location(n: usize) -> SpatialLocation {
        SpatialLocation {
            theta: vec![0.0; n],
            scale_diag: vec![1.0; n],
            iterations: 0,
            converged: true,
            eq_residual: 0.0,
        }
    }

    #[test]
    fn moments_on_unit_norm_rows() {
        // rows are +-e_j, all of norm 1
        let n = 4;
        let x = DMatrix::from_fn(8, n, |t, j| if t % n == j { if t < n { 1.0 } else { -1.0 } } else { 0.0 });
        let m = moment_estimates(&x, &unit_location(n), 8.0).unwrap();
        assert_abs_diff_eq!(m.varsigma2, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.varsigma1, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.varsigma_neg1, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.zeta_hat, n as f64, epsilon = 1e-12);

        let m = moment_estimates(&(x * 2.0), &unit_location(n), 8.0).unwrap();
        assert_abs_diff_eq!(m.varsigma2, 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.varsigma1, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.varsigma_neg1, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.zeta_hat, n as f64 / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn moments_satisfy_cauchy_schwarz() {
        let x = gaussian(60, 7, 7);
        let loc = spatial_median_scale(&x, SpatialOptions::default()).unwrap();
        let m = moment_estimates(&x, &loc, 50.0).unwrap();
        assert!(m.varsigma_neg1 * m.varsigma1 >= 1.0);
        assert!(m.varsigma2 > 0.0 && m.zeta_hat > 0.0);
    }

    #[test]
    fn nonpositive_zeta_denominator_is_error() {
        // eta = 1 with s_{-1} s_1 large enough drives the denominator negative
        assert!(zeta_from_moments(1.0, 10.0, 1.0, 1.0, 5).is_err());
    }
}
