//! Robust high-dimensional alpha tests for conditional factor pricing models.
//!
//! The pipeline residualizes a `T x N` return panel against a B-spline sieve
//! of time-varying alphas and loadings ([`basis_regression`]), estimates a
//! spatial median with diagonal scale on the residuals ([`spatial`]), and
//! computes six tests of the null that every long-run alpha is zero
//! ([`stat_tests`]):
//!
//! | test | family            | reference       |
//! |------|-------------------|-----------------|
//! | HDA  | least-squares sum | standard normal |
//! | MNT  | least-squares max | Gumbel          |
//! | Ada  | Cauchy(HDA, MNT)  | combined        |
//! | CSS  | spatial-sign sum  | standard normal |
//! | CSM  | spatial-sign max  | Gumbel          |
//! | CC   | truncated Cauchy(CSS, CSM) | combined |
//!
//! [`dgp`] and [`harness`] reproduce size/power simulation studies and a
//! rolling-window analysis; [`io`] holds the CSV panel formats.

// `!(x > 0.0)` is used on purpose so NaN lands in the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis_regression;
pub mod dgp;
pub mod error;
pub mod harness;
pub mod io;
pub mod panel;
pub mod spatial;

pub use error::{Error, ErrorKind, Result, Stage};
pub use panel::{FactorMatrix, ReturnPanel};
