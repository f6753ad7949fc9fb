//! Numerical evaluation of the limiting joint densities `p(h,x;t)` and
//! `p̂(h,x;t)` of the location and length of a directed-landscape geodesic
//! near its endpoint, conditioned on an atypically long total length.
//!
//! Both densities are series of `2n`-fold contour integrals. The crate
//! builds the contours, evaluates the series with deterministic
//! tensor-product quadrature, and provides the finite-scale pre-limit
//! density, the closed-form tail asymptotics and a validation suite that
//! checks the known identities numerically.
//!
//! Module map:
//! - [`quadrature`]: Gauss–Legendre rules, wedge/circle contours, tensor sums.
//! - [`kernels`]: Cauchy determinants, power sums, the quartic `H`, `log f`.
//! - [`density`]: the series for `p`, `p̂` and the upper-tail-field tail.
//! - [`prelimit`]: the finite-scale density and two-point KPZ tail.
//! - [`asymptotics`]: GUE tail forms, Gaussian limit, right-tail formulas.
//! - [`validation`]: the property checks behind `geodensity validate`.

pub mod asymptotics;
pub mod density;
mod error;
pub mod kernels;
pub mod prelimit;
pub mod quadrature;
pub mod validation;

pub use error::{Error, Result};
pub use num_complex::Complex64;
