//! Closed-form reference formulas: GUE Tracy–Widom tail asymptotics, the
//! Gaussian large-time limit and the leading-order right tails of `p`, `p̂`,
//! plus a quadrature estimate of the total mass of either density.
//!
//! The tail formulas drop their `(1 + o(1))` corrections; callers own the
//! tolerances.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{eval_series, DensityPoint, SeriesConfig, SeriesKind};
use crate::error::{invalid, Result};
use crate::quadrature::gauss_legendre_nodes;

/// `ln f_GUE(L) ≈ -(4/3)L^{3/2} - ln(8πL)`.
pub fn log_gue_density_asymp(l: f64) -> Result<f64> {
    if !(l > 0.0) {
        return invalid(format!("L must be positive, got {l}"));
    }
    Ok(-4.0 / 3.0 * l.powf(1.5) - (8.0 * PI * l).ln())
}

/// Leading-order GUE Tracy–Widom density `e^{-(4/3)L^{3/2}}/(8πL)`.
pub fn gue_density_asymp(l: f64) -> Result<f64> {
    Ok(log_gue_density_asymp(l)?.exp())
}

/// `ln(1 - F_GUE(L)) ≈ -(4/3)L^{3/2} - ln(16πL^{3/2})`.
pub fn log_gue_tail_asymp(l: f64) -> Result<f64> {
    if !(l > 0.0) {
        return invalid(format!("L must be positive, got {l}"));
    }
    Ok(-4.0 / 3.0 * l.powf(1.5) - (16.0 * PI * l.powf(1.5)).ln())
}

/// Leading-order GUE Tracy–Widom upper tail `e^{-(4/3)L^{3/2}}/(16πL^{3/2})`.
pub fn gue_tail_asymp(l: f64) -> Result<f64> {
    Ok(log_gue_tail_asymp(l)?.exp())
}

/// Standard normal density.
pub fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `φ(h)φ(x)`, the large-time limit of `(t/2) p(t + h√t, x√t/2; t)`.
pub fn gaussian_limit_ref(h: f64, x: f64) -> f64 {
    phi(h) * phi(x)
}

fn radicand(h: f64, x: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return invalid(format!("t must be positive, got {t}"));
    }
    let r = h + x * x / t;
    if !(r > 0.0) {
        return invalid(format!("h + x²/t must be positive, got {r}"));
    }
    Ok(r)
}

/// Common exponent `-(4/3)(h + x²/t)^{3/2}/√t + 2h - (2/3)t` of the tail forms.
fn tail_exponent(h: f64, x: f64, t: f64) -> Result<f64> {
    let r = radicand(h, x, t)?;
    Ok(-4.0 / 3.0 * r.powf(1.5) / t.sqrt() + 2.0 * h - 2.0 / 3.0 * t)
}

/// Log of [`tail_approx_h`].
pub fn log_tail_approx_h(h: f64, x: f64, t: f64) -> Result<f64> {
    Ok(tail_exponent(h, x, t)? - (4.0 * PI * t).ln())
}

/// Right-tail approximation of `p` for large `h`:
/// `e^{-(4/3)(h+x²/t)^{3/2}/√t + 2h - 2t/3} / (4πt)`.
pub fn tail_approx_h(h: f64, x: f64, t: f64) -> Result<f64> {
    Ok(log_tail_approx_h(h, x, t)?.exp())
}

/// Log of [`tail_approx_h_hat`].
pub fn log_tail_approx_h_hat(h: f64, x: f64, t: f64) -> Result<f64> {
    if !(h > 0.0) {
        return invalid(format!("h must be positive, got {h}"));
    }
    Ok(tail_exponent(h, x, t)? - (4.0 * PI * (h * t).sqrt()).ln())
}

/// Right-tail approximation of `p̂` for large `h`, with prefactor
/// `1/(4π√(ht))`.
pub fn tail_approx_h_hat(h: f64, x: f64, t: f64) -> Result<f64> {
    Ok(log_tail_approx_h_hat(h, x, t)?.exp())
}

/// Log of [`tail_approx_x`].
pub fn log_tail_approx_x(h: f64, x: f64, t: f64) -> Result<f64> {
    if x == 0.0 {
        return invalid("the large-|x| approximation needs x ≠ 0");
    }
    Ok(tail_exponent(h, x, t)? - (2.0 * PI * x.abs()).ln())
}

/// Approximation of `p` for large `|x|`, with prefactor `1/(2π|x|)`.
pub fn tail_approx_x(h: f64, x: f64, t: f64) -> Result<f64> {
    Ok(log_tail_approx_x(h, x, t)?.exp())
}

/// Log of [`tail_approx_x_hat`].
pub fn log_tail_approx_x_hat(h: f64, x: f64, t: f64) -> Result<f64> {
    if x == 0.0 {
        return invalid("the large-|x| approximation needs x ≠ 0");
    }
    Ok(tail_exponent(h, x, t)? + (t / (2.0 * PI * x * x)).ln())
}

/// Approximation of `p̂` for large `|x|`, with prefactor `t/(2πx²)`.
pub fn tail_approx_x_hat(h: f64, x: f64, t: f64) -> Result<f64> {
    Ok(log_tail_approx_x_hat(h, x, t)?.exp())
}

/// Total mass of `p` or `p̂` over a truncated rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    pub mass: f64,
    /// Mass of the outermost left strip, a proxy for the truncated left tail.
    pub boundary_strip: f64,
    pub h_range: (f64, f64),
    /// The rectangle spans `[-x_max, x_max]`.
    pub x_max: f64,
    pub evaluations: usize,
}

/// Gauss–Legendre nodes and weights on `[a, b]`.
fn gl_interval(a: f64, b: f64, m: usize) -> Result<Vec<(f64, f64)>> {
    let (x, w) = gauss_legendre_nodes(m)?;
    Ok(x.iter().zip(&w).map(|(xi, wi)| (a + (b - a) * xi, (b - a) * wi)).collect())
}

/// Integral over `|x| ≤ x_max` and `h` in the given rule, using the
/// symmetry in `x`.
fn box_mass(kind: SeriesKind, t: f64, hs: &[(f64, f64)], xs: &[(f64, f64)], cfg: &SeriesConfig) -> Result<f64> {
    let points: Vec<(usize, usize)> = (0..hs.len()).flat_map(|i| (0..xs.len()).map(move |j| (i, j))).collect();
    let values: Vec<f64> = points
        .par_iter()
        .map(|&(i, j)| {
            let pt = DensityPoint::new(hs[i].0, xs[j].0, t)?;
            Ok(eval_series(kind, &pt, cfg)?.value * hs[i].1 * xs[j].1)
        })
        .collect::<Result<_>>()?;
    Ok(2.0 * values.iter().sum::<f64>())
}

/// Largest `h` the mass estimate integrates to: where the right-tail
/// formula (with a safety factor of 2) drops below `1e-9`.
fn right_edge(t: f64) -> f64 {
    let mut h = t.max(1.0);
    while (log_tail_approx_h(h, 0.0, t).unwrap_or(0.0) + 2f64.ln()) > (1e-9f64).ln() {
        h += 0.25;
    }
    h
}

/// Width of the strips added on the left of the rectangle.
const STRIP_WIDTH: f64 = 0.5;
/// Strips are added until one carries less than this mass.
const STRIP_TOL: f64 = 1e-3;

/// Resolution of the tensor rule used by [`mass_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassRule {
    /// Gauss–Legendre nodes on `[0, x_max]`.
    pub x_nodes: usize,
    /// Gauss–Legendre nodes per unit length of the main `h` interval.
    pub h_density: f64,
    /// Gauss–Legendre nodes in each left strip.
    pub strip_nodes: usize,
}

impl Default for MassRule {
    fn default() -> Self {
        Self {
            x_nodes: 8,
            h_density: 1.0,
            strip_nodes: 4,
        }
    }
}

/// Mass of `p` (or `p̂` with `hat`) over a rectangle whose right edge comes
/// from the tail formula. The left edge is pushed out in strips until a
/// strip carries less than `1e-3`; the mass beyond it is extrapolated as a
/// geometric series from the last two strips.
pub fn mass_estimate(t: f64, cfg: &SeriesConfig, hat: bool) -> Result<MassEstimate> {
    mass_estimate_with(t, cfg, hat, &MassRule::default())
}

/// [`mass_estimate`] with an explicit rule.
pub fn mass_estimate_with(t: f64, cfg: &SeriesConfig, hat: bool, rule: &MassRule) -> Result<MassEstimate> {
    if !(t > 0.0) {
        return invalid(format!("t must be positive, got {t}"));
    }
    let kind = if hat { SeriesKind::PHat } else { SeriesKind::P };
    let h_hi = right_edge(t);
    let x_max = 3.0 * t.sqrt().max(1.0);
    let xs = gl_interval(0.0, x_max, rule.x_nodes)?;
    let mut h_lo = (t - 3.0 * t.sqrt()).min(-2.0);
    let body_nodes = ((h_hi - h_lo) * rule.h_density).ceil().max(8.0) as usize;
    let hs = gl_interval(h_lo, h_hi, body_nodes)?;
    let mut mass = box_mass(kind, t, &hs, &xs, cfg)?;
    let mut evaluations = hs.len() * xs.len();
    let mut prev = f64::NAN;
    let mut strip = f64::INFINITY;
    for _ in 0..8 {
        let hs = gl_interval(h_lo - STRIP_WIDTH, h_lo, rule.strip_nodes)?;
        prev = strip;
        strip = box_mass(kind, t, &hs, &xs, cfg)?;
        evaluations += hs.len() * xs.len();
        mass += strip;
        h_lo -= STRIP_WIDTH;
        if strip.abs() < STRIP_TOL {
            break;
        }
    }
    let ratio = strip / prev;
    if ratio > 0.0 && ratio < 1.0 {
        mass += strip * ratio / (1.0 - ratio);
    }
    Ok(MassEstimate {
        mass,
        boundary_strip: strip,
        h_range: (h_lo, h_hi),
        x_max,
        evaluations,
    })
}

/// Total mass of `p(·,·;t)`, which should equal 1.
pub fn normalization_estimate(t: f64, cfg: &SeriesConfig) -> Result<f64> {
    Ok(mass_estimate(t, cfg, false)?.mass)
}
