//! The finite-scale density `p(β, β', α; τ)` of the length `ℒ(τ)`, the
//! remaining length `ℒ(1) - ℒ(τ)` and the location `π(τ)`, the two-point
//! tail of the KPZ fixed point that shares its structure, and the rescaled
//! ratio whose `L → ∞` limit is `p(h, x; t)`.
//!
//! Both series are built from
//!
//! ```text
//! T_{n,n'}(z) = 2 Π_i [w_in ∫_{C_L^in} + w_out ∫_{C_L^out}] dξ_i
//!                   [w_in ∫_{C_R^in} + w_out ∫_{C_R^out}] dη_i
//!               Π_i' ∫_{C_L} dξ'_i' ∫_{C_R} dη'_i'  (1-z)^{n'} (1-1/z)^n
//!               · H(ξ ⊔ η'; η ⊔ ξ') · Π f_1(ξ)/f_1(η) · Π f_2(ξ')/f_2(η')
//!               · C(η'; ξ') · C(ξ' ⊔ η; η' ⊔ ξ) · C(ξ; η)
//! ```
//!
//! with `f_1 = f_{β,α;τ}`, `f_2 = f_{β',-α;1-τ}`, `w_in = 1/(1-z)` and
//! `w_out = -z/(1-z)` (`D_{n,n'}` drops the 2 and `H`). The integrand is
//! symmetric within each family, so expanding the mixed in/out measures
//! gives `Σ_{k,l} w_in^{k+l} w_out^{2n-k-l} O_{n,n'}(k,l)` where `O(k,l)`
//! has `k` of the `ξ` and `l` of the `η` on the inner contours. The `O(k,l)`
//! do not depend on `z` and are computed once per point.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::asymptotics::log_gue_density_asymp;
use crate::error::{invalid, Error, Result};
use crate::kernels::{cauchy_det, h_poly, log_f, vec_concat};
use crate::quadrature::{
    build_circle, choose_truncation_radius, ordered_sum, wedge_unchecked, ContourSpec,
    SampledContour,
};

/// Point `(β, β', α; τ)` of the finite-scale density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrelimitPoint {
    pub beta: f64,
    pub beta_p: f64,
    pub alpha: f64,
    pub tau: f64,
}

impl PrelimitPoint {
    pub fn new(beta: f64, beta_p: f64, alpha: f64, tau: f64) -> Result<Self> {
        let pt = Self {
            beta,
            beta_p,
            alpha,
            tau,
        };
        pt.validate()?;
        Ok(pt)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return invalid(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.beta.is_finite() && self.beta_p.is_finite() && self.alpha.is_finite()) {
            return invalid("beta, beta_p and alpha must be finite");
        }
        Ok(())
    }

    /// Exponent of `f_{β,α;τ}`.
    fn log_f1(&self, w: Complex64) -> Complex64 {
        log_f(self.beta, self.alpha, self.tau, w)
    }

    /// Exponent of `f_{β',-α;1-τ}`.
    fn log_f2(&self, w: Complex64) -> Complex64 {
        log_f(self.beta_p, -self.alpha, 1.0 - self.tau, w)
    }
}

/// One wedge of the six-contour family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WedgeSpec {
    pub anchor: f64,
    pub radius: f64,
    pub nodes_per_leg: usize,
    pub inner_panel: Option<f64>,
}

impl WedgeSpec {
    fn build(&self, left: bool) -> Result<SampledContour> {
        let spec = if left {
            ContourSpec::left_wedge(self.anchor, self.radius, self.nodes_per_leg)
        } else {
            ContourSpec::right_wedge(self.anchor, self.radius, self.nodes_per_leg)
        };
        let spec = match self.inner_panel {
            Some(p) => spec.with_inner_panel(p),
            None => spec,
        };
        wedge_unchecked(&spec)
    }
}

/// The contours `C_L^in, C_L, C_L^out, C_R^out, C_R, C_R^in` and the
/// z-circles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrelimitContours {
    pub left_in: WedgeSpec,
    pub left: WedgeSpec,
    pub left_out: WedgeSpec,
    pub right_out: WedgeSpec,
    pub right: WedgeSpec,
    pub right_in: WedgeSpec,
    pub z_nodes: usize,
    /// Radius of the circle for the density, which encloses only `z = 0`.
    pub z_radius_density: f64,
    /// Radius of the circle for the two-point tail, which encloses `0` and `1`.
    pub z_radius_tail: f64,
}

/// Default anchors of the six contours at unit scale.
pub const DEFAULT_ANCHORS: [f64; 6] = [-1.6, -1.0, -0.4, 0.4, 1.0, 1.6];

impl PrelimitContours {
    /// Contours at the default anchors with leg lengths chosen from the
    /// decay of `f_1` (for `ξ`, `η`) and `f_2` (for `ξ'`, `η'`) at `pt`.
    pub fn standard(pt: &PrelimitPoint, nodes_per_leg: usize) -> Result<Self> {
        pt.validate()?;
        let eps = 1e-14;
        let r1 = choose_truncation_radius(pt.tau, pt.beta, pt.alpha, eps)?;
        let r2 = choose_truncation_radius(1.0 - pt.tau, pt.beta_p, pt.alpha, eps)?;
        let w = |anchor: f64, radius: f64| WedgeSpec {
            anchor,
            radius,
            nodes_per_leg,
            inner_panel: None,
        };
        let a = DEFAULT_ANCHORS;
        Ok(Self {
            left_in: w(a[0], r1),
            left: w(a[1], r2),
            left_out: w(a[2], r1),
            right_out: w(a[3], r1),
            right: w(a[4], r2),
            right_in: w(a[5], r1),
            z_nodes: 32,
            z_radius_density: 0.5,
            z_radius_tail: 2.0,
        })
    }

    /// Contours for the rescaled point `β = hL^{-1/2}, β' = L - hL^{-1/2},
    /// α = x/L, τ = tL^{-3/2}`: the `ξ`, `η` contours are `√L` times wedges
    /// at `∓1.5, ∓0.5` (`u_scale` multiplies these offsets) and `ξ'`, `η'`
    /// pass through the saddle points of `f_2`.
    pub fn scaled(h: f64, x: f64, t: f64, l: f64, nodes_per_leg: usize, u_scale: f64) -> Result<Self> {
        let pt = scaled_point(h, x, t, l)?;
        let sl = l.sqrt();
        let ru = sl * choose_truncation_radius(t, h, x, 1e-14)?;
        let s = 1.0 - pt.tau;
        let root = (pt.alpha * pt.alpha + s * pt.beta_p).sqrt();
        let left_saddle = (-pt.alpha - root) / s;
        let right_saddle = (-pt.alpha + root) / s;
        // Curvature of the exponent of f_2 at the saddles, and the leg length
        // after which |f_2| has dropped by e^{-40}.
        let width = |z: f64| {
            let c = (2.0 * s * z + 2.0 * pt.alpha).abs();
            let mut r: f64 = 0.0;
            while c / 4.0 * r * r + s * r.powi(3) / 3.0 < 40.0 {
                r += 0.05;
            }
            (c.powf(-0.5), r)
        };
        let (wl, rl) = width(left_saddle);
        let (wr, rr) = width(right_saddle);
        let wu = |anchor: f64| WedgeSpec {
            anchor: sl * anchor,
            radius: ru,
            nodes_per_leg,
            inner_panel: Some(0.25 * sl * u_scale),
        };
        Ok(Self {
            left_in: wu(-1.0 - 0.5 * u_scale),
            left: WedgeSpec {
                anchor: left_saddle,
                radius: rl,
                nodes_per_leg,
                inner_panel: Some(0.5 * wl),
            },
            left_out: wu(-0.5 * u_scale),
            right_out: wu(0.5 * u_scale),
            right: WedgeSpec {
                anchor: right_saddle,
                radius: rr,
                nodes_per_leg,
                inner_panel: Some(0.5 * wr),
            },
            right_in: wu(1.0 + 0.5 * u_scale),
            z_nodes: 32,
            z_radius_density: 0.5,
            z_radius_tail: 2.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let a = [
            self.left_in.anchor,
            self.left.anchor,
            self.left_out.anchor,
            self.right_out.anchor,
            self.right.anchor,
            self.right_in.anchor,
        ];
        let ordered = a[0] < a[1] && a[1] < a[2] && a[2] < 0.0 && 0.0 < a[3] && a[3] < a[4] && a[4] < a[5];
        if !ordered {
            return invalid(format!(
                "contour anchors must satisfy in < mid < out < 0 < out < mid < in, got {a:?}"
            ));
        }
        if self.z_nodes < 4 {
            return invalid("z_nodes must be at least 4");
        }
        if !(self.z_radius_density > 0.0 && self.z_radius_density < 1.0) {
            return invalid(format!(
                "z_radius_density must lie in (0, 1), got {}",
                self.z_radius_density
            ));
        }
        if !(self.z_radius_tail > 1.0) {
            return invalid(format!("z_radius_tail must exceed 1, got {}", self.z_radius_tail));
        }
        Ok(())
    }
}

/// `(β, β', α; τ)` for the rescaled point of `(h, x, t)` at scale `L`.
pub fn scaled_point(h: f64, x: f64, t: f64, l: f64) -> Result<PrelimitPoint> {
    if !(l > 0.0) {
        return invalid(format!("L must be positive, got {l}"));
    }
    if !(t > 0.0) {
        return invalid(format!("t must be positive, got {t}"));
    }
    let tau = t * l.powf(-1.5);
    if tau >= 1.0 {
        return invalid(format!("t·L^(-3/2) must be below 1, got {tau}"));
    }
    PrelimitPoint::new(h / l.sqrt(), l - h / l.sqrt(), x / l, tau)
}

/// Number on a log scale: `mant · e^{log}`.
#[derive(Debug, Clone, Copy)]
struct Scaled {
    mant: Complex64,
    log: f64,
}

impl Scaled {
    fn rescale(&self, log: f64) -> Complex64 {
        self.mant * (self.log - log).exp()
    }
}

/// Sampled contours with per-node exponents.
struct Family {
    points: Vec<Complex64>,
    weights: Vec<Complex64>,
    exps: Vec<Complex64>,
    max_exp: f64,
}

impl Family {
    fn new(c: SampledContour, exp: impl Fn(Complex64) -> Complex64) -> Self {
        let exps: Vec<Complex64> = c.points.iter().map(|&w| exp(w)).collect();
        let max_exp = exps.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
        Self {
            points: c.points,
            weights: c.weights,
            exps,
            max_exp,
        }
    }
}

struct Families {
    xi_in: Family,
    xi_out: Family,
    eta_in: Family,
    eta_out: Family,
    xi_p: Family,
    eta_p: Family,
}

impl Families {
    fn new(pt: &PrelimitPoint, c: &PrelimitContours) -> Result<Self> {
        pt.validate()?;
        c.validate()?;
        Ok(Self {
            xi_in: Family::new(c.left_in.build(true)?, |w| pt.log_f1(w)),
            xi_out: Family::new(c.left_out.build(true)?, |w| pt.log_f1(w)),
            eta_in: Family::new(c.right_in.build(false)?, |w| -pt.log_f1(w)),
            eta_out: Family::new(c.right_out.build(false)?, |w| -pt.log_f1(w)),
            xi_p: Family::new(c.left.build(true)?, |w| pt.log_f2(w)),
            eta_p: Family::new(c.right.build(false)?, |w| -pt.log_f2(w)),
        })
    }
}

/// `C(η'; ξ') · C(ξ' ⊔ η; η' ⊔ ξ) · C(ξ; η)`, and `H(ξ ⊔ η'; η ⊔ ξ')`.
fn cauchy_triple(xi: &[Complex64], eta: &[Complex64], xi_p: &[Complex64], eta_p: &[Complex64]) -> Result<Complex64> {
    let outer = vec_concat(xi_p, eta);
    let inner = vec_concat(eta_p, xi);
    assert_eq!(outer.len(), inner.len(), "middle Cauchy determinant needs square input");
    Ok(cauchy_det(eta_p, xi_p)? * cauchy_det(&outer, &inner)? * cauchy_det(xi, eta)?)
}

fn h_factor(xi: &[Complex64], eta: &[Complex64], xi_p: &[Complex64], eta_p: &[Complex64]) -> Complex64 {
    h_poly(&vec_concat(xi, eta_p), &vec_concat(eta, xi_p))
}

/// `z`-free part of the `T` (with `H`) or `D` (without) integrand at one
/// node tuple, without quadrature weights.
pub fn branch_integrand(
    pt: &PrelimitPoint,
    with_h: bool,
    xi: &[Complex64],
    eta: &[Complex64],
    xi_p: &[Complex64],
    eta_p: &[Complex64],
) -> Result<Complex64> {
    if xi.len() != eta.len() || xi_p.len() != eta_p.len() || xi.is_empty() || xi_p.is_empty() {
        return invalid("need |ξ| = |η| ≥ 1 and |ξ'| = |η'| ≥ 1");
    }
    let mut e = Complex64::new(0.0, 0.0);
    for i in 0..xi.len() {
        e += pt.log_f1(xi[i]) - pt.log_f1(eta[i]);
    }
    for i in 0..xi_p.len() {
        e += pt.log_f2(xi_p[i]) - pt.log_f2(eta_p[i]);
    }
    let mut v = cauchy_triple(xi, eta, xi_p, eta_p)? * e.exp();
    if with_h {
        v *= 2.0 * h_factor(xi, eta, xi_p, eta_p);
    }
    Ok(v)
}

/// Ordered tensor sum `O_{n,n'}(k, l)` on a log scale.
fn branch_sum(f: &Families, with_h: bool, n: usize, np: usize, k: usize, l: usize) -> Result<Scaled> {
    let groups = [
        (f.xi_in.points.len(), k),
        (f.xi_out.points.len(), n - k),
        (f.eta_in.points.len(), l),
        (f.eta_out.points.len(), n - l),
        (f.xi_p.points.len(), np),
        (f.eta_p.points.len(), np),
    ];
    let fams = [&f.xi_in, &f.xi_out, &f.eta_in, &f.eta_out, &f.xi_p, &f.eta_p];
    let shift: f64 = fams.iter().zip(&groups).map(|(fam, g)| fam.max_exp * g.1 as f64).sum();
    let sum = ordered_sum(&groups, |idx| {
        let mut pos = 0;
        let mut take = |fam: &Family, count: usize, w: &mut Complex64, e: &mut Complex64| {
            let pts: Vec<Complex64> = idx[pos..pos + count].iter().map(|&i| fam.points[i]).collect();
            for &i in &idx[pos..pos + count] {
                *w *= fam.weights[i];
                *e += fam.exps[i];
            }
            pos += count;
            pts
        };
        let mut w = Complex64::new(1.0, 0.0);
        let mut e = Complex64::new(-shift, 0.0);
        let mut xi = take(&f.xi_in, k, &mut w, &mut e);
        xi.extend(take(&f.xi_out, n - k, &mut w, &mut e));
        let mut eta = take(&f.eta_in, l, &mut w, &mut e);
        eta.extend(take(&f.eta_out, n - l, &mut w, &mut e));
        let xi_p = take(&f.xi_p, np, &mut w, &mut e);
        let eta_p = take(&f.eta_p, np, &mut w, &mut e);
        // Contours are disjoint, so the determinants cannot hit a pole.
        let c = cauchy_triple(&xi, &eta, &xi_p, &eta_p).unwrap_or(Complex64::new(f64::NAN, 0.0));
        let mut v = w * c * e.exp();
        if with_h {
            v *= 2.0 * h_factor(&xi, &eta, &xi_p, &eta_p);
        }
        v
    });
    if !sum.is_finite() {
        return Err(Error::NonFinite(format!(
            "branch (n={n}, n'={np}, k={k}, l={l}) has {} non-finite contributions",
            sum.non_finite
        )));
    }
    Ok(Scaled {
        mant: sum.value,
        log: shift,
    })
}

/// All branch sums of a truncated series, keyed by `(n, n', k, l)`.
struct Branches {
    entries: Vec<((usize, usize, usize, usize), Scaled)>,
}

impl Branches {
    fn compute(f: &Families, with_h: bool, n_max: usize) -> Result<Self> {
        let mut entries = Vec::new();
        for n in 1..=n_max {
            for np in 1..=n_max {
                for k in 0..=n {
                    for l in 0..=n {
                        entries.push(((n, np, k, l), branch_sum(f, with_h, n, np, k, l)?));
                    }
                }
            }
        }
        Ok(Self { entries })
    }

    fn log_ref(&self) -> f64 {
        self.entries
            .iter()
            .filter(|(_, s)| s.mant.norm() > 0.0)
            .map(|(_, s)| s.log + s.mant.norm().ln())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `Σ_{n,n'} T_{n,n'}(z)/((n!)²(n'!)²)` (or the `D` analogue) relative
    /// to `e^{log_ref}`.
    fn series_at(&self, z: Complex64, log_ref: f64) -> Complex64 {
        let one = Complex64::new(1.0, 0.0);
        let w_in = one / (one - z);
        let w_out = -z / (one - z);
        self.entries
            .iter()
            .map(|&((n, np, k, l), s)| {
                (one - z).powi(np as i32)
                    * (one - one / z).powi(n as i32)
                    * w_in.powi((k + l) as i32)
                    * w_out.powi((2 * n - k - l) as i32)
                    * s.rescale(log_ref)
            })
            .sum()
    }
}

fn check_z(z: Complex64) -> Result<()> {
    if z.norm() < 1e-14 || (z - 1.0).norm() < 1e-14 {
        return invalid(format!("z must avoid 0 and 1, got {z}"));
    }
    Ok(())
}

/// `T_{n,n'}(z)` (including its overall factor 2), by the expanded in/out
/// branch sums.
pub fn eval_t_term(n: usize, np: usize, z: Complex64, pt: &PrelimitPoint, contours: &PrelimitContours) -> Result<Complex64> {
    eval_term(true, n, np, z, pt, contours)
}

/// `D_{n,n'}(z)`, the `T` term without the factor 2 and without `H`.
pub fn eval_d_term(n: usize, np: usize, z: Complex64, pt: &PrelimitPoint, contours: &PrelimitContours) -> Result<Complex64> {
    eval_term(false, n, np, z, pt, contours)
}

fn eval_term(
    with_h: bool,
    n: usize,
    np: usize,
    z: Complex64,
    pt: &PrelimitPoint,
    contours: &PrelimitContours,
) -> Result<Complex64> {
    if n == 0 || np == 0 {
        return invalid("n and n' must be at least 1");
    }
    check_z(z)?;
    let f = Families::new(pt, contours)?;
    let fact = |m: usize| (1..=m).product::<usize>() as f64;
    let scale = (fact(n) * fact(np)).powi(2);
    let mut entries = Vec::new();
    for k in 0..=n {
        for l in 0..=n {
            entries.push(((n, np, k, l), branch_sum(&f, with_h, n, np, k, l)?));
        }
    }
    let b = Branches { entries };
    let r = b.log_ref();
    let r = if r.is_finite() { r } else { 0.0 };
    // Ordered sums already carry the 1/((n!)²(n'!)²) of the series.
    Ok(b.series_at(z, r) * r.exp() * scale)
}

/// Integral over a circle around the origin, relative to `e^{log_ref}`.
fn z_integral(b: &Branches, radius: f64, nodes: usize, kernel: impl Fn(Complex64) -> Complex64, log_ref: f64) -> Result<Complex64> {
    let circle = build_circle(Complex64::new(0.0, 0.0), radius, nodes)?;
    Ok(circle.integrate(|z| kernel(z) * b.series_at(z, log_ref)))
}

/// A pre-limit evaluation with its imaginary part and scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrelimitValue {
    /// `value = Re(mantissa) · e^{log_scale}`.
    pub mantissa: Complex64,
    pub log_scale: f64,
}

impl PrelimitValue {
    pub fn value(&self) -> f64 {
        self.mantissa.re * self.log_scale.exp()
    }

    /// Natural log of `|value|`.
    pub fn log_abs(&self) -> f64 {
        self.mantissa.re.abs().ln() + self.log_scale
    }
}

fn density_value(pt: &PrelimitPoint, n_max: usize, contours: &PrelimitContours) -> Result<PrelimitValue> {
    if n_max == 0 {
        return invalid("n_max must be at least 1");
    }
    let f = Families::new(pt, contours)?;
    let b = Branches::compute(&f, true, n_max)?;
    let r = b.log_ref();
    let r = if r.is_finite() { r } else { 0.0 };
    let one = Complex64::new(1.0, 0.0);
    let m = z_integral(&b, contours.z_radius_density, contours.z_nodes, |z| one / ((one - z) * (one - z)), r)?;
    Ok(PrelimitValue {
        mantissa: m,
        log_scale: r,
    })
}

/// `p(β, β', α; τ)` truncated to `n, n' ≤ n_max`.
pub fn eval_prelimit_density(pt: &PrelimitPoint, n_max: usize, contours: &PrelimitContours) -> Result<f64> {
    Ok(density_value(pt, n_max, contours)?.value())
}

/// `P(H(-a, 1-τ) ≥ b2, H(0, 1) ≥ b1 + b2)` for the narrow-wedge KPZ fixed
/// point, truncated to `n, n' ≤ n_max`.
pub fn eval_kpz_two_point_tail(
    b1: f64,
    b2: f64,
    a: f64,
    tau: f64,
    n_max: usize,
    contours: &PrelimitContours,
) -> Result<f64> {
    if n_max == 0 {
        return invalid("n_max must be at least 1");
    }
    let pt = PrelimitPoint::new(b1, b2, a, tau)?;
    let f = Families::new(&pt, contours)?;
    let b = Branches::compute(&f, false, n_max)?;
    let r = b.log_ref();
    let r = if r.is_finite() { r } else { 0.0 };
    let one = Complex64::new(1.0, 0.0);
    let m = z_integral(&b, contours.z_radius_tail, contours.z_nodes, |z| one / (z * (one - z)), r)?;
    Ok(m.re * r.exp())
}

/// `L^{-3/2} p(hL^{-1/2}, L - hL^{-1/2}, x/L; tL^{-3/2}) / f_GUE(L)` with the
/// leading-order GUE density, on the given contours.
pub fn scaled_density_ratio_with(
    h: f64,
    x: f64,
    t: f64,
    l: f64,
    n_max: usize,
    contours: &PrelimitContours,
) -> Result<f64> {
    let pt = scaled_point(h, x, t, l)?;
    let v = density_value(&pt, n_max, contours)?;
    // L^{-3/2} / f_GUE(L) on a log scale.
    let log = v.log_scale - 1.5 * l.ln() - log_gue_density_asymp(l)?;
    let ratio = v.mantissa.re * log.exp();
    if !ratio.is_finite() {
        return Err(Error::NonFinite(format!("scaled ratio overflowed at L = {l}")));
    }
    Ok(ratio)
}

/// The scaled ratio on contours following the `√L` rescaling.
pub fn scaled_density_ratio(h: f64, x: f64, t: f64, l: f64, n_max: usize, nodes_per_leg: usize) -> Result<f64> {
    let c = PrelimitContours::scaled(h, x, t, l, nodes_per_leg, 1.0)?;
    scaled_density_ratio_with(h, x, t, l, n_max, &c)
}

/// The `z = 0` residue of the density's `z`-integrand, by expanding each
/// branch's rational factor in powers of `z`.
pub fn density_by_residue(pt: &PrelimitPoint, n_max: usize, contours: &PrelimitContours) -> Result<f64> {
    let f = Families::new(pt, contours)?;
    let b = Branches::compute(&f, true, n_max)?;
    let r = b.log_ref();
    let r = if r.is_finite() { r } else { 0.0 };
    // Rational factor: (1-z)^{n'-2} (1-1/z)^n (1-z)^{-2n} (-z)^{2n-k-l}
    //   = (-1)^{n+k+l} z^{n-k-l} (1-z)^{n'-2-n},
    // whose residue is the coefficient of z^{k+l-n-1} in (1-z)^{n'-2-n}.
    let mut total = Complex64::new(0.0, 0.0);
    for &((n, np, k, l), s) in &b.entries {
        if k + l < n + 1 {
            continue;
        }
        let j = k + l - n - 1;
        let e = np as f64 - 2.0 - n as f64;
        // Coefficient of z^j in (1-z)^e = (-1)^j binom(e, j) for real e.
        let mut c = 1.0;
        for i in 0..j {
            c *= (e - i as f64) / (i + 1) as f64;
        }
        let c = c * if j % 2 == 0 { 1.0 } else { -1.0 };
        let sign = if (n + k + l) % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * c * s.rescale(r);
    }
    Ok(total.re * r.exp())
}

/// Leading-order one-point tail `P(H(-a, s) ≥ b)` for the narrow-wedge KPZ
/// fixed point, from `H(x, s) = s^{1/3} TW_GUE - x²/s`.
pub fn one_point_tail_asymp(b: f64, a: f64, s: f64) -> Result<f64> {
    let arg = (b + a * a / s) / s.cbrt();
    crate::asymptotics::gue_tail_asymp(arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_tensor;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn generic_point() -> PrelimitPoint {
        PrelimitPoint::new(0.3, 0.4, 0.2, 0.4).unwrap()
    }

    #[test]
    fn point_and_contour_validation() {
        assert!(PrelimitPoint::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(PrelimitPoint::new(0.0, 0.0, 0.0, 0.0).is_err());
        let pt = generic_point();
        let mut cs = PrelimitContours::standard(&pt, 8).unwrap();
        assert!(cs.validate().is_ok());
        cs.left.anchor = -1.8;
        assert!(cs.validate().is_err());
        let mut cs = PrelimitContours::standard(&pt, 8).unwrap();
        cs.z_radius_density = 1.2;
        assert!(cs.validate().is_err());
        assert!(scaled_point(0.5, 0.0, 1.0, 1.0).is_err());
        assert!(scaled_point(0.5, 0.0, 1.0, 16.0).is_ok());
    }

    #[test]
    fn t_is_twice_h_times_d_pointwise() {
        let pt = generic_point();
        let xi = [c(-1.7, 0.3), c(-0.5, -0.8)];
        let eta = [c(1.5, 0.2), c(0.6, 0.9)];
        let xi_p = [c(-1.1, 0.4)];
        let eta_p = [c(0.9, -0.6)];
        let t = branch_integrand(&pt, true, &xi, &eta, &xi_p, &eta_p).unwrap();
        let d = branch_integrand(&pt, false, &xi, &eta, &xi_p, &eta_p).unwrap();
        let h = h_poly(&vec_concat(&xi, &eta_p), &vec_concat(&eta, &xi_p));
        assert!((t - 2.0 * h * d).norm() < 1e-13 * t.norm());
    }

    #[test]
    fn integrand_symmetric_within_families() {
        let pt = generic_point();
        let xi = [c(-1.7, 0.3), c(-0.5, -0.8)];
        let eta = [c(1.5, 0.2), c(0.6, 0.9)];
        let xi_p = [c(-1.1, 0.4)];
        let eta_p = [c(0.9, -0.6)];
        let a = branch_integrand(&pt, true, &xi, &eta, &xi_p, &eta_p).unwrap();
        let b = branch_integrand(&pt, true, &[xi[1], xi[0]], &eta, &xi_p, &eta_p).unwrap();
        assert!((a - b).norm() < 1e-13 * a.norm());
    }

    #[test]
    #[should_panic(expected = "square")]
    fn middle_determinant_dimensions() {
        let x = [c(-1.0, 0.0)];
        let _ = cauchy_triple(&x, &[c(1.0, 0.0), c(2.0, 0.0)], &x, &[c(0.5, 0.0)]);
    }

    #[test]
    fn z_not_at_poles() {
        let pt = generic_point();
        let cs = PrelimitContours::standard(&pt, 6).unwrap();
        assert!(eval_t_term(1, 1, c(0.0, 0.0), &pt, &cs).is_err());
        assert!(eval_t_term(1, 1, c(1.0, 0.0), &pt, &cs).is_err());
    }

    /// The T term at a fixed z by a plain tensor integral of the raw formula
    /// over merged contours, each node weighted by its in/out coefficient.
    fn t_term_merged(n: usize, z: Complex64, pt: &PrelimitPoint, cs: &PrelimitContours) -> Complex64 {
        let one = c(1.0, 0.0);
        let w_in = one / (one - z);
        let w_out = -z / (one - z);
        let merge = |a: SampledContour, b: SampledContour| SampledContour {
            points: a.points.iter().chain(&b.points).copied().collect(),
            weights: a
                .weights
                .iter()
                .map(|w| w * w_in)
                .chain(b.weights.iter().map(|w| w * w_out))
                .collect(),
        };
        let xi = merge(cs.left_in.build(true).unwrap(), cs.left_out.build(true).unwrap());
        let eta = merge(cs.right_in.build(false).unwrap(), cs.right_out.build(false).unwrap());
        let xp = cs.left.build(true).unwrap();
        let ep = cs.right.build(false).unwrap();
        let mut contours = vec![xi; n];
        contours.extend(vec![eta; n]);
        contours.push(xp);
        contours.push(ep);
        let sum = integrate_tensor(
            |w| {
                let (xi, rest) = w.split_at(n);
                let (eta, rest) = rest.split_at(n);
                let raw = branch_integrand(pt, true, xi, eta, &rest[..1], &rest[1..]);
                raw.unwrap_or(c(0.0, 0.0))
            },
            &contours,
        )
        .unwrap()
        .value;
        let fact = (1..=n).product::<usize>() as f64;
        (one - z) * (one - one / z).powi(n as i32) * sum / (fact * fact)
    }

    #[test]
    fn expanded_branches_match_merged_contours() {
        let pt = generic_point();
        let cs = PrelimitContours::standard(&pt, 5).unwrap();
        for z in [c(0.4, 0.2), c(-0.3, 0.5)] {
            let a = eval_t_term(1, 1, z, &pt, &cs).unwrap();
            let b = t_term_merged(1, z, &pt, &cs);
            assert!((a - b).norm() < 1e-10 * b.norm(), "{a} vs {b}");
        }
    }

    #[test]
    fn circle_quadrature_matches_residue() {
        let pt = generic_point();
        let cs = PrelimitContours::standard(&pt, 8).unwrap();
        let a = eval_prelimit_density(&pt, 1, &cs).unwrap();
        let b = density_by_residue(&pt, 1, &cs).unwrap();
        assert!((a - b).abs() < 1e-9 * b.abs(), "{a} vs {b}");
    }

    #[test]
    fn z_radius_invariance() {
        let pt = generic_point();
        let mut cs = PrelimitContours::standard(&pt, 8).unwrap();
        cs.z_radius_density = 0.3;
        let a = eval_prelimit_density(&pt, 1, &cs).unwrap();
        cs.z_radius_density = 0.6;
        let b = eval_prelimit_density(&pt, 1, &cs).unwrap();
        assert!((a - b).abs() < 1e-5 * a.abs(), "{a} vs {b}");
    }

    #[test]
    fn symmetric_in_alpha() {
        let pt = generic_point();
        let mirror = PrelimitPoint { alpha: -pt.alpha, ..pt };
        let cs = PrelimitContours::standard(&pt, 10).unwrap();
        let a = eval_prelimit_density(&pt, 1, &cs).unwrap();
        let b = eval_prelimit_density(&mirror, 1, &cs).unwrap();
        assert!((a - b).abs() < 1e-6 * a.abs(), "{a} vs {b}");
    }

    #[test]
    fn kpz_tail_is_a_decreasing_probability() {
        let mut prev = 1.0;
        for b2 in [0.0, 0.5, 1.0] {
            let pt = PrelimitPoint::new(0.0, b2, 0.0, 0.5).unwrap();
            let cs = PrelimitContours::standard(&pt, 10).unwrap();
            let v = eval_kpz_two_point_tail(0.0, b2, 0.0, 0.5, 1, &cs).unwrap();
            assert!(v > -1e-9 && v <= prev + 1e-9, "{v} after {prev}");
            prev = v;
        }
    }

    #[test]
    fn scaled_ratio_symmetric_in_x() {
        let a = scaled_density_ratio(0.5, 0.4, 1.0, 16.0, 1, 10).unwrap();
        let b = scaled_density_ratio(0.5, -0.4, 1.0, 16.0, 1, 10).unwrap();
        assert!((a - b).abs() < 1e-8 * a.abs(), "{a} vs {b}");
    }
}
