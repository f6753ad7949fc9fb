//! Contours and tensor-product quadrature.
//!
//! Every integral in the crate has the shape
//!
//! ```text
//! ∫_{C_1 × … × C_k} F(w_1, …, w_k) Π dw_j / (2πi)
//! ```
//!
//! over products of infinite wedges (two rays leaving a real anchor) and
//! circles. A [`SampledContour`] stores nodes together with complex weights
//! that already contain the parameterization derivative and the `1/(2πi)`
//! factor, so every integral reduces to a weighted sum over node tuples.
//!
//! Sums are split into fixed chunks of [`CHUNK`] tuples. Chunks may be
//! evaluated on any number of threads; their partial sums are combined in
//! chunk order, so results do not depend on the thread count.

use std::f64::consts::{FRAC_PI_3, PI};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Number of node tuples per reduction chunk.
pub const CHUNK: usize = 1024;

const TWO_PI_I: Complex64 = Complex64::new(0.0, 2.0 * PI);

/// Gauss–Legendre rule with `m` nodes mapped to `[0, 1]`.
///
/// Nodes are returned in increasing order; the weights sum to one.
pub fn gauss_legendre_nodes(m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if m == 0 {
        return invalid("Gauss-Legendre rule needs at least one node");
    }
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let mf = m as f64;
    // Roots are symmetric; compute the upper half by Newton iteration on P_m.
    for i in 0..m.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map [-1, 1] -> [0, 1].
        nodes[m - 1 - i] = 0.5 * (1.0 + x);
        nodes[i] = 0.5 * (1.0 - x);
        weights[m - 1 - i] = 0.5 * w;
        weights[i] = 0.5 * w;
    }
    Ok((nodes, weights))
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if m == 0 {
        return (1.0, 0.0);
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContourKind {
    /// Rays at angles `±2π/3`, traversed from `∞e^{-2πi/3}` to `∞e^{2πi/3}`.
    LeftWedge,
    /// Rays at angles `±π/3`, traversed from `∞e^{-πi/3}` to `∞e^{πi/3}`.
    RightWedge,
    /// Counterclockwise circle.
    Circle,
}

impl ContourKind {
    /// Opening half-angle of a wedge (zero for circles).
    pub fn angle(self) -> f64 {
        match self {
            ContourKind::LeftWedge => 2.0 * FRAC_PI_3,
            ContourKind::RightWedge => FRAC_PI_3,
            ContourKind::Circle => 0.0,
        }
    }
}

/// Parameters of one integration contour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec {
    pub kind: ContourKind,
    /// Real anchor of a wedge, or the center of a circle.
    pub anchor: Complex64,
    /// Truncation length of each wedge leg, or the circle radius.
    pub radius: f64,
    /// Nodes on each wedge leg, or on the whole circle.
    pub nodes_per_leg: usize,
    /// Length of the innermost Gauss–Legendre panel next to the anchor.
    /// `None` selects `radius / 16`.
    pub inner_panel: Option<f64>,
}

impl ContourSpec {
    pub fn left_wedge(anchor: f64, radius: f64, nodes_per_leg: usize) -> Self {
        Self {
            kind: ContourKind::LeftWedge,
            anchor: Complex64::new(anchor, 0.0),
            radius,
            nodes_per_leg,
            inner_panel: None,
        }
    }

    pub fn right_wedge(anchor: f64, radius: f64, nodes_per_leg: usize) -> Self {
        Self {
            kind: ContourKind::RightWedge,
            ..Self::left_wedge(anchor, radius, nodes_per_leg)
        }
    }

    pub fn circle(center: Complex64, radius: f64, nodes: usize) -> Self {
        Self {
            kind: ContourKind::Circle,
            anchor: center,
            radius,
            nodes_per_leg: nodes,
            inner_panel: None,
        }
    }

    pub fn with_inner_panel(mut self, len: f64) -> Self {
        self.inner_panel = Some(len);
        self
    }

    pub fn angle(&self) -> f64 {
        self.kind.angle()
    }
}

/// A discretized contour: `∮ g(w) dw/(2πi) ≈ Σ weights[j]·g(points[j])`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampledContour {
    pub points: Vec<Complex64>,
    pub weights: Vec<Complex64>,
}

impl SampledContour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies the rule to a one-variable integrand.
    pub fn integrate<F: Fn(Complex64) -> Complex64>(&self, f: F) -> Complex64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }

    /// Same path traversed in the opposite direction.
    pub fn reversed(&self) -> Self {
        Self {
            points: self.points.clone(),
            weights: self.weights.iter().map(|w| -w).collect(),
        }
    }

    /// Union of two contours (the integral over `self + other`).
    pub fn join(&self, other: &SampledContour) -> Self {
        let mut out = self.clone();
        out.points.extend_from_slice(&other.points);
        out.weights.extend_from_slice(&other.weights);
        out
    }

    /// Multiplies every weight by `factor`.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            points: self.points.clone(),
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }
}

/// Builds a left or right wedge, enforcing the admissible anchor interval
/// (`(-1, 0)` for left wedges, `(0, 1)` for right wedges).
pub fn build_wedge(spec: &ContourSpec) -> Result<SampledContour> {
    let a = spec.anchor;
    match spec.kind {
        ContourKind::LeftWedge => {
            if a.im != 0.0 || !(a.re > -1.0 && a.re < 0.0) {
                return invalid(format!("left-wedge anchor {a} must lie in (-1, 0)"));
            }
        }
        ContourKind::RightWedge => {
            if a.im != 0.0 || !(a.re > 0.0 && a.re < 1.0) {
                return invalid(format!("right-wedge anchor {a} must lie in (0, 1)"));
            }
        }
        ContourKind::Circle => return invalid("build_wedge called with a circle spec"),
    }
    wedge_unchecked(spec)
}

/// Builds a wedge through an arbitrary real anchor.
///
/// Only use this when the integrand has no poles between the anchor and the
/// admissible interval, or when the crossed poles are compensated by an
/// extra residue circle.
pub fn wedge_unchecked(spec: &ContourSpec) -> Result<SampledContour> {
    if spec.kind == ContourKind::Circle {
        return invalid("wedge requested with a circle spec");
    }
    if !(spec.radius > 0.0) || !spec.radius.is_finite() {
        return invalid(format!("wedge radius must be positive, got {}", spec.radius));
    }
    if spec.nodes_per_leg < 2 {
        return invalid("a wedge leg needs at least two nodes");
    }
    if !spec.anchor.re.is_finite() || spec.anchor.im != 0.0 {
        return invalid(format!("wedge anchor {} must be a finite real", spec.anchor));
    }
    let inner = spec.inner_panel.unwrap_or(spec.radius / 16.0);
    let (r, w) = leg_rule(spec.radius, spec.nodes_per_leg, inner)?;
    let theta = spec.angle();
    let up = Complex64::from_polar(1.0, theta);
    let down = up.conj();
    let n = r.len();
    let mut points = Vec::with_capacity(2 * n);
    let mut weights = Vec::with_capacity(2 * n);
    // Lower leg runs inward (r decreasing), so its weights carry a minus sign.
    for j in (0..n).rev() {
        points.push(spec.anchor + down * r[j]);
        weights.push(-down * w[j] / TWO_PI_I);
    }
    for j in 0..n {
        points.push(spec.anchor + up * r[j]);
        weights.push(up * w[j] / TWO_PI_I);
    }
    Ok(SampledContour { points, weights })
}

/// Smallest Gauss–Legendre order used on a panel.
const MIN_PANEL_NODES: usize = 8;

/// Composite Gauss–Legendre rule on `[0, radius]` whose panels double in
/// length away from zero, starting with a panel of length `inner`.
fn leg_rule(radius: f64, nodes: usize, inner: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let inner = if inner > 0.0 && inner < radius { inner } else { radius };
    let mut panels = 1 + (radius / inner).log2().ceil().max(0.0) as usize;
    panels = panels.min((nodes / MIN_PANEL_NODES).max(1));
    // With fewer panels than the grading asks for, widen the inner panel so
    // that the remaining ones still cover the leg evenly on a log scale.
    let inner = inner.max(radius / 2f64.powi(panels as i32 - 1));
    let mut bounds = vec![0.0];
    if panels > 1 {
        // Geometric breakpoints ending exactly at `radius`.
        let ratio = (radius / inner).powf(1.0 / (panels - 1) as f64);
        for k in 0..panels - 1 {
            bounds.push(inner * ratio.powi(k as i32));
        }
    }
    bounds.push(radius);
    let base = nodes / panels;
    let extra = nodes % panels;
    let mut r = Vec::with_capacity(nodes);
    let mut w = Vec::with_capacity(nodes);
    for p in 0..panels {
        let m = base + usize::from(p < extra);
        let (x, wx) = gauss_legendre_nodes(m)?;
        let (a, b) = (bounds[p], bounds[p + 1]);
        for (xi, wi) in x.iter().zip(&wx) {
            r.push(a + (b - a) * xi);
            w.push((b - a) * wi);
        }
    }
    Ok((r, w))
}

/// Trapezoid rule on the counterclockwise circle `|w - center| = radius`.
pub fn build_circle(center: Complex64, radius: f64, m: usize) -> Result<SampledContour> {
    if !(radius > 0.0) || !radius.is_finite() {
        return invalid(format!("circle radius must be positive, got {radius}"));
    }
    if m < 4 {
        return invalid("a circle needs at least four nodes");
    }
    let mut points = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for k in 0..m {
        let offset = Complex64::from_polar(radius, 2.0 * PI * k as f64 / m as f64);
        points.push(center + offset);
        weights.push(offset / m as f64);
    }
    Ok(SampledContour { points, weights })
}

/// Builds any contour kind from its spec.
pub fn build(spec: &ContourSpec) -> Result<SampledContour> {
    match spec.kind {
        ContourKind::Circle => build_circle(spec.anchor, spec.radius, spec.nodes_per_leg),
        _ => build_wedge(spec),
    }
}

/// Safety factor applied to the cubic decay radius.
pub const TRUNCATION_SAFETY: f64 = 1.25;

/// Leg length beyond which `|exp(-t w³/3 + x w² + h w)|` has decayed below
/// `eps` relative to its value at the anchor.
///
/// The cubic term alone gives `(3 ln(1/eps) / t)^{1/3}`; the quadratic and
/// linear terms are dominated once the radius also exceeds
/// `max(1, |x|/t, sqrt(|h|/t))`.
pub fn choose_truncation_radius(t: f64, h: f64, x: f64, eps: f64) -> Result<f64> {
    if !(t > 0.0) {
        return invalid(format!("t must be positive, got {t}"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return invalid(format!("eps must lie in (0, 1), got {eps}"));
    }
    let cubic = (3.0 * (1.0 / eps).ln() / t).cbrt();
    let r = cubic.max(1.0).max(x.abs() / t).max((h.abs() / t).sqrt());
    Ok(TRUNCATION_SAFETY * r)
}

/// Result of a quadrature sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorSum {
    pub value: Complex64,
    /// Number of node tuples whose weighted contribution was not finite.
    pub non_finite: usize,
    pub evaluations: usize,
}

impl TensorSum {
    pub fn is_finite(&self) -> bool {
        self.non_finite == 0 && self.value.re.is_finite() && self.value.im.is_finite()
    }
}

/// Deterministic parallel sum of `term(i)` for `i in 0..total`.
pub fn chunked_sum<F>(total: usize, term: F) -> TensorSum
where
    F: Fn(usize) -> Complex64 + Sync,
{
    let chunks = total.div_ceil(CHUNK);
    let partials: Vec<(Complex64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut bad = 0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(total) {
                let v = term(i);
                if !(v.re.is_finite() && v.im.is_finite()) {
                    bad += 1;
                }
                acc += v;
            }
            (acc, bad)
        })
        .collect();
    let mut value = Complex64::new(0.0, 0.0);
    let mut non_finite = 0;
    for (v, b) in partials {
        value += v;
        non_finite += b;
    }
    TensorSum {
        value,
        non_finite,
        evaluations: total,
    }
}

/// Full tensor-product quadrature of a `k`-variable integrand.
pub fn integrate_tensor<F>(integrand: F, contours: &[SampledContour]) -> Result<TensorSum>
where
    F: Fn(&[Complex64]) -> Complex64 + Sync,
{
    if contours.is_empty() {
        return invalid("integrate_tensor needs at least one contour");
    }
    if contours.iter().any(|c| c.is_empty()) {
        return invalid("integrate_tensor received an empty contour");
    }
    let sizes: Vec<usize> = contours.iter().map(|c| c.len()).collect();
    let total = sizes.iter().product();
    Ok(chunked_sum(total, |flat| {
        let mut rest = flat;
        let mut w = Complex64::new(1.0, 0.0);
        let mut point = [Complex64::new(0.0, 0.0); 16];
        let mut heap;
        let args: &mut [Complex64] = if sizes.len() <= 16 {
            &mut point[..sizes.len()]
        } else {
            heap = vec![Complex64::new(0.0, 0.0); sizes.len()];
            &mut heap[..]
        };
        for (d, c) in contours.iter().enumerate().rev() {
            let j = rest % sizes[d];
            rest /= sizes[d];
            args[d] = c.points[j];
            w *= c.weights[j];
        }
        w * integrand(args)
    }))
}

/// All strictly increasing `k`-subsets of `0..n`, in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    if k == 0 {
        out.push(Vec::new());
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    out
}

/// Sum over node tuples that are strictly increasing inside each group.
///
/// `groups[g] = (nodes, k)` declares `k` exchangeable variables sharing one
/// contour with `nodes` nodes. For an integrand symmetric inside each group
/// and vanishing when two variables of a group coincide, the full tensor sum
/// equals this sum times `Π k!`. `term` receives the concatenated indices and
/// must return the weighted integrand value.
pub fn ordered_sum<F>(groups: &[(usize, usize)], term: F) -> TensorSum
where
    F: Fn(&[usize]) -> Complex64 + Sync,
{
    let combos: Vec<Vec<Vec<usize>>> = groups.iter().map(|&(n, k)| combinations(n, k)).collect();
    let sizes: Vec<usize> = combos.iter().map(|c| c.len()).collect();
    let width: usize = groups.iter().map(|g| g.1).sum();
    let total = sizes.iter().product();
    chunked_sum(total, |flat| {
        let mut rest = flat;
        let mut idx = [0usize; 32];
        let mut heap;
        let buf: &mut [usize] = if width <= 32 {
            &mut idx[..width]
        } else {
            heap = vec![0usize; width];
            &mut heap[..]
        };
        let mut end = width;
        for (g, c) in combos.iter().enumerate().rev() {
            let j = rest % sizes[g];
            rest /= sizes[g];
            let k = groups[g].1;
            buf[end - k..end].copy_from_slice(&c[j]);
            end -= k;
        }
        term(buf)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn gl_small_orders() {
        let (x, w) = gauss_legendre_nodes(1).unwrap();
        assert_eq!(x, vec![0.5]);
        assert!((w[0] - 1.0).abs() < 1e-15);
        let (x, w) = gauss_legendre_nodes(2).unwrap();
        let d = 0.5 / 3f64.sqrt();
        assert!((x[0] - (0.5 - d)).abs() < 1e-15);
        assert!((x[1] - (0.5 + d)).abs() < 1e-15);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        assert!(gauss_legendre_nodes(0).is_err());
    }

    #[test]
    fn gl_weights_sum_and_exactness() {
        for m in 1..=64 {
            let (x, w) = gauss_legendre_nodes(m).unwrap();
            let s: f64 = w.iter().sum();
            assert!((s - 1.0).abs() < 1e-14, "m={m} sum={s}");
            assert!(x.windows(2).all(|p| p[0] < p[1]));
            // Exact for x^(2m-1) on [0, 1].
            let deg = (2 * m - 1) as i32;
            let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg)).sum();
            assert!((q - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "m={m}");
        }
    }

    #[test]
    fn wedge_geometry() {
        let left = build_wedge(&ContourSpec::left_wedge(-0.5, 6.0, 16)).unwrap();
        for p in &left.points {
            assert!(p.re < -0.5);
            let r = (p - c(-0.5, 0.0)).norm();
            assert!((p.re - (-0.5 - r / 2.0)).abs() < 1e-12);
        }
        let right = build_wedge(&ContourSpec::right_wedge(0.5, 6.0, 16)).unwrap();
        for p in &right.points {
            let r = (p - c(0.5, 0.0)).norm();
            assert!(p.re > 0.5);
            assert!((p.re - (0.5 + r / 2.0)).abs() < 1e-12);
        }
        // Orientation: lower leg first, upper leg last.
        assert!(right.points[0].im < 0.0 && right.points.last().unwrap().im > 0.0);
    }

    #[test]
    fn wedge_rejects_bad_specs() {
        assert!(build_wedge(&ContourSpec::left_wedge(0.2, 6.0, 16)).is_err());
        assert!(build_wedge(&ContourSpec::left_wedge(-1.0, 6.0, 16)).is_err());
        assert!(build_wedge(&ContourSpec::right_wedge(1.5, 6.0, 16)).is_err());
        assert!(build_wedge(&ContourSpec::right_wedge(0.5, 0.0, 16)).is_err());
        assert!(build_wedge(&ContourSpec::right_wedge(0.5, 6.0, 1)).is_err());
    }

    #[test]
    fn circle_residues() {
        let k = build_circle(c(0.0, 0.0), 0.5, 64).unwrap();
        let one = k.integrate(|z| 1.0 / z);
        assert!((one - 1.0).norm() < 1e-12);
        let zero = k.integrate(|z| 1.0 / ((1.0 - z) * (1.0 - z)));
        assert!(zero.norm() < 1e-12);
        let k2 = build_circle(c(0.0, 0.0), 2.0, 64).unwrap();
        let both = k2.integrate(|z| 1.0 / (z * (1.0 - z)));
        assert!(both.norm() < 1e-10);
        assert!(build_circle(c(0.0, 0.0), 0.0, 32).is_err());
        assert!(build_circle(c(0.0, 0.0), 1.0, 3).is_err());
    }

    #[test]
    fn truncation_radius_properties() {
        let base = (3.0 * (1e16f64).ln()).cbrt();
        assert!((base - 4.80).abs() < 0.01);
        let r = choose_truncation_radius(1.0, 0.0, 0.0, 1e-16).unwrap();
        assert!((r - TRUNCATION_SAFETY * base).abs() < 1e-12);
        let r2 = choose_truncation_radius(1.0, 0.0, 0.0, 0.5e-16).unwrap();
        assert!(r2 > r);
        let r4 = choose_truncation_radius(4.0, 0.0, 0.0, 1e-16).unwrap();
        assert!(((r / r4) / 4f64.cbrt() - 1.0).abs() < 0.05);
        assert!(choose_truncation_radius(1.0, 9.0, 0.0, 1e-16).unwrap() >= r);
        assert!(choose_truncation_radius(0.0, 0.0, 0.0, 1e-16).is_err());
        assert!(choose_truncation_radius(1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn reversal_negates() {
        let k = build_wedge(&ContourSpec::right_wedge(0.5, 6.0, 24)).unwrap();
        let f = |v: Complex64| (v * v * v / 3.0 - v).exp();
        let a = k.integrate(f);
        let b = k.reversed().integrate(f);
        assert_eq!(a, -b);
    }

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(5, 2).len(), 10);
        assert_eq!(combinations(6, 3).len(), 20);
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert!(combinations(2, 3).is_empty());
        let all = combinations(4, 2);
        assert_eq!(all[0], vec![0, 1]);
        assert_eq!(all[5], vec![2, 3]);
    }

    #[test]
    fn ordered_sum_matches_full_sum() {
        // Symmetric integrand vanishing on the diagonal: full sum = 2!·2!·ordered.
        let k = build_circle(c(0.0, 0.0), 1.0, 8).unwrap();
        let g = |a: Complex64, b: Complex64| (a - b) * (a - b) * (a + b + 3.0).exp();
        let full = integrate_tensor(
            |w| g(w[0], w[1]) * g(w[2], w[3]) * (w[0] * w[2] + w[1] * w[3] + w[0] * w[3] + w[1] * w[2]),
            &[k.clone(), k.clone(), k.clone(), k.clone()],
        )
        .unwrap();
        let ordered = ordered_sum(&[(8, 2), (8, 2)], |i| {
            let (a, b, cc, d) = (k.points[i[0]], k.points[i[1]], k.points[i[2]], k.points[i[3]]);
            let w = k.weights[i[0]] * k.weights[i[1]] * k.weights[i[2]] * k.weights[i[3]];
            w * g(a, b) * g(cc, d) * (a * cc + b * d + a * d + b * cc)
        });
        assert!((full.value - 4.0 * ordered.value).norm() < 1e-12 * (1.0 + full.value.norm()));
    }

    #[test]
    fn tensor_sum_flags_non_finite() {
        let k = build_circle(c(0.0, 0.0), 1.0, 8).unwrap();
        let s = integrate_tensor(|w| if w[0].im > 0.5 { Complex64::new(f64::NAN, 0.0) } else { w[0] }, &[k])
            .unwrap();
        assert!(!s.is_finite());
        assert!(s.non_finite > 0);
        assert!(integrate_tensor(|w| w[0], &[]).is_err());
    }
}
