//! The limiting densities `p(h,x;t)`, `p̂(h,x;t)` and the one-point tail of
//! the upper tail field, each as a truncated series of `2n`-fold contour
//! integrals over `Γ_L^n × Γ_R^n`.
//!
//! The `n`-th integrand is
//!
//! ```text
//! I_n(U;V) = (-1)^n e^{-2t/3+2h} Π_{i<j}(u_i-u_j)²(v_i-v_j)² / Π_{i,j}(u_i-v_j)²
//!            · Π_i (1+v_i)(1-u_i) f(u_i) / ((1+u_i)(1-v_i) f(v_i))
//!            · H(U ⊔ (1); V ⊔ (-1))
//! ```
//!
//! with `f = f_{h,x;t}`. `Î_n` multiplies it by `2/Σ(v_i-u_i)`; the tail of
//! the upper tail field drops `H`, flips the sign and uses `-x`.
//!
//! # Contour placement
//!
//! On the textbook contours (anchors in `(-1,0)` and `(0,1)`) the integrand
//! is `O(1)` while `p` can be astronomically small, so the series is
//! evaluated on wedges anchored at the real saddle points
//! `x/t ± sqrt(h/t + x²/t²)` of `f` whenever they exist. Where a wedge
//! crosses the pole at `u = -1` (or `v = 1`) a small circle around the pole
//! is added to the contour, which accounts for the residue exactly. For `p` and `p̂` at `n = 1` the factor `H(u,1;v,-1)` cancels both
//! poles and no circle is needed.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::{cauchy_det, h_from_sums, h_poly, log_f, vec_concat};
use crate::quadrature::{
    build_circle, choose_truncation_radius, ordered_sum, wedge_unchecked, ContourSpec,
    SampledContour, TensorSum,
};

/// Point `(h, x, t)` at which a limiting density is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub h: f64,
    pub x: f64,
    pub t: f64,
}

impl DensityPoint {
    pub fn new(h: f64, x: f64, t: f64) -> Result<Self> {
        let pt = Self { h, x, t };
        pt.validate()?;
        Ok(pt)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0) || !self.t.is_finite() {
            return invalid(format!("t must be positive, got {}", self.t));
        }
        if !self.h.is_finite() || !self.x.is_finite() {
            return invalid(format!("h and x must be finite, got h={} x={}", self.h, self.x));
        }
        Ok(())
    }
}

/// Truncation and quadrature parameters of the series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    /// Largest series index evaluated.
    pub n_max: usize,
    /// Gauss–Legendre nodes per wedge leg for the `n = 1` term. Higher
    /// terms use fewer nodes, see [`SeriesConfig::nodes_for_term`].
    pub nodes_per_leg: usize,
    /// Target size of the neglected wedge tails, relative to the integrand
    /// at the anchor.
    pub eps_quad: f64,
    /// Anchor of `Γ_L` when saddle-point placement is off.
    pub anchor_left: f64,
    /// Anchor of `Γ_R` when saddle-point placement is off.
    pub anchor_right: f64,
    /// Fixed wedge truncation length, overriding the automatic choice.
    pub radius_override: Option<f64>,
    /// Place wedges through the real saddle points of `f` (with residue
    /// circles where needed) instead of the fixed anchors.
    pub saddle_anchors: bool,
    /// Stop the series early once the next term, extrapolated from the
    /// last two, falls below this fraction of the running sum.
    pub term_tol: f64,
    /// Nodes on each residue circle.
    pub circle_nodes: usize,
    /// Re-evaluate every term on a coarser rule and report the difference
    /// as part of the error estimate.
    pub refine: bool,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self {
            n_max: 3,
            nodes_per_leg: 32,
            eps_quad: 1e-14,
            anchor_left: -0.5,
            anchor_right: 0.5,
            radius_override: None,
            saddle_anchors: true,
            term_tol: 1e-6,
            circle_nodes: 24,
            refine: true,
        }
    }
}

impl SeriesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 1 {
            return invalid("n_max must be at least 1");
        }
        if self.nodes_per_leg < 2 {
            return invalid("nodes_per_leg must be at least 2");
        }
        if !(self.eps_quad > 0.0 && self.eps_quad < 1.0) {
            return invalid(format!("eps_quad must lie in (0, 1), got {}", self.eps_quad));
        }
        if !(self.anchor_left > -1.0 && self.anchor_left < 0.0) {
            return invalid(format!("anchor_left must lie in (-1, 0), got {}", self.anchor_left));
        }
        if !(self.anchor_right > 0.0 && self.anchor_right < 1.0) {
            return invalid(format!("anchor_right must lie in (0, 1), got {}", self.anchor_right));
        }
        if let Some(r) = self.radius_override {
            if !(r > 0.0) {
                return invalid(format!("radius_override must be positive, got {r}"));
            }
        }
        if self.circle_nodes < 4 {
            return invalid("circle_nodes must be at least 4");
        }
        if !(self.term_tol >= 0.0) {
            return invalid("term_tol must be nonnegative");
        }
        Ok(())
    }

    /// Nodes per leg used for the `n`-th term. The cost of term `n` grows
    /// like `nodes^{2n}` while its size decays quickly, so higher terms get
    /// coarser rules.
    pub fn nodes_for_term(&self, n: usize) -> usize {
        match n {
            1 => self.nodes_per_leg,
            2 => (3 * self.nodes_per_leg).div_ceil(4).max(8),
            _ => self.nodes_per_leg.div_ceil(n).max(8),
        }
    }
}

/// Result of a series evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Real part of the truncated series.
    pub value: f64,
    /// Term `n` (already divided by `(n!)²`) at index `n - 1`.
    pub terms: Vec<Complex64>,
    /// Refinement deltas plus the magnitude of the last evaluated term.
    pub err_estimate: f64,
    pub n_used: usize,
    /// `|term_n / term_{n-1}|` for the last evaluated term (0 if `n_used = 1`).
    pub last_ratio: f64,
    /// Total number of integrand evaluations.
    pub evaluations: usize,
}

impl EvalResult {
    /// Imaginary part of the series, which vanishes for the exact value.
    pub fn imag(&self) -> f64 {
        self.terms.iter().map(|t| t.im).sum()
    }
}

/// Which of the three series to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesKind {
    /// `p(h,x;t)`.
    P,
    /// `p̂(h,x;t)`.
    PHat,
    /// `P(H^UT(x,-t) ≥ -h)`.
    UtTail,
}

impl SeriesKind {
    /// Whether the `n`-th integrand is analytic at `u = -1` and `v = 1`.
    fn pole_free(self, n: usize) -> bool {
        n == 1 && self != SeriesKind::UtTail
    }

    pub fn label(self) -> &'static str {
        match self {
            SeriesKind::P => "p",
            SeriesKind::PHat => "phat",
            SeriesKind::UtTail => "ut-tail",
        }
    }
}

fn check_vectors(n: usize, u: &[Complex64], v: &[Complex64]) -> Result<()> {
    if u.len() != n || v.len() != n || n == 0 {
        return invalid(format!(
            "integrand of order {n} needs |U| = |V| = {n}, got {} and {}",
            u.len(),
            v.len()
        ));
    }
    for &ui in u {
        if (ui + 1.0).norm() < 1e-13 {
            return Err(Error::Singularity(format!("u = {ui} sits on the pole at -1")));
        }
        for &vj in v {
            if (ui - vj).norm() < 1e-13 * (1.0 + ui.norm()) {
                return Err(Error::Singularity(format!("u = {ui} coincides with v = {vj}")));
            }
        }
    }
    for &vj in v {
        if (vj - 1.0).norm() < 1e-13 {
            return Err(Error::Singularity(format!("v = {vj} sits on the pole at 1")));
        }
    }
    Ok(())
}

/// Explicit integrand `I_n(U;V)` at one node tuple.
pub fn integrand_i(n: usize, u: &[Complex64], v: &[Complex64], pt: &DensityPoint) -> Result<Complex64> {
    check_vectors(n, u, v)?;
    let mut exponent = Complex64::new(-2.0 * pt.t / 3.0 + 2.0 * pt.h, 0.0);
    let mut prod = Complex64::new(if n % 2 == 0 { 1.0 } else { -1.0 }, 0.0);
    for i in 0..n {
        exponent += log_f(pt.h, pt.x, pt.t, u[i]) - log_f(pt.h, pt.x, pt.t, v[i]);
        prod *= (1.0 + v[i]) * (1.0 - u[i]) / ((1.0 + u[i]) * (1.0 - v[i]));
        for j in i + 1..n {
            let du = u[i] - u[j];
            let dv = v[i] - v[j];
            prod *= du * du * dv * dv;
        }
        for &vj in v {
            let d = u[i] - vj;
            prod /= d * d;
        }
    }
    let one = [Complex64::new(1.0, 0.0)];
    let minus_one = [Complex64::new(-1.0, 0.0)];
    let h = h_poly(&vec_concat(u, &one), &vec_concat(v, &minus_one));
    Ok(prod * h * exponent.exp())
}

/// `Î_n(U;V) = 2/Σ(v_i - u_i) · I_n(U;V)`.
pub fn integrand_i_hat(n: usize, u: &[Complex64], v: &[Complex64], pt: &DensityPoint) -> Result<Complex64> {
    let base = integrand_i(n, u, v, pt)?;
    let denom: Complex64 = v.iter().sum::<Complex64>() - u.iter().sum::<Complex64>();
    if denom.norm() < 1e-300 {
        return Err(Error::Singularity("Σ(v_i - u_i) vanishes".into()));
    }
    Ok(2.0 / denom * base)
}

/// `I_n` assembled from its defining form
/// `-2 C(U;V) C(V⊔(-1); U⊔(1)) H(U⊔(1); V⊔(-1)) e^{-2t/3+2h} Π f(u)/f(v)`.
pub fn integrand_i_cauchy(n: usize, u: &[Complex64], v: &[Complex64], pt: &DensityPoint) -> Result<Complex64> {
    check_vectors(n, u, v)?;
    let one = [Complex64::new(1.0, 0.0)];
    let minus_one = [Complex64::new(-1.0, 0.0)];
    let c1 = cauchy_det(u, v)?;
    let c2 = cauchy_det(&vec_concat(v, &minus_one), &vec_concat(u, &one))?;
    let h = h_poly(&vec_concat(u, &one), &vec_concat(v, &minus_one));
    let mut exponent = Complex64::new(-2.0 * pt.t / 3.0 + 2.0 * pt.h, 0.0);
    for i in 0..n {
        exponent += log_f(pt.h, pt.x, pt.t, u[i]) - log_f(pt.h, pt.x, pt.t, v[i]);
    }
    Ok(-2.0 * c1 * c2 * h * exponent.exp())
}

/// Integrand of the upper-tail-field tail series at `(h, x, t)`: the
/// `H`-free integrand at `(h, -x, t)` with the opposite sign.
pub fn integrand_ut(n: usize, u: &[Complex64], v: &[Complex64], pt: &DensityPoint) -> Result<Complex64> {
    check_vectors(n, u, v)?;
    let one = [Complex64::new(1.0, 0.0)];
    let minus_one = [Complex64::new(-1.0, 0.0)];
    let c1 = cauchy_det(u, v)?;
    let c2 = cauchy_det(&vec_concat(v, &minus_one), &vec_concat(u, &one))?;
    let mut exponent = Complex64::new(-2.0 * pt.t / 3.0 + 2.0 * pt.h, 0.0);
    for i in 0..n {
        exponent += log_f(pt.h, -pt.x, pt.t, u[i]) - log_f(pt.h, -pt.x, pt.t, v[i]);
    }
    Ok(2.0 * c1 * c2 * exponent.exp())
}

/// Real anchors and optional residue circles for one term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchors {
    pub left: f64,
    pub right: f64,
    /// Radius of the circle around `-1` joined to the `u` contour.
    pub left_circle: Option<f64>,
    /// Radius of the circle around `+1` joined to the `v` contour.
    pub right_circle: Option<f64>,
}

/// Closest approach of an anchor to a pole it must stay clear of.
const POLE_MARGIN: f64 = 0.3;
/// Largest residue circle.
const MAX_CIRCLE: f64 = 0.25;
/// Minimum separation of the two anchors.
const MIN_GAP: f64 = 0.5;

/// Real saddle points `x/t ± sqrt(h/t + x²/t²)` of `f_{h,x;t}`, if any.
pub fn real_saddles(h: f64, x: f64, t: f64) -> Option<(f64, f64)> {
    let c = x / t;
    let disc = h / t + c * c;
    if disc > 0.0 {
        let s = disc.sqrt();
        Some((c - s, c + s))
    } else {
        None
    }
}

fn circle_radius(anchor_to_pole: f64) -> f64 {
    // The wedge passes the pole at distance anchor_to_pole·sin(π/3).
    (0.5 * anchor_to_pole * (std::f64::consts::FRAC_PI_3).sin()).min(MAX_CIRCLE)
}

/// Chooses wedge anchors (and residue circles) for a term.
///
/// `pole_free` declares that the integrand is analytic at `u = -1` and
/// `v = 1`, in which case the wedges may sit anywhere with `left < right`.
pub fn choose_anchors(pt: &DensityPoint, x_eff: f64, cfg: &SeriesConfig, pole_free: bool) -> Anchors {
    let fixed = Anchors {
        left: cfg.anchor_left,
        right: cfg.anchor_right,
        left_circle: None,
        right_circle: None,
    };
    if !cfg.saddle_anchors {
        return fixed;
    }
    let (mut a, mut b) = match real_saddles(pt.h, x_eff, pt.t) {
        Some(s) => s,
        None => {
            let c = x_eff / pt.t;
            (c + cfg.anchor_left, c + cfg.anchor_right)
        }
    };
    if b - a < MIN_GAP {
        let mid = 0.5 * (a + b);
        a = mid - 0.5 * MIN_GAP;
        b = mid + 0.5 * MIN_GAP;
    }
    if pole_free {
        return Anchors {
            left: a,
            right: b,
            left_circle: None,
            right_circle: None,
        };
    }
    let mut out = Anchors {
        left: a,
        right: b,
        left_circle: None,
        right_circle: None,
    };
    if a <= -1.0 - POLE_MARGIN {
        out.left_circle = Some(circle_radius(-1.0 - a));
    } else if a < -1.0 + POLE_MARGIN {
        out.left = -1.0 + POLE_MARGIN;
    }
    if b >= 1.0 + POLE_MARGIN {
        out.right_circle = Some(circle_radius(b - 1.0));
    } else if b > 1.0 - POLE_MARGIN {
        out.right = 1.0 - POLE_MARGIN;
    }
    // A residue circle must stay on the correct side of the other family.
    if let Some(r) = out.left_circle {
        out.right = out.right.max(-1.0 + r + MIN_GAP);
    }
    if let Some(r) = out.right_circle {
        out.left = out.left.min(1.0 - r - MIN_GAP);
    }
    if anchors_consistent(&out) {
        out
    } else {
        fixed
    }
}

fn anchors_consistent(a: &Anchors) -> bool {
    if a.right - a.left < 0.5 * MIN_GAP {
        return false;
    }
    let near = |anchor: f64, pole: f64| (anchor - pole).abs() < POLE_MARGIN - 1e-12;
    match a.left_circle {
        Some(_) => {
            if a.left > -1.0 - POLE_MARGIN + 1e-12 {
                return false;
            }
        }
        None => {
            if a.left < -1.0 || near(a.left, -1.0) {
                return false;
            }
        }
    }
    match a.right_circle {
        Some(_) => a.right >= 1.0 + POLE_MARGIN - 1e-12,
        None => !(a.right > 1.0 || near(a.right, 1.0)),
    }
}

/// Sampled contours for one series term.
#[derive(Debug, Clone)]
pub struct TermContours {
    pub anchors: Anchors,
    /// Wedge nodes followed by residue-circle nodes, if any.
    pub left: SampledContour,
    pub right: SampledContour,
    /// Number of wedge nodes at the start of `left` and `right`.
    pub left_wedge: usize,
    pub right_wedge: usize,
}

/// Contours for every term of a series, fixed once so that nearby
/// parameter values can be evaluated on identical nodes.
#[derive(Debug, Clone)]
pub struct ContourPlan {
    pub kind: SeriesKind,
    pub fine: Vec<TermContours>,
    pub coarse: Option<Vec<TermContours>>,
}

fn inner_panel(anchor: f64, pt: &DensityPoint, x_eff: f64, radius: f64, gap: f64) -> f64 {
    // Curvature scale of the exponent at the anchor.
    let curvature = (-2.0 * pt.t * anchor + 2.0 * x_eff).abs();
    let width = if curvature > 0.0 { curvature.powf(-0.5) } else { radius };
    let pole = (anchor.abs() - 1.0).abs().max(1e-3);
    (0.5 * width.min(gap).min(pole)).clamp(radius / 256.0, radius / 4.0)
}

fn term_contours(
    pt: &DensityPoint,
    x_eff: f64,
    cfg: &SeriesConfig,
    n: usize,
    anchors: Anchors,
    nodes: usize,
) -> Result<TermContours> {
    // Higher terms are small and only need proportionally less relative
    // accuracy; shorter legs let their coarse rules resolve the bulk.
    let radius = match cfg.radius_override {
        Some(r) => r,
        None => choose_truncation_radius(pt.t, pt.h, x_eff, cfg.eps_quad.powf(1.0 / n as f64))?,
    };
    let gap = anchors.right - anchors.left;
    let left_spec = ContourSpec::left_wedge(anchors.left, radius, nodes)
        .with_inner_panel(inner_panel(anchors.left, pt, x_eff, radius, gap));
    let right_spec = ContourSpec::right_wedge(anchors.right, radius, nodes)
        .with_inner_panel(inner_panel(anchors.right, pt, x_eff, radius, gap));
    let mut left = wedge_unchecked(&left_spec)?;
    let mut right = wedge_unchecked(&right_spec)?;
    let (left_wedge, right_wedge) = (left.len(), right.len());
    if let Some(r) = anchors.left_circle {
        left = left.join(&build_circle(Complex64::new(-1.0, 0.0), r, cfg.circle_nodes)?);
    }
    // Γ_R runs upward, so pushing it right past v = 1 leaves a clockwise loop.
    if let Some(r) = anchors.right_circle {
        right = right.join(&build_circle(Complex64::new(1.0, 0.0), r, cfg.circle_nodes)?.reversed());
    }
    Ok(TermContours {
        anchors,
        left,
        right,
        left_wedge,
        right_wedge,
    })
}

impl ContourPlan {
    /// Builds contours for all `n ≤ cfg.n_max` around `pt`.
    pub fn new(kind: SeriesKind, pt: &DensityPoint, cfg: &SeriesConfig) -> Result<Self> {
        pt.validate()?;
        cfg.validate()?;
        let x_eff = if kind == SeriesKind::UtTail { -pt.x } else { pt.x };
        let mut fine = Vec::with_capacity(cfg.n_max);
        let mut coarse = Vec::with_capacity(cfg.n_max);
        for n in 1..=cfg.n_max {
            let anchors = choose_anchors(pt, x_eff, cfg, kind.pole_free(n));
            let nodes = cfg.nodes_for_term(n);
            fine.push(term_contours(pt, x_eff, cfg, n, anchors, nodes)?);
            if cfg.refine {
                let coarse_nodes = (3 * nodes / 4).max(4);
                let mut ccfg = cfg.clone();
                ccfg.circle_nodes = (3 * cfg.circle_nodes / 4).max(4);
                coarse.push(term_contours(pt, x_eff, &ccfg, n, anchors, coarse_nodes)?);
            }
        }
        Ok(Self {
            kind,
            fine,
            coarse: cfg.refine.then_some(coarse),
        })
    }
}

/// Per-node data of one variable family.
struct NodeData {
    z: Complex64,
    /// Weight times the rational one-variable factor.
    weight: Complex64,
    /// `±log f` at the node.
    exponent: Complex64,
    on_circle: bool,
}

/// Per-subset data: products over the chosen nodes of one family.
struct SubsetData {
    idx: Vec<usize>,
    /// `Π weight · Π_{i<j} (z_i - z_j)² · exp(Σ exponent - shift)`.
    scaled: Complex64,
    sums: [Complex64; 3],
}

fn subsets(nodes: &[NodeData], n: usize) -> (Vec<SubsetData>, f64) {
    let combos = crate::quadrature::combinations(nodes.len(), n);
    let mut raw: Vec<(Vec<usize>, Complex64, Complex64, [Complex64; 3])> = Vec::with_capacity(combos.len());
    let mut shift = f64::NEG_INFINITY;
    for idx in combos {
        // The integrand has a simple pole in each variable at the circle's
        // center and vanishes quadratically when two variables meet, so
        // tuples with two variables on the circle integrate to zero.
        if idx.iter().filter(|&&i| nodes[i].on_circle).count() > 1 {
            continue;
        }
        let mut pre = Complex64::new(1.0, 0.0);
        let mut e = Complex64::new(0.0, 0.0);
        let mut sums = [Complex64::new(0.0, 0.0); 3];
        for (a, &i) in idx.iter().enumerate() {
            let nd = &nodes[i];
            pre *= nd.weight;
            e += nd.exponent;
            let z2 = nd.z * nd.z;
            sums[0] += nd.z;
            sums[1] += z2;
            sums[2] += z2 * nd.z;
            for &j in &idx[a + 1..] {
                let d = nd.z - nodes[j].z;
                pre *= d * d;
            }
        }
        if pre.norm() > 0.0 && pre.re.is_finite() && pre.im.is_finite() {
            shift = shift.max(e.re + pre.norm().ln());
        }
        raw.push((idx, pre, e, sums));
    }
    if !shift.is_finite() {
        shift = 0.0;
    }
    let data = raw
        .into_iter()
        .map(|(idx, pre, e, sums)| SubsetData {
            idx,
            scaled: pre * (e - shift).exp(),
            sums,
        })
        .collect();
    (data, shift)
}

/// Evaluates the `n`-th term (already divided by `(n!)²`) on given contours.
pub fn series_term(kind: SeriesKind, n: usize, pt: &DensityPoint, tc: &TermContours) -> Result<TensorSum> {
    let x_eff = if kind == SeriesKind::UtTail { -pt.x } else { pt.x };
    let left: Vec<NodeData> = tc
        .left
        .points
        .iter()
        .zip(&tc.left.weights)
        .enumerate()
        .map(|(k, (&u, &w))| NodeData {
            z: u,
            weight: w * (1.0 - u) / (1.0 + u),
            exponent: log_f(pt.h, x_eff, pt.t, u),
            on_circle: k >= tc.left_wedge,
        })
        .collect();
    let right: Vec<NodeData> = tc
        .right
        .points
        .iter()
        .zip(&tc.right.weights)
        .enumerate()
        .map(|(k, (&v, &w))| NodeData {
            z: v,
            weight: w * (1.0 + v) / (1.0 - v),
            exponent: -log_f(pt.h, x_eff, pt.t, v),
            on_circle: k >= tc.right_wedge,
        })
        .collect();
    let (us, shift_u) = subsets(&left, n);
    let (vs, shift_v) = subsets(&right, n);
    let nr = right.len();
    let inv_cross: Vec<Complex64> = left
        .iter()
        .flat_map(|l| right.iter().map(move |r| 1.0 / ((l.z - r.z) * (l.z - r.z))))
        .collect();
    let two = Complex64::new(2.0, 0.0);
    let sum = ordered_sum(&[(us.len(), 1), (vs.len(), 1)], |ij| {
        let a = &us[ij[0]];
        let b = &vs[ij[1]];
        let mut base = a.scaled * b.scaled;
        for &i in &a.idx {
            let row = &inv_cross[i * nr..(i + 1) * nr];
            for &j in &b.idx {
                base *= row[j];
            }
        }
        match kind {
            SeriesKind::UtTail => base,
            SeriesKind::P | SeriesKind::PHat => {
                let s1 = a.sums[0] - b.sums[0] + two;
                let s2 = a.sums[1] - b.sums[1];
                let s3 = a.sums[2] - b.sums[2] + two;
                let h = h_from_sums(s1, s2, s3);
                if kind == SeriesKind::P {
                    base * h
                } else {
                    base * h * two / (b.sums[0] - a.sums[0])
                }
            }
        }
    });
    // Ordered subsets already absorb the 1/(n!)² prefactor.
    let sign = match (kind, n % 2) {
        (SeriesKind::UtTail, 0) => -1.0,
        (SeriesKind::UtTail, _) => 1.0,
        (_, 0) => 1.0,
        _ => -1.0,
    };
    let scale = (-2.0 * pt.t / 3.0 + 2.0 * pt.h + shift_u + shift_v).exp() * sign;
    Ok(TensorSum {
        value: sum.value * scale,
        ..sum
    })
}

/// Size of the next term extrapolated from the ratio of the last two; the
/// last term itself when only one is known.
fn predicted_next(terms: &[Complex64]) -> f64 {
    match terms {
        [] => 0.0,
        [only] => only.norm(),
        [.., a, b] => {
            let (a, b) = (a.norm(), b.norm());
            if a > 0.0 {
                b * (b / a).min(1.0)
            } else {
                b
            }
        }
    }
}

/// Evaluates a series on a fixed plan.
///
/// With `early_stop` the series stops after the first term smaller than
/// `term_tol` times the running sum; otherwise all planned terms are used.
pub fn eval_with_plan(
    plan: &ContourPlan,
    pt: &DensityPoint,
    cfg: &SeriesConfig,
    early_stop: bool,
) -> Result<EvalResult> {
    pt.validate()?;
    let mut terms = Vec::new();
    let mut err = 0.0;
    let mut evaluations = 0;
    let mut total = Complex64::new(0.0, 0.0);
    for (k, tc) in plan.fine.iter().enumerate() {
        let n = k + 1;
        let fine = series_term(plan.kind, n, pt, tc)?;
        evaluations += fine.evaluations;
        if !fine.is_finite() {
            return Err(Error::NonFinite(format!(
                "term n={n} of {} at (h={}, x={}, t={}) has {} non-finite contributions",
                plan.kind.label(),
                pt.h,
                pt.x,
                pt.t,
                fine.non_finite
            )));
        }
        if let Some(coarse) = &plan.coarse {
            let c = series_term(plan.kind, n, pt, &coarse[k])?;
            evaluations += c.evaluations;
            if c.is_finite() {
                err += (fine.value - c.value).norm();
            } else {
                err += fine.value.norm();
            }
        }
        terms.push(fine.value);
        total += fine.value;
        if early_stop && n < plan.fine.len() && predicted_next(&terms) <= cfg.term_tol * total.norm() {
            break;
        }
    }
    let n_used = terms.len();
    let last = terms[n_used - 1].norm();
    let last_ratio = if n_used > 1 {
        last / terms[n_used - 2].norm()
    } else {
        0.0
    };
    if n_used < plan.fine.len() {
        err += predicted_next(&terms);
    }
    Ok(EvalResult {
        value: total.re,
        terms,
        err_estimate: err + last,
        n_used,
        last_ratio,
        evaluations,
    })
}

/// Evaluates one of the three series at `pt`.
pub fn eval_series(kind: SeriesKind, pt: &DensityPoint, cfg: &SeriesConfig) -> Result<EvalResult> {
    let plan = ContourPlan::new(kind, pt, cfg)?;
    eval_with_plan(&plan, pt, cfg, true)
}

/// `p(h,x;t)`.
pub fn eval_p(pt: &DensityPoint, cfg: &SeriesConfig) -> Result<EvalResult> {
    eval_series(SeriesKind::P, pt, cfg)
}

/// `p̂(h,x;t)`.
pub fn eval_p_hat(pt: &DensityPoint, cfg: &SeriesConfig) -> Result<EvalResult> {
    eval_series(SeriesKind::PHat, pt, cfg)
}

/// `P(H^UT(x,-t) ≥ -h)`, the one-point tail of the lifted upper tail field.
pub fn eval_ut_tail(pt: &DensityPoint, cfg: &SeriesConfig) -> Result<EvalResult> {
    eval_series(SeriesKind::UtTail, pt, cfg)
}

/// A series frozen on the contours chosen for a center point, so that it
/// is an analytic function of `(h, x, t)` near that point. Finite
/// differences of a `PinnedSeries` are differences of one fixed quadrature
/// rule and are free of contour-switching noise.
#[derive(Debug, Clone)]
pub struct PinnedSeries {
    plan: ContourPlan,
    cfg: SeriesConfig,
}

impl PinnedSeries {
    /// The number of terms is fixed as well, to the count the early stop
    /// settles on at `center`.
    pub fn new(kind: SeriesKind, center: &DensityPoint, cfg: &SeriesConfig) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.refine = false;
        let plan = ContourPlan::new(kind, center, &cfg)?;
        cfg.n_max = eval_with_plan(&plan, center, &cfg, true)?.n_used;
        Ok(Self { plan, cfg })
    }

    pub fn eval(&self, pt: &DensityPoint) -> Result<f64> {
        Ok(eval_with_plan(&self.plan, pt, &self.cfg, false)?.value)
    }
}

/// Finite-difference step used with [`apply_d_fd`] by default.
pub fn default_fd_step(t: f64) -> f64 {
    (t / 100.0).max(1e-2)
}

/// Central-difference approximation of
/// `D = (1/12)∂_h⁴ + (1/4)∂_x² + ∂_h∂_t` applied to `func` at `pt`.
pub fn apply_d_fd<F>(func: F, pt: &DensityPoint, step: f64) -> Result<f64>
where
    F: Fn(&DensityPoint) -> Result<f64>,
{
    if !(step > 0.0) {
        return invalid(format!("finite-difference step must be positive, got {step}"));
    }
    if pt.t - 2.0 * step <= 0.0 {
        return invalid(format!(
            "t - 2·step must be positive (t = {}, step = {step})",
            pt.t
        ));
    }
    let at = |dh: f64, dx: f64, dt: f64| {
        func(&DensityPoint {
            h: pt.h + dh,
            x: pt.x + dx,
            t: pt.t + dt,
        })
    };
    let s = step;
    let f0 = at(0.0, 0.0, 0.0)?;
    let d4h = (at(2.0 * s, 0.0, 0.0)? - 4.0 * at(s, 0.0, 0.0)? + 6.0 * f0 - 4.0 * at(-s, 0.0, 0.0)?
        + at(-2.0 * s, 0.0, 0.0)?)
        / s.powi(4);
    let d2x = (at(0.0, s, 0.0)? - 2.0 * f0 + at(0.0, -s, 0.0)?) / (s * s);
    let dht = (at(s, 0.0, s)? - at(s, 0.0, -s)? - at(-s, 0.0, s)? + at(-s, 0.0, -s)?) / (4.0 * s * s);
    Ok(d4h / 12.0 + d2x / 4.0 + dht)
}
