//! Numerical checks of the identities the densities satisfy, grouped into
//! suites of increasing cost.
//!
//! Every check records what it measured, the tolerance it was held to and
//! whether it passed. [`Report::lines`] renders the results without
//! timings, so two runs of a suite produce identical logs.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    gaussian_limit_ref, log_gue_tail_asymp, mass_estimate, tail_approx_h, tail_approx_h_hat,
    tail_approx_x, tail_approx_x_hat,
};
use crate::density::{
    apply_d_fd, default_fd_step, eval_p, eval_p_hat, eval_series, DensityPoint, PinnedSeries,
    SeriesConfig, SeriesKind,
};
use crate::error::{invalid, Error, Result};
use crate::kernels::{cauchy_det, h_poly};
use crate::prelimit::{
    eval_kpz_two_point_tail, one_point_tail_asymp, scaled_density_ratio, PrelimitContours,
    PrelimitPoint,
};
use crate::quadrature::{build_wedge, choose_truncation_radius, gauss_legendre_nodes, ContourSpec};

/// Which group of checks to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    /// Kernel identities, symmetry, tails, the derivative identity and the
    /// upper-tail-field connection.
    Fast,
    /// Adds the convolution identity, the large-time limit and the
    /// normalization.
    Full,
    /// Adds the pre-limit ratio sequence and the two-point tail limit.
    Slow,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Suite::Fast),
            "full" => Ok(Suite::Full),
            "slow" => Ok(Suite::Slow),
            _ => Err(Error::InvalidArgument(format!(
                "unknown suite {s:?}, expected fast, full or slow"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Fast => "fast",
            Suite::Full => "full",
            Suite::Slow => "slow",
        })
    }
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    /// Acceptance criterion the check belongs to, if any.
    pub criterion: Option<u8>,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn below(id: &str, criterion: Option<u8>, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            id: id.to_string(),
            criterion,
            measured,
            tolerance,
            passed: measured < tolerance,
            detail,
        }
    }

    /// `PASS`/`FAIL`, id, measured and tolerance on one line.
    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let mut s = format!(
            "{verdict} {} measured={:.6e} tol={:.3e}",
            self.id, self.measured, self.tolerance
        );
        if !self.detail.is_empty() {
            s.push(' ');
            s.push_str(&self.detail);
        }
        s
    }
}

/// All checks of one suite run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![format!("suite {}", self.suite)];
        out.extend(self.checks.iter().map(Check::line));
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        out.push(format!("{} checks, {failed} failed", self.checks.len()));
        out
    }

    /// Checks belonging to an acceptance criterion.
    pub fn criterion(&self, k: u8) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.criterion == Some(k)).collect()
    }
}

/// Relative difference; NaN becomes infinity so that `f64::max` cannot drop it.
fn rel(a: f64, b: f64) -> f64 {
    let r = (a - b).abs() / b.abs();
    if r.is_nan() {
        f64::INFINITY
    } else {
        r
    }
}

/// `Ai(x)` from its Maclaurin series; accurate for `|x| ≲ 3`.
pub fn airy_ai_series(x: f64) -> f64 {
    const C1: f64 = 0.355_028_053_887_817_2;
    const C2: f64 = 0.258_819_403_792_806_8;
    let x3 = x * x * x;
    let (mut f, mut g) = (1.0, x);
    let (mut tf, mut tg) = (1.0, x);
    for k in 1..200 {
        let k = k as f64;
        tf *= x3 / ((3.0 * k - 1.0) * (3.0 * k));
        tg *= x3 / ((3.0 * k) * (3.0 * k + 1.0));
        f += tf;
        g += tg;
        if tf.abs() < 1e-18 * f.abs() && tg.abs() < 1e-18 * g.abs().max(1e-300) {
            break;
        }
    }
    C1 * f - C2 * g
}

/// `(1/2πi)∫_{Γ_R} e^{v³/3 - hv} dv`, which equals `Ai(h)`. The contour
/// weights carry the `1/2πi`.
pub fn airy_contour(h: f64, anchor: f64, nodes_per_leg: usize) -> Result<f64> {
    let radius = choose_truncation_radius(1.0, h, 0.0, 1e-16)?.min(5.0);
    let spec = ContourSpec::right_wedge(anchor, radius, nodes_per_leg).with_inner_panel(0.5);
    Ok(build_wedge(&spec)?.integrate(|v| (v * v * v / 3.0 - h * v).exp()).re)
}

/// Criterion 1: the Airy integral on `Γ_R` against its power series.
pub fn check_airy() -> Result<Vec<Check>> {
    let mut worst: f64 = 0.0;
    for h in [0.0, 1.0, 2.0] {
        worst = worst.max(rel(airy_contour(h, 0.5, 64)?, airy_ai_series(h)));
    }
    Ok(vec![Check::below("airy-contour", Some(1), worst, 1e-10, "h=0,1,2".into())])
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det_elimination(mut a: Vec<Vec<Complex64>>) -> Complex64 {
    let n = a.len();
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm()))
            .unwrap_or(col);
        if piv != col {
            a.swap(piv, col);
            det = -det;
        }
        let p = a[col][col];
        det *= p;
        for r in col + 1..n {
            let f = a[r][col] / p;
            for k in col..n {
                let v = a[col][k];
                a[r][k] -= f * v;
            }
        }
    }
    det
}

fn random_point(rng: &mut ChaCha8Rng, r: f64) -> Complex64 {
    loop {
        let z = Complex64::new(rng.gen_range(-r..r), rng.gen_range(-r..r));
        if z.norm() < r {
            return z;
        }
    }
}

/// Criterion 2: product formula of the Cauchy determinant against
/// elimination on 200 random instances with `n ≤ 6`.
pub fn check_cauchy() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let n = 1 + k % 6;
        let w: Vec<Complex64> = (0..n).map(|_| random_point(&mut rng, 2.0)).collect();
        let wp: Vec<Complex64> = (0..n).map(|_| random_point(&mut rng, 2.0)).collect();
        let m: Vec<Vec<Complex64>> = w.iter().map(|&a| wp.iter().map(|&b| 1.0 / (a - b)).collect()).collect();
        let brute = det_elimination(m);
        worst = worst.max((cauchy_det(&w, &wp)? - brute).norm() / brute.norm());
    }
    Ok(vec![Check::below("cauchy-product", Some(2), worst, 1e-10, "200 instances".into())])
}

/// Criterion 3: `H(u,1;v,-1) = 2(1-v)(1+u)(u-v)` and
/// `H(u,-1,1;v,1,-1) = H(u;v) = 0` on 1000 samples in the bidisk of radius 2.
pub fn check_h_identities() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let one = Complex64::new(1.0, 0.0);
    let (mut first, mut second): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let u = random_point(&mut rng, 2.0);
        let v = random_point(&mut rng, 2.0);
        let lhs = h_poly(&[u, one], &[v, -one]);
        let rhs = 2.0 * (one - v) * (one + u) * (u - v);
        first = first.max((lhs - rhs).norm() / rhs.norm().max(1.0));
        let a = h_poly(&[u, -one, one], &[v, one, -one]);
        let b = h_poly(&[u], &[v]);
        second = second.max(a.norm().max(b.norm()) / (1.0 + u.norm() + v.norm()).powi(4));
    }
    Ok(vec![
        Check::below("h-identity-product", Some(3), first, 1e-12, "1000 samples".into()),
        Check::below("h-identity-zero", Some(3), second, 1e-12, "1000 samples".into()),
    ])
}

fn point(h: f64, x: f64, t: f64) -> Result<DensityPoint> {
    DensityPoint::new(h, x, t)
}

/// Criterion 4: `p(h,x;1) = p(h,-x;1)` on a 5×5 grid, measured in units of
/// the combined error estimates; same for `p̂`.
pub fn check_x_symmetry(cfg: &SeriesConfig) -> Result<Vec<Check>> {
    let hs = [-1.0, -0.5, 0.5, 1.5, 3.0];
    let xs = [0.25, 0.5, 1.0, 1.5, 2.0];
    let mut out = Vec::new();
    for kind in [SeriesKind::P, SeriesKind::PHat] {
        let grid: Vec<(f64, f64)> = hs.iter().flat_map(|&h| xs.iter().map(move |&x| (h, x))).collect();
        let ratios: Vec<f64> = grid
            .par_iter()
            .map(|&(h, x)| {
                let a = eval_series(kind, &point(h, x, 1.0)?, cfg)?;
                let b = eval_series(kind, &point(h, -x, 1.0)?, cfg)?;
                let err = (a.err_estimate + b.err_estimate).max(f64::MIN_POSITIVE);
                Ok((a.value - b.value).abs() / err)
            })
            .collect::<Result<_>>()?;
        let worst = ratios.iter().copied().fold(0.0, f64::max);
        out.push(Check::below(
            &format!("x-symmetry-{}", kind.label()),
            Some(4),
            worst,
            1.0,
            "max |diff|/err over 5x5 grid".into(),
        ));
    }
    Ok(out)
}

/// `∫_0^∞ p(h'+h, x; t) 2e^{-2h'} dh'` by composite Gauss–Legendre on unit
/// panels up to where `p` is negligible.
pub fn convolve_p(h: f64, x: f64, t: f64, cfg: &SeriesConfig) -> Result<f64> {
    let mut top = t.max(1.0);
    while tail_approx_h(top, x, t).unwrap_or(1.0) > 1e-12 {
        top += 0.25;
    }
    let panels = (top - h).ceil().max(1.0) as usize;
    let (gx, gw) = gauss_legendre_nodes(6)?;
    let nodes: Vec<(f64, f64)> = (0..panels)
        .flat_map(|k| gx.iter().zip(&gw).map(move |(&a, &w)| (k as f64 + a, w)))
        .collect();
    let vals: Vec<f64> = nodes
        .par_iter()
        .map(|&(s, w)| Ok(eval_p(&point(h + s, x, t)?, cfg)?.value * 2.0 * (-2.0 * s).exp() * w))
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum())
}

/// Criterion 5: `p̂(h,x;t) = ∫_0^∞ p(h'+h,x;t) 2e^{-2h'} dh'`.
pub fn check_convolution(cfg: &SeriesConfig) -> Result<Vec<Check>> {
    let pts = [
        (-0.5, 0.0, 1.0),
        (0.5, 1.0, 1.0),
        (2.0, 0.0, 1.0),
        (-0.5, 1.0, 0.5),
        (0.5, 0.0, 0.5),
        (2.0, 1.0, 0.5),
    ];
    let mut worst: f64 = 0.0;
    for (h, x, t) in pts {
        let direct = eval_p_hat(&point(h, x, t)?, cfg)?.value;
        worst = worst.max(rel(convolve_p(h, x, t, &quick_config(cfg))?, direct));
    }
    Ok(vec![Check::below("convolution", Some(5), worst, 1e-3, "6 points".into())])
}

/// Criterion 6: `p = p̂ - (1/2)∂_h p̂`, the expanded form of
/// `p = -e^{2h} ∂_h((1/2)e^{-2h} p̂)`, by fourth-order central differences.
pub fn check_derivative(cfg: &SeriesConfig) -> Result<Vec<Check>> {
    let pts = [(0.0, 0.0, 1.0), (0.5, 0.5, 1.0), (1.0, 0.0, 0.5), (-0.5, 1.0, 1.0)];
    let mut worst: f64 = 0.0;
    for (h, x, t) in pts {
        let center = point(h, x, t)?;
        let phat = PinnedSeries::new(SeriesKind::PHat, &center, &quick_config(cfg))?;
        let d = 1e-2;
        let at = |dh: f64| phat.eval(&point(h + dh, x, t)?);
        let dh = (-at(2.0 * d)? + 8.0 * at(d)? - 8.0 * at(-d)? + at(-2.0 * d)?) / (12.0 * d);
        let lhs = at(0.0)? - 0.5 * dh;
        worst = worst.max(rel(lhs, eval_p(&center, cfg)?.value));
    }
    Ok(vec![Check::below("derivative-identity", Some(6), worst, 1e-2, "4 points".into())])
}

/// Largest relative deviation of `(t/2)p(t + h√t, x√t/2; t)` from
/// `φ(h)φ(x)` over `(h, x) ∈ {0, ±1}²`.
pub fn gaussian_limit_error(t: f64, cfg: &SeriesConfig) -> Result<f64> {
    let grid: Vec<(f64, f64)> = [-1.0, 0.0, 1.0]
        .iter()
        .flat_map(|&h| [-1.0, 0.0, 1.0].into_iter().map(move |x| (h, x)))
        .collect();
    let errs: Vec<f64> = grid
        .par_iter()
        .map(|&(h, x)| {
            let p = eval_p(&point(t + h * t.sqrt(), 0.5 * x * t.sqrt(), t)?, cfg)?.value;
            Ok(rel(0.5 * t * p, gaussian_limit_ref(h, x)))
        })
        .collect::<Result<_>>()?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

/// Criterion 7: the Gaussian large-time limit at `t = 40`, improving on `t = 10`.
pub fn check_gaussian_limit(cfg: &SeriesConfig) -> Result<Vec<Check>> {
    let e40 = gaussian_limit_error(40.0, cfg)?;
    let e10 = gaussian_limit_error(10.0, cfg)?;
    Ok(vec![
        Check::below("gaussian-limit-t40", Some(7), e40, 0.1, "max over {0,±1}^2".into()),
        Check::below("gaussian-limit-improves", Some(7), e40, e10, "error at t=40 vs t=10".into()),
    ])
}

fn ratio_check(id: &str, ratio: f64) -> Check {
    Check {
        id: id.to_string(),
        criterion: Some(8),
        measured: ratio,
        tolerance: 0.2,
        passed: (ratio - 1.0).abs() <= 0.2,
        detail: "ratio within [0.8, 1.2]".into(),
    }
}

/// Criterion 8: right-tail approximations of `p` and `p̂`.
pub fn check_tails(cfg: &SeriesConfig) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for kind in [SeriesKind::P, SeriesKind::PHat] {
        let label = kind.label();
        let value = |h: f64, x: f64| -> Result<f64> { Ok(eval_series(kind, &point(h, x, 1.0)?, cfg)?.value) };
        let (approx_h, approx_x): (fn(f64, f64, f64) -> Result<f64>, fn(f64, f64, f64) -> Result<f64>) =
            match kind {
                SeriesKind::P => (tail_approx_h, tail_approx_x),
                _ => (tail_approx_h_hat, tail_approx_x_hat),
            };
        let r8 = value(8.0, 0.0)? / approx_h(8.0, 0.0, 1.0)?;
        let r12 = value(12.0, 0.0)? / approx_h(12.0, 0.0, 1.0)?;
        let rx = value(0.0, 6.0)? / approx_x(0.0, 6.0, 1.0)?;
        out.push(ratio_check(&format!("tail-h8-{label}"), r8));
        out.push(Check::below(
            &format!("tail-h12-closer-{label}"),
            Some(8),
            (r12 - 1.0).abs(),
            (r8 - 1.0).abs(),
            format!("ratio at h=12 is {r12:.6}"),
        ));
        out.push(ratio_check(&format!("tail-x6-{label}"), rx));
    }
    Ok(out)
}

/// Criterion 9: total mass of `p` and `p̂` at `t = 1`.
pub fn check_normalization(cfg: &SeriesConfig) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (hat, tol, id) in [(false, 1e-2, "mass-p"), (true, 2e-2, "mass-phat")] {
        let m = mass_estimate(1.0, cfg, hat)?;
        out.push(Check::below(
            id,
            Some(9),
            (m.mass - 1.0).abs(),
            tol,
            format!(
                "mass={:.6} h=[{:.2},{:.2}] |x|<={:.1} edge_strip={:.2e}",
                m.mass, m.h_range.0, m.h_range.1, m.x_max, m.boundary_strip
            ),
        ));
    }
    Ok(out)
}

/// Criterion 10: `p = -D P(H^UT(x,-t) ≥ -h)` with `D` by finite differences.
pub fn check_ut_connection(cfg: &SeriesConfig) -> Result<Vec<Check>> {
    let center = point(0.5, 0.5, 1.0)?;
    // Fourth differences amplify quadrature noise, so the tail is computed
    // at a tighter truncation than the density it is compared with.
    let tight = SeriesConfig {
        eps_quad: cfg.eps_quad / 100.0,
        ..cfg.clone()
    };
    let ut = PinnedSeries::new(SeriesKind::UtTail, &center, &tight)?;
    let d = apply_d_fd(|q| ut.eval(q), &center, default_fd_step(center.t))?;
    let p = eval_p(&center, cfg)?.value;
    Ok(vec![Check::below("ut-connection", Some(10), rel(-d, p), 1e-2, "(h,x,t)=(0.5,0.5,1)".into())])
}

/// Criterion 11: `(1-F)(L + yL^{-1/2}) / (1-F)(L) → e^{-2y}` at `L = 100`.
pub fn check_gue_ratio() -> Result<Vec<Check>> {
    let l: f64 = 100.0;
    let mut worst: f64 = 0.0;
    for y in [0.5, 1.0] {
        let r = (log_gue_tail_asymp(l + y / l.sqrt())? - log_gue_tail_asymp(l)?).exp();
        worst = worst.max(rel(r, (-2.0 * y).exp()));
    }
    Ok(vec![Check::below("gue-tail-ratio", Some(11), worst, 2e-2, "L=100, y=0.5,1".into())])
}

/// Scales at which the pre-limit ratio is compared with `p`.
pub const PRELIMIT_SCALES: [f64; 3] = [16.0, 25.0, 36.0];
/// Nodes per leg of the pre-limit contours.
pub const PRELIMIT_NODES: usize = 24;

/// Relative gaps `|ratio(L) - p| / p` at `(0.5, 0, 1)` for `n = n' = 1`.
pub fn prelimit_gaps(cfg: &SeriesConfig) -> Result<Vec<(f64, f64, f64)>> {
    let (h, x, t) = (0.5, 0.0, 1.0);
    let p = eval_p(&point(h, x, t)?, cfg)?.value;
    PRELIMIT_SCALES
        .iter()
        .map(|&l| {
            let r = scaled_density_ratio(h, x, t, l, 1, PRELIMIT_NODES)?;
            Ok((l, r, rel(r, p)))
        })
        .collect()
}

/// Criterion 12: the gap between the scaled pre-limit ratio and `p`
/// shrinks strictly along `L = 16, 25, 36`.
pub fn check_prelimit(cfg: &SeriesConfig) -> Result<Vec<Check>> {
    let gaps = prelimit_gaps(cfg)?;
    let mut out = Vec::new();
    for w in gaps.windows(2) {
        let ((l0, _, g0), (l1, r1, g1)) = (w[0], w[1]);
        out.push(Check::below(
            &format!("prelimit-gap-L{l1}"),
            Some(12),
            g1,
            g0,
            format!("ratio={r1:.9} tolerance is the gap at L={l0}"),
        ));
    }
    Ok(out)
}

/// The two-point tail far below in its second argument, against the
/// one-point GUE tail of `H(-α, 1-τ)`.
pub fn check_kpz_one_point() -> Result<Vec<Check>> {
    let (b1, b2, a, tau) = (-8.0, 3.0, 0.0, 0.5);
    let pt = PrelimitPoint::new(b1, b2, a, tau)?;
    let cs = PrelimitContours::standard(&pt, 16)?;
    let v = eval_kpz_two_point_tail(b1, b2, a, tau, 1, &cs)?;
    let one = one_point_tail_asymp(b2, a, 1.0 - tau)?;
    Ok(vec![Check::below(
        "kpz-one-point-limit",
        None,
        rel(v, one),
        0.2,
        format!("b1={b1} b2={b2} tail={v:.6e} one_point={one:.6e}"),
    )])
}

/// Configuration for checks that integrate the density numerically: many
/// evaluations, each needed only to about `1e-6`.
pub fn quick_config(cfg: &SeriesConfig) -> SeriesConfig {
    SeriesConfig {
        nodes_per_leg: cfg.nodes_per_leg.min(24),
        refine: false,
        ..cfg.clone()
    }
}

/// Configuration for the mass estimates, whose tolerance is at the percent
/// level.
pub fn mass_config(cfg: &SeriesConfig) -> SeriesConfig {
    SeriesConfig {
        nodes_per_leg: cfg.nodes_per_leg.min(16),
        refine: false,
        ..cfg.clone()
    }
}

/// Runs every check of `suite`.
pub fn run_suite(suite: Suite, cfg: &SeriesConfig) -> Result<Report> {
    cfg.validate()?;
    let mut checks = Vec::new();
    checks.extend(check_airy()?);
    checks.extend(check_cauchy()?);
    checks.extend(check_h_identities()?);
    checks.extend(check_x_symmetry(cfg)?);
    if suite != Suite::Fast {
        checks.extend(check_convolution(cfg)?);
    }
    checks.extend(check_derivative(cfg)?);
    if suite != Suite::Fast {
        checks.extend(check_gaussian_limit(cfg)?);
    }
    checks.extend(check_tails(cfg)?);
    if suite != Suite::Fast {
        checks.extend(check_normalization(&mass_config(cfg))?);
    }
    checks.extend(check_ut_connection(cfg)?);
    checks.extend(check_gue_ratio()?);
    if suite == Suite::Slow {
        checks.extend(check_prelimit(cfg)?);
        checks.extend(check_kpz_one_point()?);
    }
    for c in &checks {
        if !c.measured.is_finite() {
            return Err(Error::NonFinite(format!("check {} measured {}", c.id, c.measured)));
        }
    }
    Ok(Report { suite, checks })
}

/// Parses a suite name, for callers holding a string.
pub fn parse_suite(s: &str) -> Result<Suite> {
    if s.is_empty() {
        return invalid("empty suite name");
    }
    s.parse()
}
