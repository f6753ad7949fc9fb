//! Algebraic building blocks shared by all integrands.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

/// Magnitude window outside of which [`cauchy_det`] switches to
/// log-magnitude accumulation.
const DYNAMIC_RANGE: (f64, f64) = (1e-150, 1e150);

/// Relative tolerance for declaring `w_i = w'_j`.
const COINCIDENCE_TOL: f64 = 1e-13;

/// `a ⊔ b`: the entries of `a` followed by the entries of `b`.
pub fn vec_concat(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// Cauchy determinant `det[1/(w_i - w'_j)]` through its product formula
///
/// ```text
/// (-1)^{n(n-1)/2} Π_{i<j} (w_i - w_j)(w'_i - w'_j) / Π_{i,j} (w_i - w'_j)
/// ```
pub fn cauchy_det(w: &[Complex64], wp: &[Complex64]) -> Result<Complex64> {
    let n = w.len();
    if n != wp.len() {
        return invalid(format!(
            "Cauchy determinant needs vectors of equal length, got {} and {}",
            n,
            wp.len()
        ));
    }
    if n == 0 {
        return invalid("Cauchy determinant of empty vectors");
    }
    let mut factors: Vec<(Complex64, bool)> = Vec::with_capacity(n * n + n * (n - 1));
    for (i, &wi) in w.iter().enumerate() {
        for &wj in wp {
            let d = wi - wj;
            if d.norm() < COINCIDENCE_TOL * (1.0 + wi.norm()) {
                return Err(Error::Singularity(format!(
                    "Cauchy determinant pole: w = {wi} coincides with w' = {wj}"
                )));
            }
            factors.push((d, false));
        }
        for j in i + 1..n {
            factors.push((wi - w[j], true));
            factors.push((wp[i] - wp[j], true));
        }
    }
    let sign = if (n * (n - 1) / 2) % 2 == 0 { 1.0 } else { -1.0 };

    let mut direct = Complex64::new(sign, 0.0);
    let mut in_range = true;
    for &(f, numerator) in &factors {
        direct = if numerator { direct * f } else { direct / f };
        let m = direct.norm();
        if !(m > DYNAMIC_RANGE.0 && m < DYNAMIC_RANGE.1) {
            in_range = false;
            break;
        }
    }
    if in_range {
        return Ok(direct);
    }
    // Log-magnitude + phase accumulation.
    let mut log_mag = 0.0;
    let mut phase = if sign > 0.0 { 0.0 } else { std::f64::consts::PI };
    for &(f, numerator) in &factors {
        let (r, th) = f.to_polar();
        if numerator {
            log_mag += r.ln();
            phase += th;
        } else {
            log_mag -= r.ln();
            phase -= th;
        }
    }
    Ok(Complex64::from_polar(log_mag.exp(), phase))
}

/// Power-sum difference `Σ w_i^k - Σ (w'_i)^k` for `k ∈ {1, 2, 3}`.
pub fn s_k(w: &[Complex64], wp: &[Complex64], k: u32) -> Result<Complex64> {
    if !(1..=3).contains(&k) {
        return invalid(format!("power sums are defined for k in 1..=3, got {k}"));
    }
    let k = k as i32;
    let a: Complex64 = w.iter().map(|z| z.powi(k)).sum();
    let b: Complex64 = wp.iter().map(|z| z.powi(k)).sum();
    Ok(a - b)
}

/// `H = S_1⁴/12 + S_2²/4 - S_1 S_3/3`.
pub fn h_poly(w: &[Complex64], wp: &[Complex64]) -> Complex64 {
    let (s1, s2, s3) = power_sum_diffs(w, wp);
    h_from_sums(s1, s2, s3)
}

/// `(S_1, S_2, S_3)` in one pass.
pub fn power_sum_diffs(w: &[Complex64], wp: &[Complex64]) -> (Complex64, Complex64, Complex64) {
    let mut s = [Complex64::new(0.0, 0.0); 3];
    for &z in w {
        let z2 = z * z;
        s[0] += z;
        s[1] += z2;
        s[2] += z2 * z;
    }
    for &z in wp {
        let z2 = z * z;
        s[0] -= z;
        s[1] -= z2;
        s[2] -= z2 * z;
    }
    (s[0], s[1], s[2])
}

/// The quartic `H` written in terms of the three power-sum differences.
#[inline]
pub fn h_from_sums(s1: Complex64, s2: Complex64, s3: Complex64) -> Complex64 {
    let s1sq = s1 * s1;
    s1sq * s1sq / 12.0 + s2 * s2 / 4.0 - s1 * s3 / 3.0
}

/// Exponent of `f_{h,x;t}(w) = exp(-t w³/3 + x w² + h w)`.
///
/// Callers sum exponents and exponentiate once; individual `f` values
/// overflow for the parameter ranges of interest.
#[inline]
pub fn log_f(h: f64, x: f64, t: f64, w: Complex64) -> Complex64 {
    let w2 = w * w;
    -t / 3.0 * w2 * w + x * w2 + h * w
}
