//! Property tests of the density series and the contour machinery.

use geodensity::density::{eval_p, eval_p_hat, DensityPoint, SeriesConfig};
use geodensity::quadrature::{build_wedge, integrate_tensor, ContourSpec};
use geodensity::Complex64;
use proptest::prelude::*;

fn cheap() -> SeriesConfig {
    SeriesConfig { n_max: 2, nodes_per_leg: 16, refine: false, ..SeriesConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn series_is_real(h in -2.0..4.0f64, x in -3.0..3.0f64, t in prop::sample::select(vec![0.5, 1.0, 2.0])) {
        let r = eval_p(&DensityPoint::new(h, x, t).unwrap(), &cheap()).unwrap();
        prop_assert!(r.imag().abs() <= 1e-6 * r.value.abs().max(1e-300) + 1e-14, "im {} re {}", r.imag(), r.value);
    }

    #[test]
    fn density_nonnegative(h in -2.0..4.0f64, x in -3.0..3.0f64, t in prop::sample::select(vec![0.5, 1.0, 2.0])) {
        let pt = DensityPoint::new(h, x, t).unwrap();
        let p = eval_p(&pt, &cheap()).unwrap();
        let q = eval_p_hat(&pt, &cheap()).unwrap();
        prop_assert!(p.value >= -p.err_estimate - 1e-12);
        prop_assert!(q.value >= -q.err_estimate - 1e-12);
    }

    #[test]
    fn x_reflection(h in -1.0..3.0f64, x in 0.1..2.5f64) {
        let a = eval_p(&DensityPoint::new(h, x, 1.0).unwrap(), &cheap()).unwrap();
        let b = eval_p(&DensityPoint::new(h, -x, 1.0).unwrap(), &cheap()).unwrap();
        prop_assert!((a.value - b.value).abs() <= a.err_estimate + b.err_estimate + 1e-12);
    }

    #[test]
    fn reversal_negates(anchor in 0.2..0.9f64, a in -1.0..1.0f64, b in -1.0..1.0f64) {
        let c = build_wedge(&ContourSpec::right_wedge(anchor, 4.0, 12)).unwrap();
        let f = |v: Complex64| (v * v * v / 3.0 - a * v).exp() * (1.0 + b * v);
        prop_assert_eq!(c.reversed().integrate(f), -c.integrate(f));
    }
}

#[test]
fn left_anchor_invariance() {
    // f(v) = e^{-v³/3 + v}/(v - 1) decays along Γ_L; its only pole is right of both anchors.
    let f = |v: &[Complex64]| (-v[0] * v[0] * v[0] / 3.0 + v[0]).exp() / (v[0] - 1.0);
    let at = |anchor: f64| {
        let c = build_wedge(&ContourSpec::left_wedge(anchor, 6.0, 32)).unwrap();
        integrate_tensor(f, &[c]).unwrap().value
    };
    let (a, b) = (at(-0.5), at(-0.3));
    assert!((a - b).norm() < 1e-10, "{a} vs {b}");
}

#[test]
fn node_doubling_within_estimate() {
    let pt = DensityPoint::new(0.5, 0.5, 1.0).unwrap();
    let coarse = SeriesConfig { nodes_per_leg: 16, ..SeriesConfig::default() };
    let fine = SeriesConfig { nodes_per_leg: 32, ..SeriesConfig::default() };
    let a = eval_p(&pt, &coarse).unwrap();
    let b = eval_p(&pt, &fine).unwrap();
    assert!((a.value - b.value).abs() <= a.err_estimate, "{} vs {} err {}", a.value, b.value, a.err_estimate);
}

#[test]
fn thread_count_does_not_change_bits() {
    let pt = DensityPoint::new(-0.5, 1.0, 1.0).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| eval_p_hat(&pt, &cheap()).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.terms, b.terms);
}
