use std::sync::OnceLock;

use semiflow::hypotheses::*;
use semiflow::inducing::{GmScheme, InducedSystem, SchemeMode};
use semiflow::mapzoo::{MapSpec, Profile, RoofSpec};
use semiflow::Error;

fn lsv_scheme(roof: RoofSpec) -> GmScheme {
    let sys = InducedSystem::new(MapSpec::lsv(0.75, 1).unwrap(), roof);
    GmScheme::build(&sys, SchemeMode::MarkovExact, 8, 1e-6).unwrap()
}

fn affine() -> &'static GmScheme {
    static S: OnceLock<GmScheme> = OnceLock::new();
    S.get_or_init(|| lsv_scheme(RoofSpec::hoelder(Profile::Affine { c0: 2.0, c1: 1.0 }, 1.0).unwrap()))
}

fn constant() -> &'static GmScheme {
    static S: OnceLock<GmScheme> = OnceLock::new();
    S.get_or_init(|| lsv_scheme(RoofSpec::constant(2.0).unwrap()))
}

fn golden_triple() -> PeriodicData {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    PeriodicData::from_periods([0.0; 3], [phi, 1.0, 0.0], [0.0; 3], 20).unwrap()
}

#[test]
fn golden_ratio_passes() {
    let pd = golden_triple();
    let rep = diophantine_check(&pd, 20, 1000).unwrap();
    assert_eq!(rep.verdict, DiophantineVerdict::PassHeuristic);
    assert!(rep.heuristic);
    assert!(rep.quotients.iter().all(|&a| a == 1), "{:?}", rep.quotients);
    assert!(rep.quotients.len() >= 20);
}

#[test]
fn rational_ratio_fails() {
    let pd = PeriodicData::from_periods([0.0; 3], [7.0, 3.0, 0.0], [0.0; 3], 20).unwrap();
    let rep = diophantine_check(&pd, 20, 1000).unwrap();
    assert_eq!(rep.verdict, DiophantineVerdict::FailRational);
    assert_eq!(rep.quotients, vec![2, 3]);
    let cf = continued_fraction(-7.0 / 3.0, 1e-15, 10);
    assert!(cf.terminated);
    let json = serde_json::to_string(&rep.verdict).unwrap();
    assert_eq!(json, "\"FAIL_RATIONAL\"");
}

#[test]
fn huge_quotient_is_inconclusive() {
    // 1 + 1e-5 + tiny: second quotient is about 1e5
    let x = 1.0 + 1.0 / (100_000.0 + (5f64).sqrt());
    let pd = PeriodicData::from_periods([0.0; 3], [x, 1.0, 0.0], [0.0; 3], 20).unwrap();
    let rep = diophantine_check(&pd, 20, 1000).unwrap();
    assert_eq!(rep.verdict, DiophantineVerdict::Inconclusive);
    assert!(diophantine_check(&pd, 5, 1000).is_err());
}

#[test]
fn equal_periods_are_degenerate() {
    assert!(matches!(PeriodicData::from_periods([0.0; 3], [2.0, 3.0, 3.0], [0.0; 3], 10), Err(Error::DegenerateRatio)));
}

#[test]
fn doubling_with_constant_roof_is_degenerate() {
    let sys = InducedSystem::new(MapSpec::doubling(), RoofSpec::constant(2.0).unwrap());
    let sc = GmScheme::build(&sys, SchemeMode::MarkovExact, 8, 1e-6).unwrap();
    let lo = sc.z_lo;
    let w = sc.z_len();
    let ids = [lo + 0.1 * w, lo + 0.5 * w, lo + 0.9 * w];
    let r = find_periodic_points(&sc, ids, 1e-12);
    assert!(matches!(r, Err(Error::DegenerateRatio)), "{r:?}");
}

#[test]
fn lsv_periodic_points() {
    let pd = find_periodic_points(affine(), [0.66, 0.8, 0.95], 1e-12).unwrap();
    for k in 0..3 {
        assert!(pd.residuals[k] < 1e-12);
        let cell = affine().cell(pd.points[k]);
        let g = affine().g_eval(&cell, pd.points[k], false);
        assert!((g.gz - pd.points[k]).abs() < 1e-12);
        assert!((g.phi - pd.periods[k]).abs() < 1e-9 * pd.periods[k]);
    }
    assert!(pd.ratio_err < 1e-10);
    // a few quotients survive the root-finding error; never a rational verdict
    assert!(pd.ratio_err < 1e-9 && pd.cf.len() >= 6, "{pd:?}");
    assert_eq!(&pd.cf[..4], &[25, 2, 1, 5]);
    let rep = diophantine_check(&pd, 10, 1000).unwrap();
    assert_ne!(rep.verdict, DiophantineVerdict::FailRational);
}

#[test]
fn constant_roof_has_zero_h3() {
    assert_eq!(h3_constant(constant(), 4000, 1).c_hat, 0.0);
    let e = h3_constant(affine(), 4000, 1);
    assert!(e.c_hat > 0.0 && e.c_hat.is_finite());
}

#[test]
fn doubling_has_zero_distortion() {
    let sys = InducedSystem::new(MapSpec::doubling(), RoofSpec::constant(2.0).unwrap());
    let sc = GmScheme::build(&sys, SchemeMode::MarkovExact, 8, 1e-6).unwrap();
    let d = Density::estimate(&sys, sc.z_lo, sc.z_hi, 10_000, 1).unwrap();
    assert!(d.at(0.5 * (sc.z_lo + sc.z_hi)) > 0.0);
    assert!(distortion_constant(&sc, &d, 4000, 2).c_hat < 1e-9);
}

#[test]
fn suprema_grow_with_sample_size() {
    let mut prev = 0.0;
    for n in [500, 1000, 2000, 4000] {
        let e = h3_constant(affine(), n, 9);
        assert!(e.c_hat >= prev, "{n}: {} < {prev}", e.c_hat);
        assert_eq!(e.pairs + e.skipped, n);
        prev = e.c_hat;
    }
}

#[test]
fn doubling_rule() {
    let s = doubling_check(10, |n| 1.0 + 1.0 / n as f64);
    assert!(s.stable && !s.diverging);
    let s = doubling_check(10, |n| n as f64);
    assert!(!s.stable && s.diverging);
}

#[test]
fn uni_cases() {
    let b = uni_lower_bound(constant(), 2, &[(0.66, 0.95)], 200).unwrap();
    assert_eq!(b.inf_abs_psi_prime, 0.0);
    let b = uni_lower_bound(affine(), 2, &[(0.66, 0.95), (0.7, 0.8)], 200).unwrap();
    assert!(b.inf_abs_psi_prime > 1e-3, "{b:?}");
    let cusp = lsv_scheme(RoofSpec::hoelder(Profile::Cusp { c0: 2.0, amp: 1.0, center: 0.8, exponent: 0.5 }, 0.5).unwrap());
    assert!(matches!(uni_lower_bound(&cusp, 1, &[(0.66, 0.95)], 50), Err(Error::NonDifferentiableRoof)));
}

#[test]
fn uni_refinement_does_not_increase() {
    let pairs = [(0.66, 0.95)];
    let mut prev = f64::INFINITY;
    for g in [25, 50, 100, 200, 400] {
        let b = uni_lower_bound(affine(), 1, &pairs, g).unwrap();
        assert!(b.inf_abs_psi_prime <= prev + 1e-12, "grid {g}: {} > {prev}", b.inf_abs_psi_prime);
        prev = b.inf_abs_psi_prime;
    }
}

#[test]
fn recurrence_levels() {
    let lm = MapSpec::logistic(4.0).unwrap();
    let roof = RoofSpec::critical_singular(Profile::Constant { value: 3.0 }, 0.5, 0.75).unwrap().with_floor(3.0).unwrap();
    let grid = [1, 2, 4, 8, 16, 32, 64];
    let tab = recurrence_statistic(&lm, &roof, 0.99, 1.0, &grid, 400_000, 5).unwrap();
    for r in &tab.rows {
        if r.n < 3 {
            assert_eq!(r.mu_level, 0.0);
            assert_eq!(r.mu_xq, 0.0);
        } else {
            assert!(r.n < 8 || r.mu_level > 0.0, "{r:?}");
            assert_eq!(r.mu_xq, r.mu_level, "n {}", r.n);
        }
        assert!(r.mu_xq <= r.mu_level && r.mu_xq <= r.mu_xq_plus);
    }
    assert!(recurrence_statistic(&lm, &roof, 1.5, 1.0, &grid, 10, 5).is_err());
}

#[test]
fn recurrence_exponent_needs_rows() {
    let lm = MapSpec::logistic(4.0).unwrap();
    let roof = RoofSpec::critical_singular(Profile::Constant { value: 1.0 }, 0.5, 0.75).unwrap();
    let tab = recurrence_statistic(&lm, &roof, 0.5, 2.0, &[1_000_000, 2_000_000], 10_000, 1).unwrap();
    assert!(matches!(recurrence_exponent(&tab), Err(Error::InsufficientHits { .. })));
}

#[test]
fn report_violation_flag() {
    let mut rep = HypothesisReport::default();
    rep.push("H3", "OK", serde_json::json!({"c": 1.0}), 10, 1);
    assert!(!rep.any_violation());
    rep.push("UNI", "VIOLATED", serde_json::json!({}), 10, 1);
    assert!(rep.any_violation());
}

#[test]
fn precision_loss_is_not_rational() {
    let cf = continued_fraction(std::f64::consts::PI, 1e-8, 30);
    assert!(cf.exhausted && !cf.terminated);
    assert_eq!(&cf.quotients[..4], &[3, 7, 15, 1]);
    let pi = std::f64::consts::PI;
    let pd = PeriodicData::with_errors([0.0; 3], [pi, 1.0, 0.0], [0.0; 3], [1e-9, 0.0, 0.0], 30).unwrap();
    assert_eq!(diophantine_check(&pd, 20, 1000).unwrap().verdict, DiophantineVerdict::Inconclusive);
}
