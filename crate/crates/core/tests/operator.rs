use std::sync::OnceLock;

use num_complex::Complex64;
use proptest::prelude::*;
use semiflow::flow::Observable;
use semiflow::inducing::InducedSystem;
use semiflow::mapzoo::{MapSpec, RoofSpec};
use semiflow::operator::*;
use semiflow::Error;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn lsv() -> InducedSystem {
    InducedSystem::new(MapSpec::lsv(0.75, 1).unwrap(), RoofSpec::constant(2.0).unwrap())
}

/// Shared 2000-bin LSV operator.
fn big() -> &'static UlamOperator {
    static OP: OnceLock<UlamOperator> = OnceLock::new();
    OP.get_or_init(|| build_ulam(&lsv(), 2000, 1000, 7).unwrap())
}

/// Small operator for the dense checks.
fn small() -> &'static UlamOperator {
    static OP: OnceLock<UlamOperator> = OnceLock::new();
    OP.get_or_init(|| build_ulam(&lsv(), 300, 400, 3).unwrap())
}

fn sup(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn doubling_rows_split_in_half() {
    let sys = InducedSystem::new(MapSpec::doubling(), RoofSpec::constant(2.0).unwrap());
    let opts = UlamOptions { geometric: false, ..Default::default() };
    let op = build_ulam_with(&sys, 64, 4000, 1, &opts).unwrap();
    for i in 0..op.n_bins() {
        let row: Vec<(usize, f64)> = op.row(i).collect();
        assert_eq!(row.len(), 2, "row {i}: {row:?}");
        for (_, p) in row {
            assert!((p - 0.5).abs() < 0.05);
        }
    }
}

#[test]
fn single_bin() {
    let op = build_ulam(&lsv(), 1, 500, 1).unwrap();
    assert_eq!(op.n_bins(), 1);
    assert_eq!(op.row(0).collect::<Vec<_>>(), vec![(0, 1.0)]);
}

#[test]
fn rows_are_stochastic_and_mu_stationary() {
    let op = big();
    for i in 0..op.n_bins() {
        assert!((op.row_sum(i) - 1.0).abs() < 1e-12);
    }
    assert!(op.stationarity_residual() < 5.0 / (op.n_mc as f64).sqrt());
}

#[test]
fn unit_eigenvalue_at_zero() {
    let op = big();
    let sd = op.leading_eig(c(0.0, 0.0), 1e-13, 5000).unwrap();
    assert!((sd.lambda - 1.0).norm() < 1e-10);
    assert!(sd.zeta.iter().all(|z| (z - 1.0).norm() < 1e-6));
    assert_eq!(chi_term(op, &sd), c(0.0, 0.0));
}

#[test]
fn twisted_apply_basics() {
    let op = big();
    let ones = vec![c(1.0, 0.0); op.n_bins()];
    assert!(op.twisted_apply(c(0.0, 0.0), &ones).iter().all(|z| (z - 1.0).norm() < 1e-12));
    assert!(op.twisted_apply(c(0.3, 0.0), &ones).iter().all(|z| z.im == 0.0 && z.re >= 0.0 && z.re < 1.0));
    assert!(sup(&op.twisted_apply(c(0.0, 0.1), &ones)) <= 1.0 + 1e-12);
}

#[test]
fn real_s_gives_real_eigenvalue_in_unit_interval() {
    let sd = big().leading_eig(c(0.1, 0.0), 1e-12, 5000).unwrap();
    assert!(sd.lambda.im.abs() < 1e-12 && sd.lambda.re > 0.0 && sd.lambda.re < 1.0);
}

#[test]
fn identity_modulus_and_conjugation() {
    let op = big();
    for b in [1e-3, 1e-2, 5e-2, 0.2] {
        let p = op.leading_eig(c(0.0, b), 1e-12, 20_000).unwrap();
        let m = op.leading_eig(c(0.0, -b), 1e-12, 20_000).unwrap();
        assert!(p.lambda.norm() <= 1.0 + 1e-12);
        let gap = (p.lambda - op.laplace_tau(p.s) - chi_term(op, &p)).norm();
        assert!(gap <= 10.0 * p.residual.max(1e-14), "b {b}: {gap} vs {}", p.residual);
        let tol = 10.0 * (p.residual + m.residual).max(1e-13);
        assert!((p.lambda - m.lambda.conj()).norm() < tol);
        let dz = p.zeta.iter().zip(&m.zeta).map(|(a, b)| (a - b.conj()).norm()).fold(0.0, f64::max);
        assert!(dz < 1e3 * tol, "{dz}");
    }
}

#[test]
fn resolvent_residual_and_neumann() {
    let op = small();
    let n = op.n_bins();
    let v: Vec<Complex64> = (0..n).map(|i| c((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
    for s in [c(0.0, 0.05), c(0.2, 1.0)] {
        let x = op.resolvent_apply(s, &v).unwrap();
        let rx = op.twisted_apply(s, &x);
        let res = x.iter().zip(&rx).zip(&v).map(|((a, b), c)| (a - b - c).norm()).fold(0.0, f64::max);
        assert!(res < 1e-10 * sup(&v).max(sup(&x)), "{res}");
        let g = op.solve_gmres(s, &v, 1e-13, 60, 200).unwrap();
        let d = g.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(d < 1e-8 * sup(&x), "{d}");
    }
    // Neumann series at Re s = 5
    let s = c(5.0, 0.3);
    let x = op.resolvent_apply(s, &v).unwrap();
    let mut term = v.clone();
    let mut acc = v.clone();
    for _ in 0..200 {
        term = op.twisted_apply(s, &term);
        acc.iter_mut().zip(&term).for_each(|(a, t)| *a += t);
    }
    let d = acc.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(d < 1e-8, "{d}");
    assert!(matches!(op.resolvent_apply(c(0.0, 0.0), &v), Err(Error::NearSingular(_))));
}

#[test]
fn synthetic_eigencurve_exponent() {
    let grid = geom_grid(1e-3, 5e-2, 12);
    let fit = eigen_exponent_fit_with(&grid, |b| Ok(c(1.0, 0.0) - c(b.powf(0.75), 0.0))).unwrap();
    assert!((fit.beta_hat - 0.75).abs() < 1e-3);
}

#[test]
fn rho_hat_zero_observable_and_small_b_growth() {
    let op = big();
    let v = Observable::fiber_bump(1.0);
    assert_eq!(rho_hat_small_b(op, &Observable::zero(), &v, c(0.0, 0.01)).unwrap(), c(0.0, 0.0));
    let grid = geom_grid(1e-3, 1e-1, 10);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &b in &grid {
        let r = rho_hat_small_b(op, &v, &v, c(0.0, b)).unwrap();
        xs.push(b.ln());
        ys.push(r.norm().ln());
    }
    let fit = semiflow::numerics::ols(&xs, &ys);
    assert!((fit.slope + 0.75).abs() < 0.1, "slope {}", fit.slope);
}

#[test]
fn container_round_trip() {
    let op = small();
    let back = UlamOperator::from_bytes(&op.to_bytes()).unwrap();
    assert_eq!(back.indptr, op.indptr);
    assert_eq!(back.indices, op.indices);
    assert_eq!(back.values, op.values);
    assert_eq!(back.tau_bin, op.tau_bin);
    assert_eq!(back.mu_bin, op.mu_bin);
    assert_eq!((back.seed, back.map_hash), (op.seed, op.map_hash));
    assert!(UlamOperator::from_bytes(b"not an operator").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn twist_is_a_contraction(b in -2.0f64..2.0, a in 0.0f64..1.0, seed in 0u64..1000) {
        let op = small();
        let v: Vec<Complex64> = (0..op.n_bins()).map(|i| {
            let t = (i as u64 * 2654435761 + seed) as f64;
            c(t.sin(), t.cos())
        }).collect();
        let r = op.twisted_apply(c(a, b), &v);
        prop_assert!(sup(&r) <= sup(&v) * (1.0 + 1e-12));
    }
}
