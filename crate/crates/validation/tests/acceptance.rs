//! Acceptance checks 1-9. Each test prints one `PASS`/`FAIL` line with the
//! measured values, then asserts.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semiflow::flow::*;
use semiflow::harness::{run_config, Config};
use semiflow::hypotheses::*;
use semiflow::inducing::{default_tail_window, tail_fit, GmScheme, InducedSystem, SchemeMode};
use semiflow::mapzoo::{MapSpec, Profile, RoofSpec};
use semiflow::operator::*;
use semiflow::renewal::*;
use semiflow_validation::{report, two_term_fit};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn affine() -> RoofSpec {
    RoofSpec::hoelder(Profile::Affine { c0: 2.0, c1: 1.0 }, 1.0).unwrap()
}

fn lsv_tau2() -> InducedSystem {
    InducedSystem::new(MapSpec::lsv(0.75, 1).unwrap(), RoofSpec::constant(2.0).unwrap())
}

#[test]
fn criterion_1_constants() {
    let t0 = Instant::now();
    let mut worst_cb = 0.0f64;
    for beta in [0.55, 0.6, 0.75, 0.9] {
        let a = c_beta_const(beta).unwrap();
        let b = c_beta_quadrature(beta).unwrap();
        worst_cb = worst_cb.max((a - b).norm() / a.norm());
    }
    let mut worst_d1 = 0.0f64;
    for beta in [0.55, 0.6, 0.7, 0.75, 0.8, 0.9, 0.95] {
        for cc in [0.3, 1.0, 2.5] {
            let a = d1_const(beta, cc).unwrap();
            worst_d1 = worst_d1
                .max((a - d1_via_coefficients(beta, cc).unwrap()).abs())
                .max((a - d1_via_phase(beta, cc).unwrap()).abs());
        }
    }
    // independent closed forms
    let mut worst_k = 0.0f64;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for &(beta, q, bp) in &[(0.55, 1.05, 0.7), (0.6, 1.1, 0.8), (0.75, 1.2, 0.9), (0.75, 1.5, 0.8), (0.9, 1.7, 0.95)] {
        let k = kappa_rates(beta, q, bp, 0.1).unwrap();
        let h1 = if q == 2.0 * beta { 0.4 } else { beta * (q + 1.0 - 2.0 * beta) / q };
        let a1 = beta * (bp + 1.0 - 2.0 * beta) / bp;
        let k0 = if beta < g { g - (5f64.sqrt() - 2.0) * beta } else { 2.0 * beta * (1.0 - beta) };
        worst_k = worst_k.max((k.kappa_h1 - h1).abs()).max((k.kappa_a1 - a1).abs()).max((k.kappa0 - k0).abs());
    }
    let jump = (kappa0(g * (1.0 - 1e-15)) - kappa0(g)).abs();
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst_cb < 1e-6 && worst_d1 < 1e-12 && worst_k < 1e-12 && jump < 1e-12 && secs < 5.0;
    report(1, ok, t0, &format!("c_beta rel {worst_cb:.2e}, d1 {worst_d1:.2e}, kappa {worst_k:.2e}, kappa0 jump {jump:.2e}"));
    assert!(ok);
}

#[test]
fn criterion_2_spectral_baseline() {
    let t0 = Instant::now();
    let op = build_ulam(&lsv_tau2(), 2000, 1000, 2).unwrap();
    let sd = op.leading_eig(c(0.0, 0.0), 1e-13, 10_000).unwrap();
    let lam = (sd.lambda - 1.0).norm();
    let zeta = sd.zeta.iter().map(|z| (z - 1.0).norm()).fold(0.0, f64::max);
    let ok = lam < 1e-10 && zeta < 1e-4 && t0.elapsed().as_secs_f64() < 120.0;
    report(2, ok, t0, &format!("|lambda(0)-1| = {lam:.2e}, sup|zeta-1| = {zeta:.2e}"));
    assert!(ok);
}

#[test]
fn criterion_3_eigenvalue_asymptotics() {
    let t0 = Instant::now();
    let op = build_ulam(&lsv_tau2(), 2000, 1000, 2).unwrap();
    let grid = geom_grid(1e-3, 5e-2, 12);
    let fit = eigen_exponent_fit(&op, &grid).unwrap();
    let arg = fit.c_cb_hat.arg();
    let want = 0.75 * std::f64::consts::FRAC_PI_2;
    let ok = (fit.beta_hat - 0.75).abs() <= 0.05
        && (arg - want).abs() <= 0.15
        && fit.dropped.is_empty()
        && t0.elapsed().as_secs_f64() < 600.0;
    // diagnostic only: allow the next-order `b` term the tail expansion predicts
    let best = two_term_fit(&fit.b_used, &fit.one_minus_lambda, 0.55, 0.95, 400);
    report(
        3,
        ok,
        t0,
        &format!(
            "beta_hat {:.4} (want 0.75 +- 0.05), arg {:.4} (want {:.4} +- 0.15), r2 {:.5}; two-term diagnostic beta {:.4}, arg {:.4}",
            fit.beta_hat,
            arg,
            want,
            fit.r2,
            best.0,
            best.1.arg()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_4_tail_law() {
    let t0 = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for a in [1.0, 1.5] {
        let t1 = Instant::now();
        let sys = InducedSystem::new(MapSpec::afn(0.75, a).unwrap(), RoofSpec::constant(2.0).unwrap());
        let sample = sys.stationary_sample(1_000_000, 1000, 11).unwrap();
        let (lo, hi) = default_tail_window(&sample.taus);
        let fit = tail_fit(&sample.taus, lo, hi).unwrap();
        let good = (fit.beta_hat - 0.75).abs() <= 0.05 && t1.elapsed().as_secs_f64() < 900.0;
        ok &= good;
        parts.push(format!("a={a}: beta_hat {:.4} +- {:.4}, c {:.3}", fit.beta_hat, fit.stderr, fit.c_hat));
    }
    report(4, ok, t0, &parts.join("; "));
    assert!(ok);
}

#[test]
fn criterion_5_mixing_rate() {
    let t0 = Instant::now();
    // non-lattice roof: with tau0 = 2 every return time is even and rho oscillates
    let sys = InducedSystem::new(MapSpec::afn(0.75, 1.5).unwrap(), affine());
    let sample = sys.stationary_sample(1_000_000, 1000, 21).unwrap();
    let (lo, hi) = default_tail_window(&sample.taus);
    let tail = tail_fit(&sample.taus, lo, hi).unwrap();
    let v = Observable::fiber_bump(1.0);
    let w = Observable::fiber_bump(1.0);
    let iv = strip_integral(&v, &sample.points);
    let iw = strip_integral(&w, &sample.points);
    let grid = log_grid(10.0, 1000.0, 8);
    let series = correlate(&sys, &v, &w, &grid, 10_000_000, 22).unwrap();
    let fit = decay_fit(&series, 10.0, 1000.0).unwrap();
    let d1 = d1_const(0.75, tail.c_hat).unwrap();
    let last: Vec<f64> = series
        .t_grid
        .iter()
        .zip(&series.rho)
        .filter(|(t, _)| **t >= 100.0)
        .map(|(t, r)| r * t.powf(0.25) / (d1 * iv * iw))
        .collect();
    let ratio = last.iter().sum::<f64>() / last.len() as f64;
    let ok = (fit.rate - 0.25).abs() <= 0.1 && (0.5..=1.5).contains(&ratio) && t0.elapsed().as_secs_f64() <= 7200.0;
    // diagnostic only: rate the two-term expansion itself shows on this window
    let e1 = estimate_e1(&sample.taus, &tail);
    let ex = expansion_coefficients(0.75, tail.c_hat, e1, 2).unwrap();
    let two_term = CorrelationSeries {
        rho: grid.iter().map(|t| (ex.d_coeffs[0] * t.powf(-0.25) + ex.d_coeffs[1] * t.powf(-0.5)) * iv * iw).collect(),
        ..series.clone()
    };
    let model_rate = decay_fit(&two_term, 10.0, 1000.0).map(|f| f.rate).unwrap_or(f64::NAN);
    report(
        5,
        ok,
        t0,
        &format!(
            "rate {:.4} +- {:.4} (want 0.25 +- 0.1), amplitude ratio {ratio:.3} on [100, 1000] (want [0.5, 1.5]), c {:.3}, censored {}; \
             e1 {:.1}i, d1 {:.4}, d2 {:.4}, two-term model rate on the same window {model_rate:.4}",
            fit.rate, fit.stderr_rate, tail.c_hat, series.censored, e1.im, ex.d_coeffs[0], ex.d_coeffs[1]
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_6_laplace() {
    let t0 = Instant::now();
    let mut worst_pair = 0.0f64;
    for k in 0..=18 {
        let t = 1.0 + 0.5 * k as f64;
        let r = laplace_invert(|s| 1.0 / (1.0 + s), t, 1e3, 16).unwrap();
        worst_pair = worst_pair.max((r.value - (-t).exp()).abs());
    }

    let sys = InducedSystem::new(MapSpec::lsv(0.75, 1).unwrap(), affine());
    let op = build_ulam(&sys, 2000, 1000, 31).unwrap();
    let v = Observable::fiber_bump(1.0);
    let w = Observable::fiber_bump(1.0);
    let h = 0.05;
    let t_end = 100.0;
    let n_t = (t_end / h) as usize;
    let grid: Vec<f64> = (0..=n_t).map(|k| k as f64 * h).collect();
    let series = correlate(&sys, &v, &w, &grid, 200_000, 32).unwrap();
    let mut parts = Vec::new();
    let mut worst_rel = 0.0f64;
    for s in [0.2, 0.5, 1.0] {
        // trapezoid on the grid plus the exponential tail beyond t_end
        let f: Vec<f64> = grid.iter().zip(&series.rho).map(|(t, r)| (-s * t).exp() * r).collect();
        let mut mc = h * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[n_t]));
        mc += f[n_t] / s;
        let an = rho_hat_small_b(&op, &v, &w, c(s, 0.0)).unwrap();
        let rel = (an.re - mc).abs() / mc.abs();
        worst_rel = worst_rel.max(rel);
        parts.push(format!("s={s}: operator {:.5}, MC {:.5}", an.re, mc));
    }
    let ok = worst_pair < 1e-3 && worst_rel < 0.1 && t0.elapsed().as_secs_f64() < 1200.0;
    report(6, ok, t0, &format!("e^-t pair max err {worst_pair:.2e}; {}; worst rel {worst_rel:.3}", parts.join(", ")));
    assert!(ok);
}

#[test]
fn criterion_7_projection() {
    let t0 = Instant::now();
    let sys = InducedSystem::new(MapSpec::lsv(0.75, 1).unwrap(), affine());
    let scheme = GmScheme::build(&sys, SchemeMode::MarkovExact, 8, 1e-6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut zs = Vec::new();
    for k in 0..5 {
        let g = Observable::random_holder(&mut rng, 0.0, 1.0);
        let p = projection_discrepancy(&scheme, &sys, &g, 1_000_000, 700 + k).unwrap();
        zs.push(p.z);
    }
    let worst = zs.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    let ok = worst < 3.0 && t0.elapsed().as_secs_f64() < 600.0;
    report(7, ok, t0, &format!("z-scores {:?}", zs.iter().map(|z| format!("{z:.2}")).collect::<Vec<_>>()));
    assert!(ok);
}

#[test]
fn criterion_8_hypothesis_checkers() {
    let t0 = Instant::now();
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let golden = PeriodicData::from_periods([0.0; 3], [phi, 1.0, 0.0], [0.0; 3], 20).unwrap();
    let golden = diophantine_check(&golden, 20, 1000).unwrap().verdict;
    let mut rational_ok = true;
    for (p, q) in [(7.0, 3.0), (5.0, 2.0), (22.0, 7.0), (13.0, 8.0)] {
        let pd = PeriodicData::from_periods([0.0; 3], [p, q, 0.0], [0.0; 3], 20).unwrap();
        rational_ok &= diophantine_check(&pd, 20, 1000).unwrap().verdict == DiophantineVerdict::FailRational;
    }

    let lsv = |roof| {
        let sys = InducedSystem::new(MapSpec::lsv(0.75, 1).unwrap(), roof);
        GmScheme::build(&sys, SchemeMode::MarkovExact, 8, 1e-6).unwrap()
    };
    let pairs = [(0.66, 0.95), (0.7, 0.8)];
    let uni_const = uni_lower_bound(&lsv(RoofSpec::constant(2.0).unwrap()), 1, &pairs, 200).unwrap().inf_abs_psi_prime;
    let uni_affine = uni_lower_bound(&lsv(affine()), 1, &pairs, 200).unwrap().inf_abs_psi_prime;

    let afn = InducedSystem::new(MapSpec::afn(0.75, 1.5).unwrap(), affine());
    let scheme = GmScheme::build(&afn, SchemeMode::Reinduce, 8, 1e-3).unwrap();
    let h3 = doubling_check(20_000, |n| h3_constant(&scheme, n, 1).c_hat);
    let dens = Density::estimate(&afn, scheme.z_lo, scheme.z_hi, 200_000, 3).unwrap();
    let dist = doubling_check(20_000, |n| distortion_constant(&scheme, &dens, n, 1).c_hat);

    let ok = golden == DiophantineVerdict::PassHeuristic
        && rational_ok
        && uni_const == 0.0
        && uni_affine > 1e-3
        && h3.stable
        && dist.stable
        && t0.elapsed().as_secs_f64() < 600.0;
    report(
        8,
        ok,
        t0,
        &format!(
            "golden {golden:?}, rationals fail {rational_ok}, UNI const {uni_const:.1e} / 2+x {uni_affine:.4}, h3 {:?}, distortion {:?}",
            h3.values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            dist.values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
        ),
    );
    assert!(ok);
}

/// Condensed versions of the invariants; the full property suites live in the
/// per-module test files.
#[test]
fn criterion_9_properties() {
    let t0 = Instant::now();
    let mut fails: Vec<&str> = Vec::new();

    let sys = InducedSystem::new(MapSpec::afn(0.75, 1.5).unwrap(), affine());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let semigroup = (0..2000).all(|_| {
        let p = FlowPoint { y: sys.uniform_in_y(&mut rng), u: rng.gen::<f64>() * 2.0 };
        let (t1, t2) = (rng.gen::<f64>() * 50.0, rng.gen::<f64>() * 50.0);
        let (a, n1) = flow_advance(&sys, p, t1).unwrap();
        let (b, n2) = flow_advance(&sys, a, t2).unwrap();
        let (d, n) = flow_advance(&sys, p, t1 + t2).unwrap();
        n1 + n2 == n && b.y == d.y && (b.u - d.u).abs() < 1e-9
    });
    if !semigroup {
        fails.push("semigroup");
    }

    let op = build_ulam(&lsv_tau2(), 400, 400, 5).unwrap();
    if !(0..op.n_bins()).all(|i| (op.row_sum(i) - 1.0).abs() < 1e-12) {
        fails.push("row stochasticity");
    }
    for b in [1e-2, 0.1] {
        let p = op.leading_eig(c(0.0, b), 1e-12, 20_000).unwrap();
        let m = op.leading_eig(c(0.0, -b), 1e-12, 20_000).unwrap();
        if (p.lambda - m.lambda.conj()).norm() > 10.0 * (p.residual + m.residual).max(1e-13) {
            fails.push("conjugation symmetry");
        }
        let gap = (p.lambda - op.laplace_tau(p.s) - chi_term(&op, &p)).norm();
        if gap > 10.0 * p.residual.max(1e-14) {
            fails.push("eigenvalue identity");
        }
    }

    let lsv = InducedSystem::new(MapSpec::lsv(0.75, 1).unwrap(), affine());
    let scheme = GmScheme::build(&lsv, SchemeMode::MarkovExact, 8, 1e-6).unwrap();
    let sups: Vec<f64> = [500, 1000, 2000].iter().map(|&n| h3_constant(&scheme, n, 3).c_hat).collect();
    if !sups.windows(2).all(|w| w[1] >= w[0]) {
        fails.push("checker suprema");
    }

    let dir = tempfile::tempdir().unwrap();
    let cfg = Config::parse(
        "experiment.pipeline = \"tail-fit\"\nexperiment.seed = 5\nmap.family = \"lsv\"\nmap.a = 1.0\ninducing.n_samples = 20000\n",
    )
    .unwrap();
    let a = run_config(&cfg, dir.path()).unwrap();
    let b = run_config(&cfg, dir.path()).unwrap();
    let same = a.config_hash == b.config_hash
        && a.verdicts == b.verdicts
        && a.outputs.iter().zip(&b.outputs).filter(|(p, _)| p.ends_with(".csv")).all(|(p, q)| {
            std::fs::read(dir.path().join(p)).unwrap() == std::fs::read(dir.path().join(q)).unwrap()
        });
    if !same {
        fails.push("manifest determinism");
    }

    let ok = fails.is_empty();
    report(
        9,
        ok,
        t0,
        &if ok { "semigroup, stochasticity, conjugation, identity, suprema, determinism".to_string() } else { format!("failed: {fails:?}") },
    );
    assert!(ok);
}
