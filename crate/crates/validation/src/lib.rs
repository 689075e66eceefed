//! Helpers for the acceptance target in `tests/acceptance.rs`.

use std::io::Write;
use std::time::Instant;

use num_complex::Complex64;

/// One `criterion N: PASS|FAIL` line, written to the stderr handle directly so
/// it shows without `--nocapture`.
pub fn report(id: u32, ok: bool, started: Instant, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let line = format!("criterion {id}: {tag} ({:.1} s) {detail}\n", started.elapsed().as_secs_f64());
    let _ = std::io::stderr().write_all(line.as_bytes());
}

/// Relative least squares for `y = C1 b^beta + C2 b` at fixed `beta`.
/// Returns the residual and `C1`.
pub fn two_term_residual(bs: &[f64], ys: &[Complex64], beta: f64) -> (f64, Complex64) {
    let zero = Complex64::new(0.0, 0.0);
    let (mut a11, mut a12, mut a22) = (0.0, 0.0, 0.0);
    let (mut r1, mut r2) = (zero, zero);
    for (&b, &y) in bs.iter().zip(ys) {
        let w = 1.0 / y.norm_sqr();
        let p = b.powf(beta);
        a11 += w * p * p;
        a12 += w * p * b;
        a22 += w * b * b;
        r1 += w * p * y;
        r2 += w * b * y;
    }
    let det = a11 * a22 - a12 * a12;
    let c1 = (r1 * a22 - r2 * a12) / det;
    let c2 = (r2 * a11 - r1 * a12) / det;
    let res = bs.iter().zip(ys).map(|(&b, &y)| ((y - c1 * b.powf(beta) - c2 * b).norm() / y.norm()).powi(2)).sum();
    (res, c1)
}

/// Grid search of [`two_term_residual`] over `beta` in `[lo, hi]`: `(beta, C1)`.
pub fn two_term_fit(bs: &[f64], ys: &[Complex64], lo: f64, hi: f64, steps: usize) -> (f64, Complex64) {
    let mut best = (f64::INFINITY, f64::NAN, Complex64::new(0.0, 0.0));
    for k in 0..=steps {
        let beta = lo + (hi - lo) * k as f64 / steps as f64;
        let (r, c1) = two_term_residual(bs, ys, beta);
        if r < best.0 {
            best = (r, beta, c1);
        }
    }
    (best.1, best.2)
}
