//! Closed-form constants of the renewal asymptotics, series inversion for
//! higher-order coefficients, Fourier-Laplace inversion and decay fits.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::flow::CorrelationSeries;
use crate::inducing::TailFit;
use crate::numerics::{gl_cached, tanh_sinh_unit, wls};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn check_unit(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("beta = {beta} not in (0,1)")))
    }
}

/// `c_beta = Gamma(1-beta) e^{i beta pi/2}`.
pub fn c_beta_const(beta: f64) -> Result<Complex64> {
    check_unit(beta)?;
    Ok(gamma(1.0 - beta) * Complex64::from_polar(1.0, beta * PI / 2.0))
}

/// `int_0^inf e^{i sign sigma} sigma^{-gamma} dsigma` by quadrature: power substitution on
/// the first period, Gauss-Legendre panels up to `2 pi * periods`, then the
/// integration-by-parts series for the remainder.
fn oscillatory_power(gamma_: f64, sign: f64, periods: usize) -> Complex64 {
    let osc = |s: f64| Complex64::from_polar(1.0, sign * s);
    // first period: sigma = x^{1/(1-gamma)} removes the singularity
    let p = 1.0 / (1.0 - gamma_);
    let xmax = TAU.powf(1.0 - gamma_);
    let (gx, gw) = gl_cached(32);
    let panels = 64;
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..panels {
        let (a, b) = (xmax * k as f64 / panels as f64, xmax * (k + 1) as f64 / panels as f64);
        let (h, c) = (0.5 * (b - a), 0.5 * (b + a));
        for (x, w) in gx.iter().zip(gw) {
            let xx = c + h * x;
            acc += osc(xx.powf(p)) * (p * w * h);
        }
    }
    for k in 1..periods {
        for half in 0..2 {
            let a = TAU * k as f64 + PI * half as f64;
            let (h, c) = (PI / 2.0, a + PI / 2.0);
            for (x, w) in gx.iter().zip(gw) {
                let s = c + h * x;
                acc += osc(s) * (s.powf(-gamma_) * w * h);
            }
        }
    }
    // remainder: e^{i sign A} sum_k (i sign)^{k+1} g^{(k)}(A), g = sigma^{-gamma}
    let a = TAU * periods as f64;
    let mut deriv = a.powf(-gamma_);
    let mut tail = Complex64::new(0.0, 0.0);
    let mut fac = I * sign;
    for k in 0..12 {
        tail += fac * deriv;
        deriv *= (-gamma_ - k as f64) / a;
        fac *= I * sign;
    }
    acc + osc(a) * tail
}

/// `c_beta` from its defining integral `i int_0^inf e^{-i sigma} sigma^{-beta} dsigma`.
pub fn c_beta_quadrature(beta: f64) -> Result<Complex64> {
    check_unit(beta)?;
    Ok(I * oscillatory_power(beta, -1.0, 200))
}

/// `C_gamma = int_0^inf e^{i sigma} sigma^{-gamma} dsigma = i Gamma(1-gamma) e^{-i gamma pi/2}`.
pub fn c_upper(gamma_: f64) -> Result<Complex64> {
    check_unit(gamma_)?;
    Ok(I * gamma(1.0 - gamma_) * Complex64::from_polar(1.0, -gamma_ * PI / 2.0))
}

/// `d_1 = sin(beta pi)/(c pi)`. Valid for `beta` in `(0,1)`; the correlation asymptotics use `beta > 1/2`.
pub fn d1_const(beta: f64, c: f64) -> Result<f64> {
    check_unit(beta)?;
    if !(c > 0.0) {
        return Err(Error::domain(format!("c = {c} must be positive")));
    }
    Ok((beta * PI).sin() / (c * PI))
}

/// `d_1` as `Re(c_0 C_0)/pi` with `c_0 = 1/(c c_beta)`.
pub fn d1_via_coefficients(beta: f64, c: f64) -> Result<f64> {
    let c0 = 1.0 / (c * c_beta_const(beta)?);
    Ok((c0 * c_upper(beta)?).re / PI)
}

/// `d_1` as `Re(i e^{-i beta pi})/(c pi)`.
pub fn d1_via_phase(beta: f64, c: f64) -> Result<f64> {
    check_unit(beta)?;
    Ok((I * Complex64::from_polar(1.0, -beta * PI)).re / (c * PI))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kappas {
    pub kappa_h1: f64,
    pub kappa_a1: f64,
    pub kappa0: f64,
}

/// Golden-ratio threshold `(sqrt 5 - 1)/2`.
pub fn golden() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

pub fn kappa0(beta: f64) -> f64 {
    let g = golden();
    if beta >= g {
        2.0 * beta * (1.0 - beta)
    } else {
        g - beta * (5f64.sqrt() - 2.0)
    }
}

/// Error-term rates: full-hypothesis `kappa` (with `1/2 - eps` when `q = 2 beta`),
/// the leading-term rate `kappa_A1` and the Collet-Eckmann `kappa_0`.
pub fn kappa_rates(beta: f64, q: f64, beta_plus: f64, eps: f64) -> Result<Kappas> {
    if !(beta > 0.5 && beta < 1.0) {
        return Err(Error::domain(format!("beta = {beta} not in (1/2,1)")));
    }
    if !(q > 1.0 && q <= 2.0 * beta + 1e-15) {
        return Err(Error::domain(format!("q = {q} not in (1, 2 beta]")));
    }
    if !(beta_plus > beta && beta_plus < 1.0) {
        return Err(Error::domain(format!("beta_plus = {beta_plus} not in (beta, 1)")));
    }
    if !(eps >= 0.0 && eps < 0.5) {
        return Err(Error::domain("eps must lie in [0, 1/2)"));
    }
    let kappa_h1 = if (q - 2.0 * beta).abs() <= 1e-15 { 0.5 - eps } else { beta * (1.0 - 2.0 * beta + q) / q };
    let kappa_a1 = beta * (1.0 - 2.0 * beta + beta_plus) / beta_plus;
    Ok(Kappas { kappa_h1, kappa_a1, kappa0: kappa0(beta) })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Expansion {
    pub c_coeffs: Vec<Complex64>,
    /// `d_coeffs[k]` is the coefficient of `t^{-(k+1)(1-beta)}`.
    pub d_coeffs: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Requested terms dropped because their exponent left `(0,1)`.
    pub truncated: usize,
}

/// Inverts `c c_beta b^beta (1 + e2 b^{1-beta})`, `e2 = e1/(c c_beta)`, term by term:
/// `c_j = c_0 (-e2)^j`, `gamma_j = (j+1) beta - j`, `d_{j+1} = Re(c_j C_{gamma_j})/pi`.
pub fn expansion_coefficients(beta: f64, c: f64, e1: Complex64, j_max: usize) -> Result<Expansion> {
    if j_max == 0 {
        return Err(Error::domain("need at least one term"));
    }
    check_unit(beta)?;
    if !(c > 0.0) {
        return Err(Error::domain(format!("c = {c} must be positive")));
    }
    let ccb = c * c_beta_const(beta)?;
    let c0 = 1.0 / ccb;
    let e2 = e1 / ccb;
    let mut out = Expansion { c_coeffs: Vec::new(), d_coeffs: Vec::new(), gammas: Vec::new(), truncated: 0 };
    for j in 0..j_max {
        let g = (j as f64 + 1.0) * beta - j as f64;
        if !(g > 0.0 && g < 1.0) {
            out.truncated = j_max - j;
            break;
        }
        let cj = c0 * (-e2).powu(j as u32);
        out.d_coeffs.push((cj * c_upper(g)?).re / PI);
        out.c_coeffs.push(cj);
        out.gammas.push(g);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    H1Full,
    A1Leading,
    UniM2,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoticModel {
    pub beta: f64,
    pub c: f64,
    pub q: f64,
    pub beta_plus: f64,
    pub e1: Complex64,
    pub c_coeffs: Vec<Complex64>,
    pub d_coeffs: Vec<f64>,
    pub kappa: f64,
    pub regime: Regime,
    /// Terms from index 1 on come from the series inversion only.
    pub heuristic_from: usize,
}

impl AsymptoticModel {
    pub fn new(beta: f64, c: f64, q: f64, beta_plus: f64, e1: Complex64, regime: Regime) -> Result<Self> {
        let k = kappa_rates(beta, q, beta_plus, 0.0)?;
        let kappa = match regime {
            Regime::H1Full => k.kappa_h1,
            Regime::A1Leading | Regime::UniM2 => k.kappa_a1,
        };
        let j_max = (kappa / (1.0 - beta)).ceil().max(1.0) as usize + 1;
        let ex = expansion_coefficients(beta, c, e1, j_max)?;
        Ok(AsymptoticModel {
            beta,
            c,
            q,
            beta_plus,
            e1,
            c_coeffs: ex.c_coeffs,
            d_coeffs: ex.d_coeffs,
            kappa,
            regime,
            heuristic_from: 1,
        })
    }

    /// Leading-term model: only `d_1` is retained.
    pub fn leading(beta: f64, c: f64) -> Result<Self> {
        let mut m = Self::new(beta, c, 2.0 * beta, 0.5 * (1.0 + beta), Complex64::new(0.0, 0.0), Regime::H1Full)?;
        m.c_coeffs.truncate(1);
        m.d_coeffs.truncate(1);
        m.kappa = 0.5;
        Ok(m)
    }

    /// Number of terms with `j (1 - beta) < kappa`.
    pub fn n_terms(&self) -> usize {
        (1..=self.d_coeffs.len()).take_while(|&j| j as f64 * (1.0 - self.beta) < self.kappa).count().max(1)
    }
}

/// `sum_{j (1-beta) < kappa} d_j t^{-j(1-beta)} Iv Iw`.
pub fn predict_correlation(model: &AsymptoticModel, iv: f64, iw: f64, t_grid: &[f64]) -> Vec<f64> {
    let n = model.n_terms();
    t_grid
        .iter()
        .map(|&t| {
            let s: f64 =
                model.d_coeffs[..n].iter().enumerate().map(|(k, d)| d * t.powf(-((k + 1) as f64) * (1.0 - model.beta))).sum();
            s * iv * iw
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LaplaceOptions {
    /// Bromwich shift `gamma`: inverts along `Re s = gamma`.
    pub shift: f64,
    /// Size above which the estimated truncation error raises the warning flag.
    pub tail_budget: f64,
    /// Cap on Gauss-Legendre panels.
    pub max_panels: usize,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        LaplaceOptions { shift: 0.0, tail_budget: 1e-4, max_panels: 20_000_000 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Inversion {
    pub value: f64,
    /// Magnitude of the last correction used for the part beyond `b_max`.
    pub tail_estimate: f64,
    pub warning: bool,
}

/// `(e^{gamma t}/pi) int_0^inf Re(e^{ibt} F(gamma + ib)) db`, with the inner piece
/// `b < 1/t` on the scale `b = sigma/t` (tanh-sinh for the singularity at 0),
/// Gauss-Legendre half-period panels on `[1/t, b_max]` and a two-term
/// integration-by-parts correction beyond `b_max`.
pub fn laplace_invert_with(
    rho_hat: impl Fn(Complex64) -> Complex64 + Sync,
    t: f64,
    b_max: f64,
    n_quad: usize,
    opts: &LaplaceOptions,
) -> Result<Inversion> {
    if !(t > 0.0) || !(b_max > 0.0) {
        return Err(Error::domain("t and b_max must be positive"));
    }
    let g = |b: f64| rho_hat(Complex64::new(opts.shift, b));
    let osc = |b: f64| Complex64::from_polar(1.0, b * t);
    let split = (1.0 / t).min(b_max);
    let mut acc = 0.0;
    // inner: b = split * x
    for (x, w) in tanh_sinh_unit(6) {
        let b = split * x;
        acc += w * split * (osc(b) * g(b)).re;
    }
    let (gx, gw) = crate::numerics::gauss_legendre(n_quad.max(8));
    let half = PI / t;
    let span = b_max - split;
    if span > 0.0 {
        let panels = (span / half).ceil() as usize;
        if panels > opts.max_panels {
            return Err(Error::domain(format!("{panels} panels exceed the cap; lower b_max")));
        }
        let h = span / panels as f64;
        let parts: Vec<f64> = {
            use rayon::prelude::*;
            (0..panels)
                .into_par_iter()
                .with_min_len(4096)
                .map(|k| {
                    let c = split + (k as f64 + 0.5) * h;
                    let mut s = 0.0;
                    for (x, w) in gx.iter().zip(&gw) {
                        let b = c + 0.5 * h * x;
                        s += w * 0.5 * h * (osc(b) * g(b)).re;
                    }
                    s
                })
                .collect()
        };
        acc += crate::numerics::pairwise_sum(&parts);
    }
    // beyond b_max: e^{iBt} sum_k (i/t)^{k+1} g^{(k)}(B), k = 0, 1, once the
    // integrand oscillates enough below b_max; otherwise plain truncation
    let hb = 1e-4 * b_max;
    let g0 = g(b_max);
    let tail_estimate = if b_max * t >= 8.0 * PI {
        let g1 = (g(b_max + hb) - g(b_max - hb)) / (2.0 * hb);
        let it = I / t;
        acc += (osc(b_max) * (it * g0 + it * it * g1)).re;
        let g2 = (g(b_max + hb) - 2.0 * g0 + g(b_max - hb)) / (hb * hb);
        g2.norm() / t.powi(3)
    } else {
        g0.norm() * b_max
    } * (opts.shift * t).exp()
        / PI;
    let value = acc * (opts.shift * t).exp() / PI;
    Ok(Inversion { value, tail_estimate, warning: tail_estimate > opts.tail_budget })
}

pub fn laplace_invert(
    rho_hat: impl Fn(Complex64) -> Complex64 + Sync,
    t: f64,
    b_max: f64,
    n_quad: usize,
) -> Result<Inversion> {
    laplace_invert_with(rho_hat, t, b_max, n_quad, &LaplaceOptions::default())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub amplitude: f64,
    pub stderr_rate: f64,
    pub n_used: usize,
}

/// Weighted log-log fit of `rho` on `[t_min, t_max]`, using points with `rho > 3 stderr`.
pub fn decay_fit(series: &CorrelationSeries, t_min: f64, t_max: f64) -> Result<DecayFit> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for ((&t, &r), &e) in series.t_grid.iter().zip(&series.rho).zip(&series.stderr) {
        if t < t_min || t > t_max || !(r > 3.0 * e) || r <= 0.0 {
            continue;
        }
        x.push(t.ln());
        y.push(r.ln());
        w.push(if e > 0.0 { (r / e).powi(2) } else { 1.0 });
    }
    if x.len() < 6 {
        return Err(Error::InsufficientSignal { found: x.len(), needed: 6 });
    }
    let fit = wls(&x, &y, &w, true);
    let stderr_rate = if fit.slope_se.is_finite() { fit.slope_se } else { 0.0 };
    Ok(DecayFit { rate: -fit.slope, amplitude: fit.intercept.exp(), stderr_rate, n_used: x.len() })
}

/// `e_1 = i int_0^inf (P(tau > t) - c t^{-beta}) dt`, integrating the empirical
/// survival exactly up to the fit's `t_max` and taking the fitted law beyond.
pub fn estimate_e1(samples: &[f64], fit: &TailFit) -> Complex64 {
    let t_end = fit.t_max;
    let finite: Vec<f64> = samples.iter().map(|&x| x.min(t_end)).collect();
    let mean = crate::numerics::pairwise_sum(&finite) / samples.len() as f64;
    let law = fit.c_hat * t_end.powf(1.0 - fit.beta_hat) / (1.0 - fit.beta_hat);
    I * (mean - law)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub t: f64,
    pub rho_mc: f64,
    pub stderr: f64,
    pub rho_pred: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub rate: f64,
    pub stderr_rate: f64,
    pub expected: f64,
    pub z: f64,
}

pub fn compare(series: &CorrelationSeries, model: &AsymptoticModel, iv: f64, iw: f64) -> Vec<ComparisonRow> {
    let pred = predict_correlation(model, iv, iw, &series.t_grid);
    (0..series.t_grid.len())
        .map(|k| ComparisonRow {
            t: series.t_grid[k],
            rho_mc: series.rho[k],
            stderr: series.stderr[k],
            rho_pred: pred[k],
            ratio: series.rho[k] / pred[k],
        })
        .collect()
}

pub fn verdict(fit: &DecayFit, beta: f64) -> Verdict {
    let expected = 1.0 - beta;
    let z = if fit.stderr_rate > 0.0 { (fit.rate - expected).abs() / fit.stderr_rate } else { f64::INFINITY };
    Verdict { rate: fit.rate, stderr_rate: fit.stderr_rate, expected, z }
}
