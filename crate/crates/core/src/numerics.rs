//! Small numerical kernels shared across modules: quadrature rules,
//! regressions and deterministic summation.

use std::sync::OnceLock;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { z } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm1) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Cached rule of a fixed order.
pub fn gl_cached(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static GL8: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static GL16: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static GL32: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match n {
        8 => GL8.get_or_init(|| gauss_legendre(8)),
        16 => GL16.get_or_init(|| gauss_legendre(16)),
        32 => GL32.get_or_init(|| gauss_legendre(32)),
        _ => panic!("no cached rule of order {n}"),
    }
}

/// Gauss-Legendre on `[a, b]`.
pub fn integrate_gl<T, F>(a: f64, b: f64, n: usize, f: F) -> T
where
    T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
    F: Fn(f64) -> T,
{
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    let mut acc = T::default();
    for (xi, wi) in x.iter().zip(&w) {
        acc = acc + f(c + h * xi) * (wi * h);
    }
    acc
}

/// Tanh-sinh nodes `(x, w)` on `(0, 1)`, suited to integrable endpoint singularities.
pub fn tanh_sinh_unit(level: u32) -> Vec<(f64, f64)> {
    let h = 1.0 / f64::from(1u32 << level);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut out = Vec::new();
    let kmax = (4.5 / h) as i64;
    for k in -kmax..=kmax {
        let t = k as f64 * h;
        let s = half_pi * t.sinh();
        let c = s.cosh();
        // x = (1 + tanh s)/2 written to keep precision near 0
        let x = 1.0 / (1.0 + (-2.0 * s).exp());
        let w = h * half_pi * t.cosh() / (2.0 * c * c);
        if x <= 0.0 || x >= 1.0 || w < 1e-300 {
            continue;
        }
        out.push((x, w));
    }
    out
}

/// Pairwise summation, deterministic for a given slice.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

#[derive(Clone, Copy, Debug)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub r2: f64,
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn ols(x: &[f64], y: &[f64]) -> LineFit {
    let w = vec![1.0; x.len()];
    wls(x, y, &w, true)
}

/// Weighted least squares. With `scale_by_residuals` the slope error uses the
/// residual variance; otherwise weights are treated as known inverse variances.
pub fn wls(x: &[f64], y: &[f64], w: &[f64], scale_by_residuals: bool) -> LineFit {
    let n = x.len();
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - xm;
        let dy = y[i] - ym;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let mut rss = 0.0;
    for i in 0..n {
        let r = y[i] - intercept - slope * x[i];
        rss += w[i] * r * r;
    }
    let r2 = if syy > 0.0 { 1.0 - rss / syy } else { f64::NAN };
    let sigma2 = if scale_by_residuals {
        if n > 2 {
            rss / (n - 2) as f64
        } else {
            f64::NAN
        }
    } else {
        1.0
    };
    let slope_se = (sigma2 / sxx).sqrt();
    let intercept_se = (sigma2 * (1.0 / sw + xm * xm / sxx)).sqrt();
    LineFit { slope, intercept, slope_se, intercept_se, r2 }
}

/// Empirical quantile with linear interpolation on sorted data; infinities sort last.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = p * (n - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 >= n {
        return sorted[n - 1];
    }
    if f == 0.0 || !sorted[i + 1].is_finite() {
        return sorted[i];
    }
    sorted[i] * (1.0 - f) + sorted[i + 1] * f
}
