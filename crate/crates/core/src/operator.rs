//! Ulam discretization of the transfer operator of the induced map, its
//! twisted family `R(s) v = R(e^{-s tau} v)`, leading eigendata and resolvent.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{j_hat_weighted, Observable};
use crate::inducing::InducedSystem;
use crate::numerics::{gauss_legendre, ols};
use crate::rng;

/// `|1 - lambda(s)|` below this makes the resolvent refuse.
pub const NEAR_SINGULAR_FLOOR: f64 = 1e-8;
/// Largest operator solved with dense LU.
pub const DENSE_LIMIT: usize = 4000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UlamOptions {
    /// Geometric bins accumulating at the left end of `Y` (AFN bases only).
    pub geometric: bool,
    pub ratio: f64,
    /// Width of the first geometric bin relative to `|Y|`.
    pub first_width: f64,
    /// Use the bin median of tau instead of the mean.
    pub median_tau: bool,
}

impl Default for UlamOptions {
    fn default() -> Self {
        UlamOptions { geometric: true, ratio: 1.05, first_width: 1e-10, median_tau: false }
    }
}

/// Row-stochastic transition matrix in compressed-row form plus per-bin data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UlamOperator {
    pub edges: Vec<f64>,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub tau_bin: Vec<f64>,
    pub mu_bin: Vec<f64>,
    pub n_mc: usize,
    pub seed: u64,
    pub map_hash: u64,
    /// Bins dropped by merging because no transition landed in them.
    pub merged: usize,
    /// Censored excursions among the Monte Carlo samples.
    pub censored: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralData {
    pub s: Complex64,
    pub lambda: Complex64,
    pub zeta: Vec<Complex64>,
    pub chi: Complex64,
    pub iterations: usize,
    pub residual: f64,
}

/// Bin edges on `[lo, hi]`: geometric widths `w0 r^k` from `lo` until they reach
/// the common width of the uniform remainder.
pub fn bin_edges(lo: f64, hi: f64, n: usize, geometric: bool, ratio: f64, w0: f64) -> Vec<f64> {
    let len = hi - lo;
    let uniform = |a: f64, m: usize| (0..=m).map(move |i| if i == m { hi } else { a + (hi - a) * i as f64 / m as f64 });
    if !geometric || n < 50 {
        return uniform(lo, n).collect();
    }
    let w0 = w0 * len;
    let mut m = 0;
    let mut g = 0.0;
    // largest m with w0 r^{m-1} <= uniform width of the rest
    while m + 1 < n {
        let g_next = g + w0 * ratio.powi(m as i32);
        let h = (len - g_next) / (n - m - 1) as f64;
        if h <= 0.0 || w0 * ratio.powi(m as i32) > h {
            break;
        }
        g = g_next;
        m += 1;
    }
    let mut edges = Vec::with_capacity(n + 1);
    let mut x = lo;
    edges.push(x);
    for k in 0..m {
        x += w0 * ratio.powi(k as i32);
        edges.push(x);
    }
    edges.extend(uniform(x, n - m).skip(1));
    edges
}

fn locate(edges: &[f64], x: f64) -> usize {
    let n = edges.len() - 1;
    match edges.partition_point(|&e| e <= x) {
        0 => 0,
        k => (k - 1).min(n - 1),
    }
}

/// One Monte Carlo sample of a bin: image point and roof.
#[derive(Clone, Copy)]
struct Sample {
    fx: f64,
    tau: f64,
}

pub fn build_ulam(sys: &InducedSystem, n_bins: usize, n_mc: usize, seed: u64) -> Result<UlamOperator> {
    build_ulam_with(sys, n_bins, n_mc, seed, &UlamOptions::default())
}

pub fn build_ulam_with(
    sys: &InducedSystem,
    n_bins: usize,
    n_mc: usize,
    seed: u64,
    opts: &UlamOptions,
) -> Result<UlamOperator> {
    if n_bins == 0 || n_mc == 0 {
        return Err(Error::domain("n_bins and n_mc must be positive"));
    }
    let geometric = opts.geometric && sys.base.is_afn();
    let edges0 = bin_edges(sys.y_lo, sys.y_hi, n_bins, geometric, opts.ratio, opts.first_width);
    // stratified uniform samples in every bin
    let per_bin: Vec<(Vec<Sample>, usize)> = (0..n_bins)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let (a, b) = (edges0[i], edges0[i + 1]);
            let mut out = Vec::with_capacity(n_mc);
            let mut censored = 0;
            for k in 0..n_mc {
                let x = a + (b - a) * (k as f64 + r.gen::<f64>()) / n_mc as f64;
                let e = sys.excursion(x);
                if e.censored {
                    censored += 1;
                } else {
                    out.push(Sample { fx: e.fx, tau: e.tau });
                }
            }
            (out, censored)
        })
        .collect();
    let censored = per_bin.iter().map(|p| p.1).sum();
    let mut groups: Vec<Vec<Sample>> = per_bin.into_iter().map(|p| p.0).collect();
    let mut edges = edges0;
    let mut merged = 0;
    loop {
        let n = groups.len();
        let mut hit = vec![false; n];
        for g in &groups {
            for s in g {
                hit[locate(&edges, s.fx)] = true;
            }
        }
        let bad: Vec<usize> = (0..n).filter(|&j| !hit[j] || groups[j].is_empty()).collect();
        if bad.is_empty() || n == 1 {
            break;
        }
        // merge each bad bin into its right neighbour (left for the last one)
        let j = bad[0];
        let k = if j + 1 < n { j + 1 } else { j - 1 };
        let (lo, hi) = (j.min(k), j.max(k));
        let moved = std::mem::take(&mut groups[hi]);
        groups[lo].extend(moved);
        groups.remove(hi);
        edges.remove(hi);
        merged += 1;
    }
    let n = groups.len();
    let mut indptr = vec![0usize];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut tau_bin = Vec::with_capacity(n);
    for g in &groups {
        let mut dest: Vec<u32> = g.iter().map(|s| locate(&edges, s.fx) as u32).collect();
        dest.sort_unstable();
        let total = dest.len() as f64;
        let mut i = 0;
        while i < dest.len() {
            let mut j = i;
            while j < dest.len() && dest[j] == dest[i] {
                j += 1;
            }
            indices.push(dest[i]);
            values.push((j - i) as f64 / total);
            i = j;
        }
        indptr.push(indices.len());
        let mut taus: Vec<f64> = g.iter().map(|s| s.tau).collect();
        let t = if opts.median_tau {
            taus.sort_by(f64::total_cmp);
            crate::numerics::quantile_sorted(&taus, 0.5)
        } else {
            crate::numerics::pairwise_sum(&taus) / taus.len() as f64
        };
        tau_bin.push(t);
    }
    let mut op = UlamOperator {
        edges,
        indptr,
        indices,
        values,
        tau_bin,
        mu_bin: Vec::new(),
        n_mc,
        seed,
        map_hash: sys.base.fingerprint(),
        merged,
        censored,
    };
    op.mu_bin = op.stationary(1e-15, 100_000)?;
    Ok(op)
}

impl UlamOperator {
    pub fn n_bins(&self) -> usize {
        self.tau_bin.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().map(|&j| j as usize).zip(self.values[r].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, p)| p).sum()
    }

    /// `pi P`.
    pub fn left_apply(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_bins()];
        for (i, &p) in pi.iter().enumerate() {
            for (j, v) in self.row(i) {
                out[j] += p * v;
            }
        }
        out
    }

    /// Stationary probability vector of `P` by power iteration.
    fn stationary(&self, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let n = self.n_bins();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..max_iter {
            // lazy chain: same stationary vector, no periodicity trouble
            let next: Vec<f64> = self.left_apply(&pi).iter().zip(&pi).map(|(a, b)| 0.5 * (a + b)).collect();
            let total: f64 = next.iter().sum();
            let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a / total - b).abs()).sum();
            pi = next.into_iter().map(|v| v / total).collect();
            if diff < tol {
                return Ok(pi);
            }
        }
        Err(Error::NoConvergence(max_iter ))
    }

    /// `l1` norm of `mu P - mu`.
    pub fn stationarity_residual(&self) -> f64 {
        self.left_apply(&self.mu_bin).iter().zip(&self.mu_bin).map(|(a, b)| (a - b).abs()).sum()
    }

    /// `R(s) v`: multiply by `e^{-s tau}`, then transfer through `D^{-1} P^T D`.
    pub fn twisted_apply(&self, s: Complex64, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.n_bins();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            let wi = (-s * self.tau_bin[i]).exp() * v[i] * self.mu_bin[i];
            for (j, p) in self.row(i) {
                out[j] += wi * p;
            }
        }
        for (o, m) in out.iter_mut().zip(&self.mu_bin) {
            *o /= m;
        }
        out
    }

    fn mu_dot(&self, v: &[Complex64]) -> Complex64 {
        v.iter().zip(&self.mu_bin).map(|(a, m)| a * m).sum()
    }

    pub fn leading_eig(&self, s: Complex64, tol: f64, max_iter: usize) -> Result<SpectralData> {
        self.leading_eig_from(s, tol, max_iter, None)
    }

    /// Power iteration with `sum mu zeta = 1`, optionally warm-started.
    pub fn leading_eig_from(
        &self,
        s: Complex64,
        tol: f64,
        max_iter: usize,
        init: Option<&[Complex64]>,
    ) -> Result<SpectralData> {
        let n = self.n_bins();
        let mut zeta: Vec<Complex64> = match init {
            Some(z) if z.len() == n => z.to_vec(),
            _ => vec![Complex64::new(1.0, 0.0); n],
        };
        let norm = self.mu_dot(&zeta);
        if norm.norm() == 0.0 {
            return Err(Error::domain("initial vector has zero mean"));
        }
        zeta.iter_mut().for_each(|z| *z /= norm);
        for it in 1..=max_iter {
            let y = self.twisted_apply(s, &zeta);
            let lambda = self.mu_dot(&y);
            let residual: f64 =
                y.iter().zip(&zeta).zip(&self.mu_bin).map(|((a, z), m)| m * (a - lambda * z).norm()).sum();
            if lambda.norm() == 0.0 || !lambda.is_finite() {
                return Err(Error::NoConvergence(it ));
            }
            if residual <= tol * lambda.norm().max(1e-300) {
                let chi = chi_sum(self, s, &zeta);
                let lambda = self.mu_dot(&self.weighted(s, &zeta));
                return Ok(SpectralData { s, lambda, zeta, chi, iterations: it, residual });
            }
            zeta = y.into_iter().map(|v| v / lambda).collect();
        }
        Err(Error::NoConvergence(max_iter ))
    }

    fn weighted(&self, s: Complex64, v: &[Complex64]) -> Vec<Complex64> {
        v.iter().zip(&self.tau_bin).map(|(a, t)| a * (-s * t).exp()).collect()
    }

    /// `sum mu e^{-s tau}`.
    pub fn laplace_tau(&self, s: Complex64) -> Complex64 {
        self.tau_bin.iter().zip(&self.mu_bin).map(|(t, m)| (-s * t).exp() * m).sum()
    }

    /// Dense matrix of `R(s)`.
    fn dense(&self, s: Complex64) -> DMatrix<Complex64> {
        let n = self.n_bins();
        let mut m = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for i in 0..n {
            let wi = (-s * self.tau_bin[i]).exp() * self.mu_bin[i];
            for (j, p) in self.row(i) {
                m[(j, i)] += wi * p / self.mu_bin[j];
            }
        }
        m
    }

    /// Solves `(I - R(s)) x = v`.
    pub fn resolvent_apply(&self, s: Complex64, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.n_bins() {
            return Err(Error::domain("vector length differs from n_bins"));
        }
        match self.leading_eig(s, 1e-12, 5000) {
            Ok(sd) if (Complex64::new(1.0, 0.0) - sd.lambda).norm() < NEAR_SINGULAR_FLOOR => {
                return Err(Error::NearSingular((Complex64::new(1.0, 0.0) - sd.lambda).norm()));
            }
            _ => {}
        }
        if self.n_bins() <= DENSE_LIMIT {
            self.solve_dense(s, v)
        } else {
            self.solve_gmres(s, v, 1e-13, 60, 200)
        }
    }

    pub fn solve_dense(&self, s: Complex64, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.n_bins();
        let a = DMatrix::identity(n, n) - self.dense(s);
        let b = nalgebra::DVector::from_column_slice(v);
        let x = a.lu().solve(&b).ok_or(Error::NearSingular(0.0))?;
        Ok(x.iter().copied().collect())
    }

    /// Restarted GMRES on `(I - R(s)) x = v`.
    pub fn solve_gmres(
        &self,
        s: Complex64,
        v: &[Complex64],
        tol: f64,
        restart: usize,
        max_restarts: usize,
    ) -> Result<Vec<Complex64>> {
        let n = self.n_bins();
        let apply = |x: &[Complex64]| -> Vec<Complex64> {
            let r = self.twisted_apply(s, x);
            x.iter().zip(&r).map(|(a, b)| a - b).collect()
        };
        let norm = |x: &[Complex64]| x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let bnorm = norm(v).max(1e-300);
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        for _ in 0..max_restarts {
            let ax = apply(&x);
            let r: Vec<Complex64> = v.iter().zip(&ax).map(|(a, b)| a - b).collect();
            let beta = norm(&r);
            if beta <= tol * bnorm {
                return Ok(x);
            }
            let mut basis: Vec<Vec<Complex64>> = vec![r.iter().map(|c| c / beta).collect()];
            let mut h = vec![vec![Complex64::new(0.0, 0.0); restart]; restart + 1];
            let mut cs = vec![Complex64::new(0.0, 0.0); restart];
            let mut sn = vec![Complex64::new(0.0, 0.0); restart];
            let mut g = vec![Complex64::new(0.0, 0.0); restart + 1];
            g[0] = Complex64::new(beta, 0.0);
            let mut k_used = 0;
            for k in 0..restart {
                let mut w = apply(&basis[k]);
                for (i, q) in basis.iter().enumerate() {
                    let hij: Complex64 = q.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
                    h[i][k] = hij;
                    w.iter_mut().zip(q).for_each(|(a, b)| *a -= hij * b);
                }
                let hn = norm(&w);
                h[k + 1][k] = Complex64::new(hn, 0.0);
                for i in 0..k {
                    let t = cs[i].conj() * h[i][k] + sn[i].conj() * h[i + 1][k];
                    h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                    h[i][k] = t;
                }
                let d = (h[k][k].norm_sqr() + h[k + 1][k].norm_sqr()).sqrt();
                cs[k] = h[k][k] / d;
                sn[k] = h[k + 1][k] / d;
                h[k][k] = Complex64::new(d, 0.0);
                h[k + 1][k] = Complex64::new(0.0, 0.0);
                g[k + 1] = -sn[k] * g[k];
                g[k] = cs[k].conj() * g[k];
                k_used = k + 1;
                if g[k + 1].norm() <= tol * bnorm || hn == 0.0 {
                    break;
                }
                basis.push(w.iter().map(|c| c / hn).collect());
            }
            let mut y = vec![Complex64::new(0.0, 0.0); k_used];
            for i in (0..k_used).rev() {
                let mut acc = g[i];
                for j in i + 1..k_used {
                    acc -= h[i][j] * y[j];
                }
                y[i] = acc / h[i][i];
            }
            for (j, yj) in y.iter().enumerate() {
                x.iter_mut().zip(&basis[j]).for_each(|(a, b)| *a += yj * b);
            }
        }
        Err(Error::NoConvergence(max_restarts))
    }
}

fn chi_sum(op: &UlamOperator, s: Complex64, zeta: &[Complex64]) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    (0..op.n_bins()).map(|i| ((-s * op.tau_bin[i]).exp() - one) * (zeta[i] - one) * op.mu_bin[i]).sum()
}

/// `chi(s) = sum (e^{-s tau} - 1)(zeta - 1) mu`.
pub fn chi_term(op: &UlamOperator, sd: &SpectralData) -> Complex64 {
    chi_sum(op, sd.s, &sd.zeta)
}

/// `rho_hat(s) = J(s) + sum_j mu_j (T(s) v_s)_j (w_s)_j` with fiber moments at bin centers.
pub fn rho_hat_small_b(op: &UlamOperator, v: &Observable, w: &Observable, s: Complex64) -> Result<Complex64> {
    if v.amp == 0.0 || w.amp == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let nodes = gauss_legendre(48);
    let vm = v.fiber_moment(s, &nodes) * v.amp;
    let wm = w.fiber_moment(-s, &nodes) * w.amp;
    let centers = op.centers();
    let vs: Vec<Complex64> = centers.iter().map(|&y| vm * v.base_value(y)).collect();
    let tv = op.resolvent_apply(s, &vs)?;
    let tail: Complex64 =
        centers.iter().zip(&tv).zip(&op.mu_bin).map(|((&y, t), m)| t * wm * w.base_value(y) * m).sum();
    let pts: Vec<(f64, f64)> = centers.iter().copied().zip(op.mu_bin.iter().copied()).collect();
    Ok(j_hat_weighted(v, w, s, &pts, 48) + tail)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenFit {
    pub beta_hat: f64,
    pub c_cb_hat: Complex64,
    pub r2: f64,
    pub b_used: Vec<f64>,
    pub dropped: Vec<f64>,
    /// `1 - lambda(ib)` on `b_used`.
    pub one_minus_lambda: Vec<Complex64>,
}

/// Fits `log|1 - lambda(ib)|` against `log b`; `c_cb_hat` averages `(1-lambda)/b^beta_hat`.
/// Grid points where `lambda` fails are dropped and listed.
pub fn eigen_exponent_fit_with(
    b_grid: &[f64],
    lambda: impl Fn(f64) -> Result<Complex64> + Sync,
) -> Result<EigenFit> {
    if b_grid.len() < 8 || b_grid.iter().any(|&b| !(b > 0.0 && b <= 0.5)) {
        return Err(Error::domain("b_grid needs at least 8 points in (0, 0.5]"));
    }
    let vals: Vec<(f64, Result<Complex64>)> = b_grid.par_iter().map(|&b| (b, lambda(b))).collect();
    let mut b_used = Vec::new();
    let mut oml = Vec::new();
    let mut dropped = Vec::new();
    for (b, r) in vals {
        match r {
            Ok(l) => {
                b_used.push(b);
                oml.push(Complex64::new(1.0, 0.0) - l);
            }
            Err(_) => dropped.push(b),
        }
    }
    if b_used.len() < 3 {
        return Err(Error::InsufficientSignal { found: b_used.len(), needed: 3 });
    }
    let x: Vec<f64> = b_used.iter().map(|b| b.ln()).collect();
    let y: Vec<f64> = oml.iter().map(|c| c.norm().ln()).collect();
    let fit = ols(&x, &y);
    let beta_hat = fit.slope;
    let c_cb_hat = oml.iter().zip(&b_used).map(|(c, b)| c / b.powf(beta_hat)).sum::<Complex64>() / b_used.len() as f64;
    Ok(EigenFit { beta_hat, c_cb_hat, r2: fit.r2, b_used, dropped, one_minus_lambda: oml })
}

/// [`eigen_exponent_fit_with`] on the Ulam eigenvalue, warm-starting each `b` from the previous.
pub fn eigen_exponent_fit(op: &UlamOperator, b_grid: &[f64]) -> Result<EigenFit> {
    let mut sorted = b_grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut table = Vec::new();
    let mut prev: Option<Vec<Complex64>> = None;
    for &b in &sorted {
        let r = op.leading_eig_from(Complex64::new(0.0, b), 1e-12, 20_000, prev.as_deref());
        if let Ok(sd) = &r {
            prev = Some(sd.zeta.clone());
        }
        table.push((b, r.map(|sd| sd.lambda)));
    }
    eigen_exponent_fit_with(b_grid, |b| {
        let (_, r) = table.iter().find(|(bb, _)| *bb == b).expect("grid point");
        match r {
            Ok(l) => Ok(*l),
            Err(_) => Err(Error::NoConvergence(0)),
        }
    })
}

/// Geometric grid of `n` points on `[lo, hi]`.
pub fn geom_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1).max(1) as f64)).collect()
}

const MAGIC: &[u8; 8] = b"SFULAM01";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, k: usize) -> Result<&[u8]> {
        let s = self.bytes.get(self.pos..self.pos + k).ok_or_else(|| Error::domain("truncated operator container"))?;
        self.pos += k;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl UlamOperator {
    /// Binary container: magic, `n_bins`, seed, map hash, nnz, then the CSR arrays,
    /// `tau_bin`, `mu_bin` and edges, all little endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for h in [self.n_bins() as u64, self.seed, self.map_hash, self.indices.len() as u64] {
            out.extend_from_slice(&h.to_le_bytes());
        }
        for &p in &self.indptr {
            out.extend_from_slice(&(p as u64).to_le_bytes());
        }
        for &j in &self.indices {
            out.extend_from_slice(&j.to_le_bytes());
        }
        for arr in [&self.values, &self.tau_bin, &self.mu_bin, &self.edges] {
            for v in arr.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Inverse of [`UlamOperator::to_bytes`]; metadata not in the container
    /// (`n_mc`, `merged`, `censored`) comes back as zero.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::domain("malformed operator container");
        if bytes.len() < 40 || &bytes[..8] != MAGIC {
            return Err(bad());
        }
        let mut cur = Reader { bytes, pos: 8 };
        let n = cur.u64()? as usize;
        let seed = cur.u64()?;
        let map_hash = cur.u64()?;
        let nnz = cur.u64()? as usize;
        let mut indptr = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            indptr.push(cur.u64()? as usize);
        }
        let mut indices = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            indices.push(u32::from_le_bytes(cur.take(4)?.try_into().unwrap()));
        }
        let mut f64s = |m: usize| -> Result<Vec<f64>> { (0..m).map(|_| cur.f64()).collect() };
        let values = f64s(nnz)?;
        let tau_bin = f64s(n)?;
        let mu_bin = f64s(n)?;
        let edges = f64s(n + 1)?;
        if indptr.last() != Some(&nnz) {
            return Err(bad());
        }
        Ok(UlamOperator { edges, indptr, indices, values, tau_bin, mu_bin, n_mc: 0, seed, map_hash, merged: 0, censored: 0 })
    }

    /// Spectral scan as CSV: `b, re_lambda, im_lambda, residual`.
    pub fn scan_csv(rows: &[(f64, SpectralData)]) -> String {
        let mut s = String::from("b,re_lambda,im_lambda,residual\n");
        for (b, sd) in rows {
            s.push_str(&format!("{b:.16e},{:.16e},{:.16e},{:.16e}\n", sd.lambda.re, sd.lambda.im, sd.residual));
        }
        s
    }
}
