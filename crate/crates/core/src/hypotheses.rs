//! Numerical probes of the standing hypotheses: roof regularity and distortion
//! along cylinders, periodic data and Diophantine heuristics, uniform
//! non-integrability, and recurrence-set statistics.
//!
//! Every verdict here is a finite-sample or finite-precision heuristic.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inducing::{GCell, GmScheme, InducedSystem, Itinerary};
use crate::mapzoo::{Family, MapSpec, RoofSpec};
use crate::numerics::{ols, LineFit};
use crate::rng;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub c_hat: f64,
    /// Cylinder `[lo, hi]` where the supremum was attained.
    pub worst_cell: (f64, f64),
    pub pairs: usize,
    /// Pairs in cylinders too narrow to resolve in double precision, or with
    /// overflowing derivatives.
    pub skipped: usize,
}

/// Same-cylinder pairs `(z, z')`: `z` uniform in `Z`, `z'` uniform in the cylinder of `z`.
/// Pair `k` of a chunk always uses the same two draws, so larger runs extend smaller ones.
fn pair_sup(
    scheme: &GmScheme,
    n_pairs: usize,
    seed: u64,
    ratio: impl Fn(&GCell, (f64, f64), f64, f64) -> Option<f64> + Sync,
) -> HolderEstimate {
    let best: Vec<(f64, (f64, f64), usize)> = rng::chunks(n_pairs)
        .into_par_iter()
        .enumerate()
        .map(|(ci, len)| {
            let mut r = rng::stream(seed, ci as u64);
            let mut best = (0.0, (scheme.z_lo, scheme.z_hi), 0);
            for _ in 0..len {
                let u1: f64 = r.gen();
                let u2: f64 = r.gen();
                let z = scheme.z_lo + scheme.z_len() * u1;
                let cell = scheme.cell(z);
                if !cell.resolved || cell.censored {
                    best.2 += 1;
                    continue;
                }
                let (lo, hi) = scheme.bounds(&cell);
                if hi - lo < 1e3 * f64::EPSILON * hi.abs() {
                    best.2 += 1;
                    continue;
                }
                let z2 = lo + (hi - lo) * u2;
                if z2 == z {
                    continue;
                }
                match ratio(&cell, (lo, hi), z, z2) {
                    Some(v) if v.is_finite() => {
                        if v > best.0 {
                            best = (v, (lo, hi), best.2);
                        }
                    }
                    _ => best.2 += 1,
                }
            }
            best
        })
        .collect();
    let skipped = best.iter().map(|b| b.2).sum();
    let (c_hat, worst_cell, _) = best.into_iter().fold((0.0, (scheme.z_lo, scheme.z_hi), 0), |a, b| if b.0 > a.0 { b } else { a });
    HolderEstimate { c_hat, worst_cell, pairs: n_pairs, skipped }
}

/// Empirical constant of `|tau_l(z) - tau_l(z')| <= C inf_a(phi) |Gz - Gz'|^eta`, `l <= sigma`.
pub fn h3_constant(scheme: &GmScheme, n_pairs: usize, seed: u64) -> HolderEstimate {
    let eta = scheme.eta;
    pair_sup(scheme, n_pairs, seed, |cell, (lo, hi), z, z2| {
        let a = scheme.g_eval(cell, z, false);
        let b = scheme.g_eval(cell, z2, false);
        let ends = [scheme.g_eval(cell, lo, false).phi, scheme.g_eval(cell, hi, false).phi];
        let inf_phi = ends.iter().copied().chain([a.phi, b.phi]).fold(f64::INFINITY, f64::min);
        let num = a.partial.iter().zip(&b.partial).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if num == 0.0 {
            return Some(0.0);
        }
        let d = (a.gz - b.gz).abs();
        Some(num / (inf_phi * d.powf(eta)))
    })
}

/// Invariant density on `Z`: exact for affine full-branch maps, otherwise a
/// reflected Gaussian kernel estimate on a fine histogram.
#[derive(Clone, Debug)]
pub enum Density {
    Lebesgue,
    Grid { lo: f64, hi: f64, values: Vec<f64> },
}

impl Density {
    pub fn estimate(sys: &InducedSystem, lo: f64, hi: f64, n_samples: usize, seed: u64) -> Result<Self> {
        if sys.base.family == Family::PiecewiseLinear {
            return Ok(Density::Lebesgue);
        }
        let sample = sys.stationary_sample(n_samples, 1000, seed)?;
        let pts: Vec<f64> = sample.points.into_iter().filter(|&x| x >= lo && x <= hi).collect();
        if pts.len() < 100 {
            return Err(Error::InsufficientHits { found: pts.len(), needed: 100 });
        }
        let bins = 2048;
        let w = (hi - lo) / bins as f64;
        let mut hist = vec![0.0; bins];
        for &x in &pts {
            hist[(((x - lo) / w) as usize).min(bins - 1)] += 1.0;
        }
        let n = pts.len() as f64;
        let mean = pts.iter().sum::<f64>() / n;
        let sd = (pts.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let bw = (0.9 * sd * n.powf(-0.2)).max(w);
        let k = (4.0 * bw / w).ceil() as isize;
        let kern: Vec<f64> = (-k..=k).map(|j| (-0.5 * (j as f64 * w / bw).powi(2)).exp()).collect();
        let ksum: f64 = kern.iter().sum();
        let mut values = vec![0.0; bins];
        for (i, v) in values.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (jj, kv) in kern.iter().enumerate() {
                let mut j = i as isize + jj as isize - k;
                // reflect at the ends
                if j < 0 {
                    j = -j - 1;
                }
                if j >= bins as isize {
                    j = 2 * bins as isize - j - 1;
                }
                acc += kv * hist[j.clamp(0, bins as isize - 1) as usize];
            }
            *v = acc / ksum / (n * w);
        }
        Ok(Density::Grid { lo, hi, values })
    }

    pub fn at(&self, x: f64) -> f64 {
        match self {
            Density::Lebesgue => 1.0,
            Density::Grid { lo, hi, values } => {
                let n = values.len();
                let p = ((x - lo) / (hi - lo) * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                let i = (p.floor() as usize).min(n - 2);
                let f = p - i as f64;
                values[i] * (1.0 - f) + values[i + 1] * f
            }
        }
    }
}

/// Empirical constant of `|log xi(z) - log xi(z')| <= C |Gz - Gz'|^eta`,
/// `xi = h / (h o G |G'|)`.
pub fn distortion_constant(scheme: &GmScheme, density: &Density, n_pairs: usize, seed: u64) -> HolderEstimate {
    let eta = scheme.eta;
    let log_xi = |z: f64, gz: f64, dg: f64| density.at(z).ln() - density.at(gz).ln() - dg.abs().ln();
    pair_sup(scheme, n_pairs, seed, |cell, _, z, z2| {
        let a = scheme.g_eval(cell, z, true);
        let b = scheme.g_eval(cell, z2, true);
        let num = (log_xi(z, a.gz, a.dg) - log_xi(z2, b.gz, b.dg)).abs();
        if num == 0.0 {
            return Some(0.0);
        }
        Some(num / (a.gz - b.gz).abs().powf(eta))
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stability {
    pub values: Vec<f64>,
    /// Relative change over the last doubling.
    pub last_change: f64,
    /// Both doublings changed the estimate by at most 10%.
    pub stable: bool,
    /// Grew by more than half over the two doublings.
    pub diverging: bool,
}

/// Runs an estimator at `n, 2n, 4n` and summarizes the growth.
pub fn doubling_check(n: usize, est: impl Fn(usize) -> f64) -> Stability {
    let values: Vec<f64> = (0..3).map(|k| est(n << k)).collect();
    let ch = |a: f64, b: f64| if a > 0.0 { (b - a) / a } else if b > 0.0 { f64::INFINITY } else { 0.0 };
    let last_change = ch(values[1], values[2]);
    let stable = ch(values[0], values[1]).abs() <= 0.1 && last_change.abs() <= 0.1;
    let diverging = ch(values[0], values[2]) > 0.5;
    Stability { stable, diverging, values, last_change }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeriodicData {
    pub points: [f64; 3],
    pub periods: [f64; 3],
    pub residuals: [f64; 3],
    pub ratio: f64,
    /// Absolute uncertainty of `ratio`: rounding plus the period errors.
    pub ratio_err: f64,
    pub period_err: [f64; 3],
    pub cf: Vec<u64>,
}

impl PeriodicData {
    /// Builds the ratio data from three periods.
    pub fn from_periods(points: [f64; 3], periods: [f64; 3], residuals: [f64; 3], depth: usize) -> Result<Self> {
        Self::with_errors(points, periods, residuals, [0.0; 3], depth)
    }

    /// As `from_periods`, with absolute uncertainties on the periods.
    pub fn with_errors(
        points: [f64; 3],
        periods: [f64; 3],
        residuals: [f64; 3],
        period_err: [f64; 3],
        depth: usize,
    ) -> Result<Self> {
        let [p1, p2, p3] = periods;
        let [e1, e2, e3] = period_err;
        let den = p2 - p3;
        let scale = p1.abs() + p2.abs() + 2.0 * p3.abs();
        if den.abs() <= 1e-14 * scale.max(1e-300) {
            return Err(Error::DegenerateRatio);
        }
        let ratio = (p1 - p3) / den;
        let ratio_err = 8.0 * f64::EPSILON * (scale / den.abs()) * (1.0 + ratio.abs())
            + (e1 + e3 + ratio.abs() * (e2 + e3)) / den.abs();
        let cf = continued_fraction(ratio, ratio_err, depth).quotients;
        Ok(PeriodicData { points, periods, residuals, ratio, ratio_err, period_err, cf })
    }
}

/// Fixed point of `G` in the cylinder named by each identifier, by bisection on `G(z) - z`.
pub fn find_periodic_points(scheme: &GmScheme, cells: [f64; 3], tol: f64) -> Result<PeriodicData> {
    let mut points = [0.0; 3];
    let mut periods = [0.0; 3];
    let mut residuals = [0.0; 3];
    let mut errs = [0.0; 3];
    for (k, &id) in cells.iter().enumerate() {
        let cell = scheme.cell(id);
        if !cell.resolved || cell.censored {
            return Err(Error::RootNotBracketed(k));
        }
        let (mut lo, mut hi) = scheme.bounds(&cell);
        let h = |x: f64| scheme.g_eval(&cell, x, false).gz - x;
        let (mut hl, hh) = (h(lo), h(hi));
        if hl == 0.0 {
            hi = lo;
        } else if hh == 0.0 {
            lo = hi;
        } else if hl.signum() == hh.signum() {
            return Err(Error::RootNotBracketed(k));
        }
        let mut best = if hl.abs() < hh.abs() { (lo, hl.abs()) } else { (hi, hh.abs()) };
        while best.1 >= tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let hm = h(mid);
            if hm.abs() < best.1 {
                best = (mid, hm.abs());
            }
            if hm.signum() == hl.signum() {
                lo = mid;
                hl = hm;
            } else {
                hi = mid;
            }
        }
        if best.1 >= tol {
            return Err(Error::domain(format!("fixed point in cell {k} resolved only to {:e}", best.1)));
        }
        points[k] = best.0;
        residuals[k] = best.1;
        // |G(z) - z| = r moves the fixed point by about r / |G' - 1|
        let ev = scheme.g_eval(&cell, best.0, true);
        periods[k] = ev.phi;
        let dz = best.1 / (ev.dg - 1.0).abs().max(1e-300);
        errs[k] = (ev.dphi.abs() * dz).min(ev.phi.abs()) + 4.0 * f64::EPSILON * ev.phi.abs();
    }
    PeriodicData::with_errors(points, periods, residuals, errs, 40)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuedFraction {
    pub quotients: Vec<u64>,
    /// A narrow uncertainty interval contains a rational with this expansion.
    pub terminated: bool,
    /// The interval widened past one unit before `depth` quotients.
    pub exhausted: bool,
}

/// Continued fraction of `x +- err` by interval arithmetic: quotients are
/// emitted while both ends agree. An interval narrower than `1e-6` that
/// contains an integer ends the expansion with that integer.
pub fn continued_fraction(x: f64, err: f64, depth: usize) -> ContinuedFraction {
    let mut lo = x - err;
    let mut hi = x + err;
    let mut quotients = Vec::new();
    let pad = |v: f64| 4.0 * f64::EPSILON * v.abs();
    while quotients.len() < depth {
        let a = lo.floor();
        if !hi.is_finite() || hi > u64::MAX as f64 {
            return ContinuedFraction { quotients, terminated: false, exhausted: true };
        }
        if hi.floor() != a {
            if hi - lo < 1e-6 {
                quotients.push(hi.floor() as u64);
                return ContinuedFraction { quotients, terminated: true, exhausted: false };
            }
            return ContinuedFraction { quotients, terminated: false, exhausted: true };
        }
        quotients.push(a.max(0.0) as u64);
        let (fl, fh) = (lo - a, hi - a);
        if fl <= 0.0 {
            return ContinuedFraction { quotients, terminated: true, exhausted: false };
        }
        let (nl, nh) = (1.0 / fh, 1.0 / fl);
        lo = nl - pad(nl);
        hi = nh + pad(nh);
    }
    ContinuedFraction { quotients, terminated: false, exhausted: false }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiophantineVerdict {
    PassHeuristic,
    FailRational,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiophantineReport {
    pub verdict: DiophantineVerdict,
    pub quotients: Vec<u64>,
    pub depth: usize,
    pub quotient_cap: u64,
    pub ratio_err: f64,
    pub heuristic: bool,
}

/// Bounded partial quotients (excluding the integer part) up to `depth` pass;
/// an expansion that terminates within precision fails; a quotient above the
/// cap, or running out of precision before `depth`, is inconclusive.
pub fn diophantine_check(pd: &PeriodicData, depth: usize, quotient_cap: u64) -> Result<DiophantineReport> {
    if depth < 10 {
        return Err(Error::domain("depth must be at least 10"));
    }
    if (pd.periods[1] - pd.periods[2]).abs() == 0.0 {
        return Err(Error::DegenerateRatio);
    }
    let cf = continued_fraction(pd.ratio, pd.ratio_err, depth + 1);
    let over_cap = cf.quotients.iter().skip(1).any(|&a| a > quotient_cap);
    let verdict = if over_cap {
        DiophantineVerdict::Inconclusive
    } else if cf.terminated {
        DiophantineVerdict::FailRational
    } else if cf.exhausted {
        DiophantineVerdict::Inconclusive
    } else {
        DiophantineVerdict::PassHeuristic
    };
    Ok(DiophantineReport { verdict, quotients: cf.quotients, depth, quotient_cap, ratio_err: pd.ratio_err, heuristic: true })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UniBound {
    pub inf_abs_psi_prime: f64,
    pub argmin: f64,
    pub branch_pair: (f64, f64),
}

/// `F`-itinerary chain of the `G^n` cylinder through `z`.
fn chain_of(scheme: &GmScheme, z: f64, n: usize) -> Result<Vec<Itinerary>> {
    let mut steps = Vec::new();
    let mut x = z;
    for _ in 0..n {
        let cell = scheme.cell(x);
        if !cell.resolved || cell.censored {
            return Err(Error::domain(format!("no resolved G-cylinder at {x}")));
        }
        x = scheme.g_eval(&cell, x, false).gz;
        steps.extend(cell.steps);
    }
    Ok(steps)
}

/// `inf |psi'|` for `psi = phi_n o g1 - phi_n o g2` over a grid on `Z`, with
/// three rounds of local refinement around the minimizer. Branch pairs are
/// named by points in the respective `G^n` cylinders.
pub fn uni_lower_bound(scheme: &GmScheme, n: usize, branch_pairs: &[(f64, f64)], grid_n: usize) -> Result<UniBound> {
    if !scheme.sys.roof0.is_differentiable() {
        return Err(Error::NonDifferentiableRoof);
    }
    if n == 0 || grid_n < 2 || branch_pairs.is_empty() {
        return Err(Error::domain("need n >= 1, grid_n >= 2 and at least one branch pair"));
    }
    let mut best = UniBound { inf_abs_psi_prime: f64::INFINITY, argmin: f64::NAN, branch_pair: branch_pairs[0] };
    for &(z1, z2) in branch_pairs {
        let c1 = chain_of(scheme, z1, n)?;
        let c2 = chain_of(scheme, z2, n)?;
        // d/dy phi_n(g(y)) = dphi / dG at x = g(y)
        let dpsi = |y: f64| {
            let a = scheme.chain_eval(&c1, scheme.pullback(&c1, y), true);
            let b = scheme.chain_eval(&c2, scheme.pullback(&c2, y), true);
            (a.dphi / a.dg - b.dphi / b.dg).abs()
        };
        let (mut lo, mut hi) = (scheme.z_lo, scheme.z_hi);
        let mut inf = f64::INFINITY;
        let mut arg = f64::NAN;
        for _round in 0..4 {
            let h = (hi - lo) / grid_n as f64;
            let vals: Vec<(f64, f64)> = (0..=grid_n)
                .into_par_iter()
                .map(|k| {
                    let y = (lo + h * k as f64).clamp(scheme.z_lo, scheme.z_hi);
                    (y, dpsi(y))
                })
                .collect();
            for (y, v) in vals {
                if v < inf {
                    inf = v;
                    arg = y;
                }
            }
            lo = (arg - h).max(scheme.z_lo);
            hi = (arg + h).min(scheme.z_hi);
        }
        if inf < best.inf_abs_psi_prime {
            best = UniBound { inf_abs_psi_prime: inf, argmin: arg, branch_pair: (z1, z2) };
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecurrenceRow {
    pub n: u64,
    /// `mu_X([tau0] = n)`
    pub mu_level: f64,
    pub mu_xq: f64,
    pub mu_xq_plus: f64,
    pub hits: usize,
    pub hits_plus: usize,
    pub insufficient: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecurrenceTable {
    pub rows: Vec<RecurrenceRow>,
    pub n_samples: usize,
    pub seed: u64,
}

/// Orbit estimates of `mu_X(X_q(n))` and `mu_X(X_q^+(n))`, where the recurrence
/// condition asks for `tau0(f^j x) >= n^{1-q}` at some `1 <= j < d_star log n`.
pub fn recurrence_statistic(
    map: &MapSpec,
    roof: &RoofSpec,
    q: f64,
    d_star: f64,
    n_grid: &[u64],
    n_samples: usize,
    seed: u64,
) -> Result<RecurrenceTable> {
    if !(q > 0.0 && q < 1.0) || !(d_star > 0.0) {
        return Err(Error::domain("need q in (0,1) and d_star > 0"));
    }
    let windows: Vec<usize> = n_grid.iter().map(|&n| (d_star * (n as f64).ln()).max(0.0).ceil() as usize).collect();
    let lookahead = windows.iter().copied().max().unwrap_or(1);
    type Counts = (Vec<usize>, Vec<usize>, Vec<usize>);
    let parts: Vec<Counts> = rng::chunks(n_samples)
        .into_par_iter()
        .enumerate()
        .map(|(ci, len)| {
            let mut r = rng::stream(seed, ci as u64);
            let mut x: f64 = r.gen();
            for _ in 0..1000 {
                x = map.step(x);
            }
            let mut buf: std::collections::VecDeque<f64> = std::collections::VecDeque::new();
            let mut y = x;
            for _ in 0..=lookahead {
                buf.push_back(roof.eval(y));
                y = map.step(y);
            }
            let m = n_grid.len();
            let (mut lvl, mut xq, mut xqp) = (vec![0; m], vec![0; m], vec![0; m]);
            for _ in 0..len {
                let t0 = buf[0];
                let level = if t0.is_finite() { t0.floor() as u64 } else { u64::MAX };
                for (k, &n) in n_grid.iter().enumerate() {
                    if level < n {
                        continue;
                    }
                    let thr = (n as f64).powf(1.0 - q);
                    let rec = (1..windows[k]).any(|j| j < buf.len() && buf[j] >= thr);
                    if level == n {
                        lvl[k] += 1;
                        if rec {
                            xq[k] += 1;
                        }
                    }
                    if rec {
                        xqp[k] += 1;
                    }
                }
                buf.pop_front();
                buf.push_back(roof.eval(y));
                y = map.step(y);
            }
            (lvl, xq, xqp)
        })
        .collect();
    let nf = n_samples as f64;
    let rows = n_grid
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let lv: usize = parts.iter().map(|p| p.0[k]).sum();
            let h: usize = parts.iter().map(|p| p.1[k]).sum();
            let hp: usize = parts.iter().map(|p| p.2[k]).sum();
            RecurrenceRow {
                n,
                mu_level: lv as f64 / nf,
                mu_xq: h as f64 / nf,
                mu_xq_plus: hp as f64 / nf,
                hits: h,
                hits_plus: hp,
                insufficient: h < 30,
            }
        })
        .collect();
    Ok(RecurrenceTable { rows, n_samples, seed })
}

/// Log-log fit of `mu_X(X_q^+(n))` over rows with at least 30 hits; the decay
/// exponent is `-slope`, to be compared with `beta + p`.
pub fn recurrence_exponent(table: &RecurrenceTable) -> Result<LineFit> {
    let rows: Vec<&RecurrenceRow> = table.rows.iter().filter(|r| r.hits_plus >= 30).collect();
    if rows.len() < 3 {
        return Err(Error::InsufficientHits { found: rows.len(), needed: 3 });
    }
    let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mu_xq_plus.ln()).collect();
    Ok(ols(&x, &y))
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub entries: Vec<ReportEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportEntry {
    pub hypothesis: String,
    pub status: String,
    pub constants: serde_json::Value,
    pub n_samples: usize,
    pub seed: u64,
}

impl HypothesisReport {
    pub fn push(&mut self, hypothesis: &str, status: &str, constants: serde_json::Value, n_samples: usize, seed: u64) {
        self.entries.push(ReportEntry {
            hypothesis: hypothesis.to_string(),
            status: status.to_string(),
            constants,
            n_samples,
            seed,
        });
    }

    /// True when some entry reports a violation.
    pub fn any_violation(&self) -> bool {
        self.entries.iter().any(|e| e.status == "VIOLATED" || e.status == "FAIL_RATIONAL")
    }
}
