//! Suspension semiflow over an induced system: flow evaluation, Monte Carlo
//! correlations, fiber moments and the projection check.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inducing::{Excursion, GOrbit, GmScheme, InducedSystem};
use crate::numerics::{gauss_legendre, pairwise_sum};
use crate::rng;

/// Batch length for batch-means standard errors along orbits.
const BATCH: usize = 256;

/// Cap on laps in a single `flow_advance`.
pub const MAX_LAPS: u64 = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowPoint {
    pub y: f64,
    pub u: f64,
}

/// Dependence of an observable on the base point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseShape {
    One,
    /// `1 + amp cos(2 pi freq y + phase)`
    Cosine { amp: f64, freq: f64, phase: f64 },
    /// `1 + amp |y - y0|^eta`
    Holder { amp: f64, y0: f64, eta: f64 },
}

/// Dependence on the fiber height; every shape vanishes off `[0,1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FiberShape {
    /// Indicator of `[0,1]`.
    Unit,
    /// `exp(1 - 1/(1 - r^2))`, `r = (u - center)/halfwidth`, a C-infinity bump.
    Bump { center: f64, halfwidth: f64 },
}

/// Separable observable `amp * a(y) * b(u)` on `Y x [0,1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    pub amp: f64,
    pub base: BaseShape,
    pub fiber: FiberShape,
}

impl Observable {
    pub fn zero() -> Self {
        Observable { amp: 0.0, base: BaseShape::One, fiber: FiberShape::Unit }
    }

    pub fn constant(value: f64) -> Self {
        Observable { amp: value, base: BaseShape::One, fiber: FiberShape::Unit }
    }

    /// Smooth bump in the fiber, centered in `(0,1)`.
    pub fn fiber_bump(amp: f64) -> Self {
        Observable { amp, base: BaseShape::One, fiber: FiberShape::Bump { center: 0.5, halfwidth: 0.5 } }
    }

    pub fn with_base(mut self, base: BaseShape) -> Self {
        self.base = base;
        self
    }

    pub fn with_fiber(mut self, fiber: FiberShape) -> Self {
        self.fiber = fiber;
        self
    }

    /// Random Hoelder test observable drawn from `rng`.
    pub fn random_holder(rng: &mut impl Rng, y_lo: f64, y_hi: f64) -> Self {
        let eta = rng.gen_range(0.3..1.0);
        let y0 = y_lo + (y_hi - y_lo) * rng.gen::<f64>();
        let center: f64 = rng.gen_range(0.3..0.7);
        let halfwidth = rng.gen_range(0.15..center.min(1.0 - center));
        Observable {
            amp: rng.gen_range(0.5..2.0),
            base: BaseShape::Holder { amp: rng.gen_range(-0.9..2.0), y0, eta },
            fiber: FiberShape::Bump { center, halfwidth },
        }
    }

    #[inline]
    pub fn base_value(&self, y: f64) -> f64 {
        match self.base {
            BaseShape::One => 1.0,
            BaseShape::Cosine { amp, freq, phase } => 1.0 + amp * (std::f64::consts::TAU * freq * y + phase).cos(),
            BaseShape::Holder { amp, y0, eta } => 1.0 + amp * (y - y0).abs().powf(eta),
        }
    }

    #[inline]
    pub fn fiber_value(&self, u: f64) -> f64 {
        match self.fiber {
            FiberShape::Unit => {
                if (0.0..=1.0).contains(&u) {
                    1.0
                } else {
                    0.0
                }
            }
            FiberShape::Bump { center, halfwidth } => {
                let r = (u - center) / halfwidth;
                if r.abs() >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - r * r)).exp()
                }
            }
        }
    }

    #[inline]
    pub fn eval(&self, y: f64, u: f64) -> f64 {
        if self.amp == 0.0 {
            return 0.0;
        }
        let b = self.fiber_value(u);
        if b == 0.0 {
            return 0.0;
        }
        self.amp * self.base_value(y) * b
    }

    /// Fiber interval outside of which `eval` vanishes.
    pub fn fiber_support(&self) -> (f64, f64) {
        match self.fiber {
            FiberShape::Unit => (0.0, 1.0),
            FiberShape::Bump { center, halfwidth } => ((center - halfwidth).max(0.0), (center + halfwidth).min(1.0)),
        }
    }

    pub fn support_in_open_fiber(&self) -> bool {
        matches!(self.fiber, FiberShape::Bump { center, halfwidth } if center - halfwidth >= 0.0 && center + halfwidth <= 1.0)
    }

    pub fn sup_norm(&self) -> f64 {
        let a = match self.base {
            BaseShape::One => 1.0,
            BaseShape::Cosine { amp, .. } => 1.0 + amp.abs(),
            BaseShape::Holder { amp, .. } => 1.0 + amp.abs(),
        };
        self.amp.abs() * a
    }

    /// Hoelder exponent in `y`.
    pub fn holder_exp(&self) -> f64 {
        match self.base {
            BaseShape::Holder { eta, .. } => eta,
            _ => 1.0,
        }
    }

    /// Number of fiber derivatives that are bounded; `None` when unlimited.
    pub fn smooth_order(&self) -> Option<u32> {
        match self.fiber {
            FiberShape::Unit => Some(0),
            FiberShape::Bump { .. } => None,
        }
    }

    /// `int_0^1 e^{s u} b(u) du` by Gauss-Legendre on the fiber support.
    pub fn fiber_moment(&self, s: Complex64, nodes: &(Vec<f64>, Vec<f64>)) -> Complex64 {
        let (lo, hi) = self.fiber_support();
        let h = 0.5 * (hi - lo);
        let c = 0.5 * (hi + lo);
        let mut acc = Complex64::new(0.0, 0.0);
        for (x, w) in nodes.0.iter().zip(&nodes.1) {
            let u = c + h * x;
            acc += (s * u).exp() * (w * h * self.fiber_value(u));
        }
        acc
    }
}

/// `v_s(y) = int_0^1 e^{s u} v(y,u) du`.
pub fn moment_vs(v: &Observable, s: Complex64, y: f64, n_quad: usize) -> Result<Complex64> {
    if n_quad < 16 {
        return Err(Error::domain("n_quad must be at least 16"));
    }
    let nodes = gauss_legendre(n_quad);
    Ok(v.fiber_moment(s, &nodes) * (v.amp * v.base_value(y)))
}

/// Fiber part of `J(s)`: `-int_0^1 int_0^u e^{s u} b_v(u) e^{-s t} b_w(t) dt du`.
fn j_fiber(v: &Observable, w: &Observable, s: Complex64, nodes: &(Vec<f64>, Vec<f64>)) -> Complex64 {
    // t = u x maps the triangle to the unit square
    let mut acc = Complex64::new(0.0, 0.0);
    let (lo, hi) = v.fiber_support();
    let h = 0.5 * (hi - lo);
    let c = 0.5 * (hi + lo);
    for (xu, wu) in nodes.0.iter().zip(&nodes.1) {
        let u = c + h * xu;
        let bv = v.fiber_value(u);
        if bv == 0.0 {
            continue;
        }
        let mut inner = Complex64::new(0.0, 0.0);
        for (xt, wt) in nodes.0.iter().zip(&nodes.1) {
            let t = 0.5 * u * (1.0 + xt);
            inner += (-s * t).exp() * (wt * 0.5 * u * w.fiber_value(t));
        }
        acc += (s * u).exp() * bv * inner * (wu * h);
    }
    -acc
}

/// `J(s) = -int_Y int_0^1 int_0^u e^{s u} v(y,u) e^{-s t} w(y,t) dt du dmu` over weighted base points.
pub fn j_hat_weighted(v: &Observable, w: &Observable, s: Complex64, pts: &[(f64, f64)], n_quad: usize) -> Complex64 {
    if v.amp == 0.0 || w.amp == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let nodes = gauss_legendre(n_quad.max(16));
    let fiber = j_fiber(v, w, s, &nodes);
    let wsum: f64 = pts.iter().map(|p| p.1).sum();
    let base: Vec<f64> = pts.iter().map(|&(y, wt)| wt * v.base_value(y) * w.base_value(y)).collect();
    fiber * (v.amp * w.amp * pairwise_sum(&base) / wsum)
}

/// Monte Carlo `J(s)` over samples of `mu`.
pub fn j_hat(v: &Observable, w: &Observable, s: Complex64, mu_samples: &[f64], n_quad: usize) -> Complex64 {
    let pts: Vec<(f64, f64)> = mu_samples.iter().map(|&y| (y, 1.0)).collect();
    j_hat_weighted(v, w, s, &pts, n_quad)
}

/// Flows `p` for time `t`; returns the new point and the lap number.
pub fn flow_advance(sys: &InducedSystem, p: FlowPoint, t: f64) -> Result<(FlowPoint, u64)> {
    if !(t >= 0.0) {
        return Err(Error::domain("t must be nonnegative"));
    }
    let mut y = p.y;
    let mut u = p.u + t;
    let mut lap = 0u64;
    loop {
        let e = sys.excursion(y);
        if e.censored {
            return Err(Error::MaxIterExceeded(sys.max_iter));
        }
        if u < e.tau {
            return Ok((FlowPoint { y, u }, lap));
        }
        u -= e.tau;
        y = e.fx;
        lap += 1;
        if lap >= MAX_LAPS {
            return Err(Error::MaxIterExceeded(MAX_LAPS));
        }
    }
}

/// One flow point moved along an increasing time grid, keeping the excursion
/// of the current base point.
struct Cursor<'a> {
    sys: &'a InducedSystem,
    y: f64,
    /// height above the current base point
    h: f64,
    e: Excursion,
}

impl Cursor<'_> {
    /// Moves forward by `dt`; `None` when an excursion is censored.
    fn advance(&mut self, dt: f64) -> Option<()> {
        self.h += dt;
        while self.h >= self.e.tau {
            self.h -= self.e.tau;
            self.y = self.e.fx;
            self.e = self.sys.excursion(self.y);
            if self.e.censored {
                return None;
            }
        }
        Some(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationSeries {
    pub t_grid: Vec<f64>,
    pub rho: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    pub censored: usize,
}

/// `per_decade` logarithmically spaced points on `[t_min, t_max]`.
pub fn log_grid(t_min: f64, t_max: f64, per_decade: usize) -> Vec<f64> {
    let decades = (t_max / t_min).log10();
    let n = (decades * per_decade as f64).round() as usize;
    (0..=n).map(|i| t_min * 10f64.powf(decades * i as f64 / n.max(1) as f64)).collect()
}

/// Monte Carlo `rho_{v,w}(t) = int v w o F_t dmu^tau`, reduced to `Y x [0,1]`.
///
/// Base points are successive returns of one orbit per chunk; each `(y, u)`
/// is advanced through the whole grid (common random numbers).
pub fn correlate(
    sys: &InducedSystem,
    v: &Observable,
    w: &Observable,
    t_grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<CorrelationSeries> {
    if n < 1000 {
        return Err(Error::domain("correlate needs n >= 1000"));
    }
    if t_grid.windows(2).any(|p| !(p[1] > p[0])) || t_grid.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::domain("t_grid must be nonnegative and increasing"));
    }
    let m = t_grid.len();
    let (vlo, vhi) = v.fiber_support();
    let burn_in = 64;
    let parts: Vec<(Vec<Vec<f64>>, usize)> = rng::chunks(n)
        .into_par_iter()
        .enumerate()
        .map(|(ci, len)| {
            let mut stream = sys.stream(seed, ci as u64, burn_in);
            let mut vals = vec![Vec::with_capacity(len); m];
            let mut censored = 0;
            let mut done = 0;
            while done < len {
                let (y, e) = stream.next_return();
                let u = vlo + (vhi - vlo) * stream.rng.gen::<f64>();
                if e.censored {
                    censored += 1;
                    continue;
                }
                let vv = v.eval(y, u) * (vhi - vlo);
                let mut row = vec![0.0; m];
                if vv != 0.0 {
                    let mut cur = Cursor { sys, y, h: u, e };
                    let mut t_prev = 0.0;
                    let mut ok = true;
                    for (k, &t) in t_grid.iter().enumerate() {
                        if cur.advance(t - t_prev).is_none() {
                            ok = false;
                            break;
                        }
                        t_prev = t;
                        row[k] = vv * w.eval(cur.y, cur.h);
                    }
                    if !ok {
                        censored += 1;
                        continue;
                    }
                }
                for k in 0..m {
                    vals[k].push(row[k]);
                }
                done += 1;
            }
            let batches: Vec<Vec<f64>> = vals
                .iter()
                .map(|c| c.chunks(BATCH).map(|b| pairwise_sum(b)).collect())
                .collect();
            (batches, censored)
        })
        .collect();
    let nf = n as f64;
    let mut rho = vec![0.0; m];
    let mut stderr = vec![0.0; m];
    let censored = parts.iter().map(|p| p.1).sum();
    let lens: Vec<f64> = rng::chunks(n)
        .iter()
        .flat_map(|&len| (0..len.div_ceil(BATCH)).map(move |i| (len - i * BATCH).min(BATCH) as f64))
        .collect();
    for k in 0..m {
        let sums: Vec<f64> = parts.iter().flat_map(|p| p.0[k].iter().copied()).collect();
        let mean = pairwise_sum(&sums) / nf;
        // batch means: variance of batch averages, weighted by batch length
        let dev: Vec<f64> = sums.iter().zip(&lens).map(|(s, l)| (s - l * mean).powi(2) / l).collect();
        let nb = sums.len() as f64;
        let var = if nb > 1.0 { pairwise_sum(&dev) / (nb - 1.0) } else { 0.0 };
        rho[k] = mean;
        stderr[k] = (var / nf).sqrt();
    }
    Ok(CorrelationSeries { t_grid: t_grid.to_vec(), rho, stderr, n_samples: n, seed, censored })
}

/// `int v dmu^tau = E_mu int_0^1 v(y,u) du`, estimated on `mu` samples.
pub fn strip_integral(v: &Observable, mu_samples: &[f64]) -> f64 {
    let nodes = gauss_legendre(32);
    let fiber = v.fiber_moment(Complex64::new(0.0, 0.0), &nodes).re;
    let a: Vec<f64> = mu_samples.iter().map(|&y| v.base_value(y)).collect();
    v.amp * fiber * pairwise_sum(&a) / mu_samples.len() as f64
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Projection {
    pub lhs: f64,
    pub rhs: f64,
    pub z: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
}

/// Compares `int g o pi dmu_Z^phi` with `int g dmu^tau`.
///
/// The left side samples `mu_Z` along a `G`-orbit, picks a uniform lap
/// `l < sigma` and weights by `sigma` (ratio estimator). The right side samples
/// `mu` along an independent `F`-orbit.
pub fn projection_discrepancy(
    scheme: &GmScheme,
    sys: &InducedSystem,
    g: &Observable,
    n: usize,
    seed: u64,
) -> Result<Projection> {
    if n < 1000 {
        return Err(Error::domain("projection needs n >= 1000"));
    }
    let (glo, ghi) = g.fiber_support();
    let span = ghi - glo;
    // left side
    let left: Vec<(f64, f64, f64, f64, f64)> = rng::chunks(n)
        .into_par_iter()
        .enumerate()
        .map(|(ci, len)| {
            let mut orbit = GOrbit::new(scheme, seed, 2 * ci as u64, 16);
            let mut r = rng::stream(seed, 2 * ci as u64 + 1);
            let (mut ws, mut xs, mut ww, mut wx, mut xx) = (Vec::new(), Vec::new(), 0.0, 0.0, 0.0);
            for _ in 0..len {
                let cell = orbit.next_cell();
                let l = r.gen_range(0..cell.sigma as usize);
                let mut y = cell.z;
                for it in &cell.steps[..l] {
                    y = sys.apply_itinerary(it, y, false).fx;
                }
                let u = glo + span * r.gen::<f64>();
                let sig = cell.sigma as f64;
                let x = sig * g.eval(y, u) * span;
                ws.push(sig);
                xs.push(x);
                ww += sig * sig;
                wx += sig * x;
                xx += x * x;
            }
            (pairwise_sum(&ws), pairwise_sum(&xs), ww, wx, xx)
        })
        .collect();
    let nf = n as f64;
    let sw: f64 = left.iter().map(|p| p.0).sum::<f64>() / nf;
    let sx: f64 = left.iter().map(|p| p.1).sum::<f64>() / nf;
    let sww: f64 = left.iter().map(|p| p.2).sum::<f64>() / nf;
    let swx: f64 = left.iter().map(|p| p.3).sum::<f64>() / nf;
    let sxx: f64 = left.iter().map(|p| p.4).sum::<f64>() / nf;
    let lhs = sx / sw;
    // delta method for a ratio of means
    let var_l = (sxx - 2.0 * lhs * swx + lhs * lhs * sww) / (sw * sw) / nf;
    // right side on an independent stream
    let rseed = seed ^ 0x9e37_79b9_7f4a_7c15;
    let right: Vec<(f64, f64)> = rng::chunks(n)
        .into_par_iter()
        .enumerate()
        .map(|(ci, len)| {
            let mut st = sys.stream(rseed, ci as u64, 16);
            let mut xs = Vec::with_capacity(len);
            while xs.len() < len {
                let (y, e) = st.next_return();
                if e.censored {
                    continue;
                }
                let u = glo + span * st.rng.gen::<f64>();
                xs.push(g.eval(y, u) * span);
            }
            let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
            (pairwise_sum(&xs), pairwise_sum(&sq))
        })
        .collect();
    let rhs = right.iter().map(|p| p.0).sum::<f64>() / nf;
    let var_r = (right.iter().map(|p| p.1).sum::<f64>() / nf - rhs * rhs).max(0.0) / nf;
    let se = (var_l.max(0.0) + var_r).sqrt();
    let z = if se > 0.0 { (lhs - rhs).abs() / se } else if lhs == rhs { 0.0 } else { f64::INFINITY };
    Ok(Projection { lhs, rhs, z, lhs_se: var_l.max(0.0).sqrt(), rhs_se: var_r.sqrt() })
}
