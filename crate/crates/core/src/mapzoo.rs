//! Base interval maps and roof functions.
//!
//! Maps are piecewise monotone on `[0,1]` with explicit branch bookkeeping so
//! that inverse branches and cylinder structure are available downstream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer than this to a branch endpoint snap to the nearer branch.
pub const BRANCH_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Family {
    AfnIntermittent,
    LsvMarkov,
    LogisticCe,
    /// Full-branch affine Markov map; each branch is stretched onto `[0,1]`.
    PiecewiseLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub family: Family,
    pub beta: f64,
    pub a: f64,
    pub ce_param: f64,
    pub branch_endpoints: Vec<f64>,
}

fn bisect(mut lo: f64, mut hi: f64, tol: f64, h: impl Fn(f64) -> f64) -> f64 {
    // h increasing, h(lo) <= 0 <= h(hi)
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl MapSpec {
    /// `f(x) = x(1 + a x^{1/beta}) mod 1`.
    pub fn afn(beta: f64, a: f64) -> Result<Self> {
        if !(beta > 0.5 && beta < 1.0) {
            return Err(Error::domain(format!("beta = {beta} not in (1/2, 1)")));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::domain(format!("a = {a} must be positive")));
        }
        let alpha = 1.0 / beta;
        let top = 1.0 + a;
        let n_full = if (top - top.round()).abs() < 1e-12 { top.round() as usize } else { top.ceil() as usize };
        let mut ends = vec![0.0];
        for k in 1..n_full {
            let k = k as f64;
            ends.push(bisect(0.0, 1.0, 1e-14, |x| x * (1.0 + a * x.powf(alpha)) - k));
        }
        ends.push(1.0);
        let family = if (a - a.round()).abs() < 1e-12 { Family::LsvMarkov } else { Family::AfnIntermittent };
        Ok(MapSpec { family, beta, a, ce_param: 0.0, branch_endpoints: ends })
    }

    /// Markov case of [`MapSpec::afn`] with integer coefficient.
    pub fn lsv(beta: f64, a: u32) -> Result<Self> {
        if a == 0 {
            return Err(Error::domain("a must be a positive integer"));
        }
        Self::afn(beta, a as f64)
    }

    pub fn logistic(ce_param: f64) -> Result<Self> {
        if !(ce_param > 0.0 && ce_param <= 4.0) {
            return Err(Error::domain(format!("ce_param = {ce_param} not in (0, 4]")));
        }
        Ok(MapSpec {
            family: Family::LogisticCe,
            beta: 0.0,
            a: 0.0,
            ce_param,
            branch_endpoints: vec![0.0, 0.5, 1.0],
        })
    }

    pub fn piecewise_linear(branch_endpoints: Vec<f64>) -> Result<Self> {
        let ok = branch_endpoints.len() >= 2
            && branch_endpoints[0] == 0.0
            && *branch_endpoints.last().unwrap() == 1.0
            && branch_endpoints.windows(2).all(|w| w[1] > w[0]);
        if !ok {
            return Err(Error::domain("branch endpoints must increase from 0 to 1"));
        }
        Ok(MapSpec { family: Family::PiecewiseLinear, beta: 0.0, a: 0.0, ce_param: 0.0, branch_endpoints })
    }

    /// `x -> 2x mod 1`.
    pub fn doubling() -> Self {
        Self::piecewise_linear(vec![0.0, 0.5, 1.0]).unwrap()
    }

    /// Re-derives branch data for specs read from a config file.
    pub fn normalized(self) -> Result<Self> {
        match self.family {
            Family::AfnIntermittent | Family::LsvMarkov => {
                let m = Self::afn(self.beta, self.a)?;
                if self.family == Family::LsvMarkov && m.family != Family::LsvMarkov {
                    return Err(Error::config("map.a", "LSV_MARKOV needs an integer a"));
                }
                Ok(m)
            }
            Family::LogisticCe => Self::logistic(self.ce_param),
            Family::PiecewiseLinear => Self::piecewise_linear(self.branch_endpoints),
        }
    }

    pub fn is_afn(&self) -> bool {
        matches!(self.family, Family::AfnIntermittent | Family::LsvMarkov)
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        1.0 / self.beta
    }

    pub fn n_branches(&self) -> usize {
        self.branch_endpoints.len() - 1
    }

    /// Domain of branch `k`.
    pub fn branch_domain(&self, k: usize) -> (f64, f64) {
        (self.branch_endpoints[k], self.branch_endpoints[k + 1])
    }

    /// Index of the branch containing `x`; the right endpoint belongs to the last branch.
    pub fn branch_of(&self, x: f64) -> usize {
        let e = &self.branch_endpoints;
        let n = e.len() - 1;
        let k = e.partition_point(|&b| b <= x).saturating_sub(1).min(n - 1);
        // snap
        if k + 1 < n && e[k + 1] - x < BRANCH_TOL {
            k + 1
        } else if k > 0 && x - e[k] < BRANCH_TOL && x < e[k] {
            k - 1
        } else {
            k
        }
    }

    /// Branch formula without reduction; continuous on the closed branch domain.
    #[inline]
    pub fn branch_value(&self, k: usize, x: f64) -> f64 {
        match self.family {
            Family::AfnIntermittent | Family::LsvMarkov => x * (1.0 + self.a * x.powf(self.alpha())) - k as f64,
            Family::LogisticCe => self.ce_param * x * (1.0 - x),
            Family::PiecewiseLinear => {
                let (lo, hi) = self.branch_domain(k);
                (x - lo) / (hi - lo)
            }
        }
    }

    #[inline]
    pub fn branch_derivative(&self, k: usize, x: f64) -> f64 {
        match self.family {
            Family::AfnIntermittent | Family::LsvMarkov => {
                let al = self.alpha();
                1.0 + self.a * (1.0 + al) * x.powf(al)
            }
            Family::LogisticCe => self.ce_param * (1.0 - 2.0 * x),
            Family::PiecewiseLinear => {
                let (lo, hi) = self.branch_domain(k);
                1.0 / (hi - lo)
            }
        }
    }

    #[inline]
    pub fn second_derivative(&self, x: f64) -> f64 {
        match self.family {
            Family::AfnIntermittent | Family::LsvMarkov => {
                let al = self.alpha();
                self.a * (1.0 + al) * al * x.powf(al - 1.0)
            }
            Family::LogisticCe => -2.0 * self.ce_param,
            Family::PiecewiseLinear => 0.0,
        }
    }

    /// Largest value of branch `k` (its image is `[0, top]`).
    pub fn branch_top(&self, k: usize) -> f64 {
        let (_, hi) = self.branch_domain(k);
        match self.family {
            Family::LogisticCe => self.ce_param / 4.0,
            _ => self.branch_value(k, hi).min(1.0),
        }
    }

    /// Preimage of `y` inside branch `k`.
    pub fn branch_inverse(&self, k: usize, y: f64) -> f64 {
        match self.family {
            Family::AfnIntermittent | Family::LsvMarkov => {
                let al = self.alpha();
                let a = self.a;
                let target = y + k as f64;
                let (lo, hi) = self.branch_domain(k);
                if k == 0 && y <= 0.0 {
                    return 0.0;
                }
                // h is increasing and convex, so Newton from the right never overshoots.
                let mut x = if k == 0 { target.min(hi) } else { hi };
                for _ in 0..200 {
                    let xa = x.powf(al);
                    let h = x * (1.0 + a * xa) - target;
                    let dh = 1.0 + a * (1.0 + al) * xa;
                    let nx = (x - h / dh).max(lo);
                    if (nx - x).abs() <= 1e-17 * x.max(1e-300) || nx == x {
                        x = nx;
                        break;
                    }
                    x = nx;
                }
                x.clamp(lo, hi)
            }
            Family::LogisticCe => {
                let d = (1.0 - 4.0 * y / self.ce_param).max(0.0).sqrt();
                if k == 0 {
                    0.5 * (1.0 - d)
                } else {
                    0.5 * (1.0 + d)
                }
            }
            Family::PiecewiseLinear => {
                let (lo, hi) = self.branch_domain(k);
                lo + y * (hi - lo)
            }
        }
    }

    /// Derivative-free fast step used in Monte Carlo loops; no domain checks.
    #[inline]
    pub fn step(&self, x: f64) -> f64 {
        match self.family {
            Family::AfnIntermittent | Family::LsvMarkov => {
                let v = x * (1.0 + self.a * x.powf(self.alpha()));
                let kmax = (self.branch_endpoints.len() - 2) as f64;
                let k = v.floor().min(kmax);
                (v - k).clamp(0.0, 1.0)
            }
            Family::LogisticCe => (self.ce_param * x * (1.0 - x)).clamp(0.0, 1.0),
            Family::PiecewiseLinear => {
                let k = self.branch_of(x);
                self.branch_value(k, x).clamp(0.0, 1.0)
            }
        }
    }

    fn check_domain(x: f64) -> Result<f64> {
        if !(x >= -BRANCH_TOL && x <= 1.0 + BRANCH_TOL) {
            return Err(Error::domain(format!("x = {x} outside [0,1]")));
        }
        Ok(x.clamp(0.0, 1.0))
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let x = Self::check_domain(x)?;
        let k = self.branch_of(x);
        Ok(self.branch_value(k, x).clamp(0.0, 1.0))
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        let x = Self::check_domain(x)?;
        let e = &self.branch_endpoints;
        for &b in &e[1..e.len() - 1] {
            if (x - b).abs() < BRANCH_TOL {
                return Err(Error::BranchBoundary { x, endpoint: b });
            }
        }
        Ok(self.branch_derivative(self.branch_of(x), x))
    }

    pub fn orbit(&self, x0: f64, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n + 1);
        let mut x = Self::check_domain(x0)?;
        out.push(x);
        for _ in 0..n {
            x = self.eval(x)?;
            out.push(x);
        }
        Ok(out)
    }

    /// `max |f''| / f'^2` over `n_grid` interior points per branch.
    pub fn adler_statistic(&self, n_grid: usize) -> Result<f64> {
        if n_grid < 100 {
            return Err(Error::domain("n_grid must be at least 100"));
        }
        let mut worst: f64 = 0.0;
        for k in 0..self.n_branches() {
            let (lo, hi) = self.branch_domain(k);
            for i in 0..n_grid {
                let x = lo + (hi - lo) * (i as f64 + 0.5) / n_grid as f64;
                let d1 = self.branch_derivative(k, x);
                let r = if d1 == 0.0 { f64::INFINITY } else { self.second_derivative(x).abs() / (d1 * d1) };
                if r.is_nan() {
                    continue;
                }
                worst = worst.max(r);
            }
        }
        Ok(worst)
    }

    /// Short stable identifier used in file headers.
    pub fn fingerprint(&self) -> u64 {
        let text = serde_json::to_string(self).expect("map spec serializes");
        crate::io::hash64(text.as_bytes())
    }
}

/// Shape used for the roof or for the smooth factor `g` of a singular roof.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum Profile {
    Constant { value: f64 },
    /// `c0 + c1 x`
    Affine { c0: f64, c1: f64 },
    /// `c0 + amp cos(2 pi freq x)`
    Cosine { c0: f64, amp: f64, freq: f64 },
    /// `low` left of `at`, `high` from `at` on.
    Step { low: f64, high: f64, at: f64 },
    /// `c0 + amp |x - center|^exponent`
    Cusp { c0: f64, amp: f64, center: f64, exponent: f64 },
}

impl Profile {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::Affine { c0, c1 } => c0 + c1 * x,
            Profile::Cosine { c0, amp, freq } => c0 + amp * (std::f64::consts::TAU * freq * x).cos(),
            Profile::Step { low, high, at } => {
                if x < at {
                    low
                } else {
                    high
                }
            }
            Profile::Cusp { c0, amp, center, exponent } => c0 + amp * (x - center).abs().powf(exponent),
        }
    }

    pub fn derivative(&self, x: f64) -> Option<f64> {
        match *self {
            Profile::Constant { .. } => Some(0.0),
            Profile::Affine { c1, .. } => Some(c1),
            Profile::Cosine { amp, freq, .. } => {
                let w = std::f64::consts::TAU * freq;
                Some(-amp * w * (w * x).sin())
            }
            Profile::Step { .. } | Profile::Cusp { .. } => None,
        }
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self, Profile::Step { .. } | Profile::Cusp { .. })
    }

    pub fn is_constant(&self) -> bool {
        match *self {
            Profile::Constant { .. } => true,
            Profile::Affine { c1, .. } => c1 == 0.0,
            Profile::Cosine { amp, .. } => amp == 0.0,
            Profile::Step { low, high, .. } => low == high,
            Profile::Cusp { amp, .. } => amp == 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RoofKind {
    HoelderBv,
    CriticalSingular,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoofSpec {
    pub kind: RoofKind,
    pub eta: f64,
    pub floor: f64,
    pub g: Profile,
    /// Singularity location, CRITICAL_SINGULAR only.
    pub x0: f64,
    /// Singularity exponent, CRITICAL_SINGULAR only.
    pub beta: f64,
}

impl RoofSpec {
    pub fn constant(value: f64) -> Result<Self> {
        Self {
            kind: RoofKind::Constant,
            eta: 1.0,
            floor: 1.0,
            g: Profile::Constant { value },
            x0: 0.0,
            beta: 0.0,
        }
        .validated()
    }

    pub fn hoelder(g: Profile, eta: f64) -> Result<Self> {
        Self { kind: RoofKind::HoelderBv, eta, floor: 1.0, g, x0: 0.0, beta: 0.0 }.validated()
    }

    /// `g(x) |x - x0|^{-1/beta}`.
    pub fn critical_singular(g: Profile, x0: f64, beta: f64) -> Result<Self> {
        Self { kind: RoofKind::CriticalSingular, eta: 1.0, floor: 1.0, g, x0, beta }.validated()
    }

    pub fn with_floor(mut self, floor: f64) -> Result<Self> {
        self.floor = floor;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.floor >= 1.0) {
            return Err(Error::config("roof.floor", "floor must be at least 1"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::config("roof.eta", "eta must lie in (0,1]"));
        }
        if self.kind == RoofKind::CriticalSingular {
            if !(self.x0 > 0.0 && self.x0 < 1.0) {
                return Err(Error::config("roof.x0", "x0 must lie in (0,1)"));
            }
            if !(self.beta > 0.5 && self.beta < 1.0) {
                return Err(Error::config("roof.beta", "beta must lie in (1/2,1)"));
            }
        }
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            let v = self.eval(x);
            if v.is_finite() && !(v > self.floor || (v == self.floor && self.floor > 1.0)) {
                return Err(Error::config("roof.g", format!("roof value {v} at x = {x} not above floor {}", self.floor)));
            }
        }
        Ok(self)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            RoofKind::Constant | RoofKind::HoelderBv => self.g.value(x),
            RoofKind::CriticalSingular => {
                if x == self.x0 {
                    f64::INFINITY
                } else {
                    self.g.value(x) * (x - self.x0).abs().powf(-1.0 / self.beta)
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        self.kind != RoofKind::CriticalSingular && self.g.is_constant()
    }

    pub fn is_differentiable(&self) -> bool {
        self.g.is_differentiable()
    }

    pub fn derivative(&self, x: f64) -> Option<f64> {
        match self.kind {
            RoofKind::Constant | RoofKind::HoelderBv => self.g.derivative(x),
            RoofKind::CriticalSingular => {
                let d = x - self.x0;
                if d == 0.0 {
                    return None;
                }
                let p = -1.0 / self.beta;
                let gd = self.g.derivative(x)?;
                Some(gd * d.abs().powf(p) + self.g.value(x) * p * d.abs().powf(p - 1.0) * d.signum())
            }
        }
    }
}
