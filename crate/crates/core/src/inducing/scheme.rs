//! Reinduced full-branch scheme `G = F^sigma` on `Z`, evaluated lazily per point.
//!
//! The `F`-cylinder of a point is recovered from its itinerary by pulling the
//! ends of `Y` back along it. `sigma(z)` is the first `n` for which the image of
//! the `F^n`-cylinder of `z` covers `Z` up to `coverage_tol`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{InducedSystem, Itinerary};
use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SchemeMode {
    MarkovExact,
    Reinduce,
}

#[derive(Clone, Copy, Debug)]
pub struct SchemeOptions {
    /// Uniform probe points used to estimate unaccepted mass at build time.
    pub probe_points: usize,
    /// Allowed unaccepted mass fraction before `CoverageFailure`.
    pub mass_budget: f64,
    pub seed: u64,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        SchemeOptions { probe_points: 4096, mass_budget: 0.02, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GmScheme {
    pub sys: InducedSystem,
    pub mode: SchemeMode,
    pub depth: usize,
    pub coverage_tol: f64,
    pub z_lo: f64,
    pub z_hi: f64,
    pub eta: f64,
    /// Lebesgue fraction of probe points left unresolved at `depth`.
    pub unaccepted_mass: f64,
    /// `sigma_counts[n]` = probe points with `sigma = n` (index 0 unused).
    pub sigma_counts: Vec<u64>,
    /// Per branch of `f` lying in `Y`: itinerary and return of each domain end.
    ends: Vec<Option<[EndData; 2]>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EndData {
    it: Itinerary,
    fx: f64,
    censored: bool,
}

/// The cylinder of `G` containing a point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GCell {
    pub z: f64,
    pub sigma: u32,
    /// False when `depth` was reached without covering `Z`; `G = F` there.
    pub resolved: bool,
    pub censored: bool,
    /// `F`-itineraries of `z, Fz, ..., F^{sigma-1} z`.
    pub steps: Vec<Itinerary>,
    pub img_lo: f64,
    pub img_hi: f64,
    pub defect: f64,
}

#[derive(Clone, Debug)]
pub struct GEval {
    pub gz: f64,
    pub phi: f64,
    /// `tau_l(z)` for `l = 0..=sigma`.
    pub partial: Vec<f64>,
    pub dg: f64,
    pub dphi: f64,
}

impl GmScheme {
    pub fn build(sys: &InducedSystem, mode: SchemeMode, depth: usize, coverage_tol: f64) -> Result<Self> {
        Self::build_with(sys, mode, depth, coverage_tol, SchemeOptions::default())
    }

    pub fn build_with(
        sys: &InducedSystem,
        mode: SchemeMode,
        depth: usize,
        coverage_tol: f64,
        opts: SchemeOptions,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::DepthExceeded(0));
        }
        if !(coverage_tol > 0.0 && coverage_tol < 1.0) {
            return Err(Error::domain("coverage_tol must lie in (0,1)"));
        }
        let f = &sys.base;
        let tol = 1e-12;
        let mut ends = vec![None; f.n_branches()];
        for k in 0..f.n_branches() {
            let (lo, hi) = f.branch_domain(k);
            let inside = lo >= sys.y_lo - tol && hi <= sys.y_hi + tol;
            let outside = hi <= sys.y_lo + tol || lo >= sys.y_hi - tol;
            if !inside && !outside {
                return Err(Error::domain("Y must be a union of branch domains"));
            }
            if outside && (f.branch_top(k) - 1.0).abs() > 1e-9 {
                return Err(Error::domain("branches outside Y must be full"));
            }
            if inside {
                let (lo, hi) = f.branch_domain(k);
                let end = |x: f64| {
                    let (it, e) = sys.itinerary_on(x, k);
                    EndData { it, fx: e.fx, censored: e.censored }
                };
                ends[k] = Some([end(lo), end(hi)]);
            }
        }
        let mut scheme = GmScheme {
            sys: sys.clone(),
            mode,
            depth: if mode == SchemeMode::MarkovExact { 1 } else { depth },
            coverage_tol,
            z_lo: sys.y_lo,
            z_hi: sys.y_hi,
            eta: sys.roof0.eta,
            unaccepted_mass: 0.0,
            sigma_counts: Vec::new(),
            ends,
        };
        let n = opts.probe_points.max(1);
        let cells: Vec<GCell> = rng::chunks(n)
            .into_par_iter()
            .enumerate()
            .flat_map_iter(|(ci, len)| {
                let mut r = rng::stream(opts.seed, ci as u64);
                let pts: Vec<f64> = (0..len).map(|_| sys.uniform_in_y(&mut r)).collect();
                pts.into_iter().map(|z| scheme.cell(z)).collect::<Vec<_>>()
            })
            .collect();
        let mut counts = vec![0u64; scheme.depth + 1];
        let mut unresolved = 0usize;
        for c in &cells {
            if c.resolved {
                counts[c.sigma as usize] += 1;
            } else {
                unresolved += 1;
            }
        }
        if mode == SchemeMode::MarkovExact && unresolved > 0 {
            return Err(Error::domain("MARKOV_EXACT requested for a map whose first return is not full-branch"));
        }
        scheme.sigma_counts = counts;
        scheme.unaccepted_mass = unresolved as f64 / n as f64;
        if scheme.unaccepted_mass > opts.mass_budget {
            return Err(Error::CoverageFailure {
                accepted: 1.0 - scheme.unaccepted_mass,
                required: 1.0 - opts.mass_budget,
            });
        }
        Ok(scheme)
    }

    pub fn z_len(&self) -> f64 {
        self.z_hi - self.z_lo
    }

    fn accept_tol(&self) -> f64 {
        match self.mode {
            SchemeMode::MarkovExact => 1e-6,
            SchemeMode::Reinduce => self.coverage_tol,
        }
    }

    fn increasing(&self, it: &Itinerary) -> bool {
        let f = &self.sys.base;
        let mut inc = true;
        for &(k, m) in &it.runs {
            let (lo, hi) = f.branch_domain(k as usize);
            if f.branch_derivative(k as usize, 0.5 * (lo + hi)) < 0.0 && m % 2 == 1 {
                inc = !inc;
            }
        }
        inc
    }

    /// `G`-cylinder data for `z`.
    ///
    /// With `I` the image of the current composite cylinder and `C` the
    /// `F`-cylinder of the current point, the next image is `F(I n C)`. An end of
    /// `I n C` is an end of `I` when that end shares the itinerary of `C`, else a
    /// domain end of the first branch, else a preimage of an end of `Y`.
    pub fn cell(&self, z: f64) -> GCell {
        let zl = self.z_len();
        let (ylo, yhi) = (self.sys.y_lo, self.sys.y_hi);
        let (mut il, mut ih) = (self.z_lo, self.z_hi);
        let mut w = z;
        let mut steps = Vec::new();
        let tol = self.accept_tol();
        let mut first_img = None;
        let censored_cell = |steps: Vec<Itinerary>| GCell {
            z,
            sigma: 1,
            resolved: false,
            censored: true,
            steps,
            img_lo: f64::NAN,
            img_hi: f64::NAN,
            defect: f64::NAN,
        };
        for j in 0..self.depth {
            let (it, e) = self.sys.itinerary(w);
            if e.censored {
                return censored_cell(steps.into_iter().take(1).collect());
            }
            let k0 = it.runs[0].0 as usize;
            let inc = self.increasing(&it);
            let (dlo, dhi) = self.sys.base.branch_domain(k0);
            let end_img = |x: f64, side: usize| -> f64 {
                // ends on a branch boundary are followed one-sidedly along k0
                if x >= dlo - 1e-12 && x <= dhi + 1e-12 {
                    let (xi, xe) = if x == w { (it.clone(), e) } else { self.sys.itinerary_on(x, k0) };
                    if !xe.censored && xi == it {
                        return xe.fx;
                    }
                }
                if let Some(ends) = &self.ends[k0] {
                    let d = &ends[side];
                    if !d.censored && d.it == it {
                        return d.fx;
                    }
                }
                if (side == 0) == inc {
                    ylo
                } else {
                    yhi
                }
            };
            let u = end_img(il, 0);
            let v = end_img(ih, 1);
            il = u.min(v).max(self.z_lo);
            ih = u.max(v).min(self.z_hi);
            steps.push(it);
            if j == 0 {
                first_img = Some((il, ih));
            }
            let defect = (1.0 - (ih - il) / zl).max(0.0);
            if defect < tol {
                return GCell {
                    z,
                    sigma: (j + 1) as u32,
                    resolved: true,
                    censored: false,
                    steps,
                    img_lo: il,
                    img_hi: ih,
                    defect,
                };
            }
            w = e.fx;
        }
        // unresolved: fall back to a single F-step
        steps.truncate(1);
        let (il, ih) = first_img.unwrap();
        GCell {
            z,
            sigma: 1,
            resolved: false,
            censored: false,
            steps,
            img_lo: il,
            img_hi: ih,
            defect: 1.0 - (ih - il) / zl,
        }
    }

    /// Endpoints of the cylinder of `cell`, by pulling back its image.
    pub fn bounds(&self, cell: &GCell) -> (f64, f64) {
        let u = self.pullback(&cell.steps, cell.img_lo);
        let v = self.pullback(&cell.steps, cell.img_hi);
        (u.min(v), u.max(v))
    }

    /// Inverse branch along a chain of `F`-itineraries.
    pub fn pullback(&self, steps: &[Itinerary], y: f64) -> f64 {
        steps.iter().rev().fold(y, |x, it| self.sys.pullback_itinerary(it, x))
    }

    /// `G` on the cell of `cell`, evaluated at `x` in its closure.
    pub fn g_eval(&self, cell: &GCell, x: f64, derivs: bool) -> GEval {
        self.chain_eval(&cell.steps, x, derivs)
    }

    /// Composition of `F`-branches with roof partial sums and derivatives.
    pub fn chain_eval(&self, steps: &[Itinerary], x: f64, derivs: bool) -> GEval {
        let mut z = x;
        let (mut d, mut phi, mut dphi) = (1.0, 0.0, 0.0);
        let mut partial = Vec::with_capacity(steps.len() + 1);
        partial.push(0.0);
        for it in steps {
            let e = self.sys.apply_itinerary(it, z, derivs);
            phi += e.tau;
            if derivs {
                dphi += e.dtau * d;
                d *= e.dfx;
            }
            z = e.fx;
            partial.push(phi);
        }
        GEval {
            gz: z,
            phi,
            partial,
            dg: if derivs { d } else { f64::NAN },
            dphi: if derivs { dphi } else { f64::NAN },
        }
    }

    pub fn sigma_at(&self, z: f64) -> u32 {
        self.cell(z).sigma
    }

    /// Probe-mass fraction with `sigma > n` among resolved probes.
    pub fn sigma_survival(&self, n: u32) -> f64 {
        let total: u64 = self.sigma_counts.iter().sum();
        let above: u64 = self.sigma_counts.iter().skip(n as usize + 1).sum();
        above as f64 / total.max(1) as f64
    }

    /// `sigma` along a `G`-orbit (which samples the `G`-invariant measure), restarting on censoring.
    pub fn sigma_sample(&self, n: usize, burn_in: usize, seed: u64) -> Vec<u32> {
        rng::chunks(n)
            .into_par_iter()
            .enumerate()
            .flat_map_iter(|(ci, len)| {
                let mut orbit = GOrbit::new(self, seed, ci as u64, burn_in);
                (0..len).map(|_| orbit.next_cell().sigma).collect::<Vec<_>>()
            })
            .collect()
    }

    /// Structured text listing of cells: one line `lo hi sigma defect`.
    pub fn cells_to_text(&self, cells: &[GCell]) -> String {
        let mut v: Vec<(f64, f64, &GCell)> = cells
            .iter()
            .filter(|c| c.resolved)
            .map(|c| {
                let (lo, hi) = self.bounds(c);
                (lo, hi, c)
            })
            .collect();
        v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        v.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        let mut s = String::new();
        s.push_str(&format!(
            "# z = [{:.16e}, {:.16e}] depth {} coverage_tol {:e} unaccepted {:.6e}\n# lo hi sigma defect\n",
            self.z_lo, self.z_hi, self.depth, self.coverage_tol, self.unaccepted_mass
        ));
        for (lo, hi, c) in v {
            s.push_str(&format!("{lo:.16e} {hi:.16e} {} {:.6e}\n", c.sigma, c.defect));
        }
        s
    }
}

/// Successive cells along a `G`-orbit.
pub struct GOrbit<'a> {
    scheme: &'a GmScheme,
    rng: rand_chacha::ChaCha8Rng,
    z: f64,
    burn_in: usize,
    pub restarts: usize,
}

impl<'a> GOrbit<'a> {
    pub fn new(scheme: &'a GmScheme, seed: u64, index: u64, burn_in: usize) -> Self {
        let mut rng = rng::stream(seed, index);
        let z = scheme.sys.uniform_in_y(&mut rng);
        let mut o = GOrbit { scheme, rng, z, burn_in, restarts: 0 };
        o.burn();
        o
    }

    fn burn(&mut self) {
        let mut done = 0;
        while done < self.burn_in {
            let c = self.scheme.cell(self.z);
            if !self.advance(&c) {
                continue;
            }
            done += 1;
        }
    }

    fn advance(&mut self, c: &GCell) -> bool {
        if c.censored {
            self.restarts += 1;
            self.z = self.z_lo_rand();
            return false;
        }
        let gz = self.scheme.g_eval(c, c.z, false).gz;
        if !(gz >= self.scheme.z_lo && gz <= self.scheme.z_hi) {
            self.restarts += 1;
            self.z = self.z_lo_rand();
            return false;
        }
        self.z = gz;
        true
    }

    fn z_lo_rand(&mut self) -> f64 {
        self.scheme.z_lo + self.scheme.z_len() * self.rng.gen::<f64>()
    }

    /// Cell of the current point; the orbit then moves to `G z`.
    pub fn next_cell(&mut self) -> GCell {
        loop {
            let c = self.scheme.cell(self.z);
            if self.advance(&c) {
                return c;
            }
            self.burn();
        }
    }
}
