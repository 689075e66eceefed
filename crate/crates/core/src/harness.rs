//! Experiment runner: dotted-key TOML configs, the six pipelines, and run
//! manifests.
//!
//! Config keys (defaults in parentheses):
//!
//! | key | meaning |
//! |---|---|
//! | `experiment.pipeline` | `tail-fit`, `ulam-spectrum`, `correlate`, `renewal-compare`, `check-hypotheses`, `laplace-roundtrip` |
//! | `experiment.seed` | master seed (0) |
//! | `map.family` | `afn`, `lsv`, `logistic`, `piecewise-linear`, `doubling` (`afn`) |
//! | `map.beta`, `map.a` | AFN/LSV parameters (0.75, 1.0) |
//! | `map.ce_param` | logistic parameter (4.0) |
//! | `map.branch_endpoints` | piecewise-linear partition |
//! | `roof.kind` | `constant`, `hoelder`, `critical-singular` (`constant`) |
//! | `roof.profile` | `constant`, `affine`, `cosine`, `step`, `cusp` (`constant`) |
//! | `roof.value`, `roof.c0`, `roof.c1`, `roof.amp`, `roof.freq`, `roof.low`, `roof.high`, `roof.at`, `roof.center`, `roof.exponent` | profile parameters |
//! | `roof.eta`, `roof.floor`, `roof.x0`, `roof.beta` | Hölder exponent (1), floor (1), singularity data |
//! | `inducing.n_samples`, `inducing.burn_in` | stationary sample size (1e6) and burn-in (1000) |
//! | `inducing.t_min`, `inducing.t_max` | tail window (90% / 99.9% quantiles) |
//! | `scheme.mode`, `scheme.depth`, `scheme.coverage_tol` | `markov` or `reinduce` (by family), 8, 1e-3 |
//! | `flow.n_samples`, `flow.t_min`, `flow.t_max`, `flow.per_decade` | 1e5, 10, 1000, 8 |
//! | `flow.v_amp`, `flow.w_amp` | amplitudes of the fiber-bump observables (1, 1) |
//! | `operator.n_bins`, `operator.n_mc` | 2000, 1000 |
//! | `operator.b_min`, `operator.b_max`, `operator.n_b` | 1e-3, 5e-2, 12 |
//! | `renewal.t_grid` | laplace-roundtrip times (1..10) |
//! | `hypotheses.checks` | subset of `h2h3`, `h4`, `uni`, `recurrence` (all applicable) |
//! | `hypotheses.n_pairs`, `hypotheses.cells`, `hypotheses.depth`, `hypotheses.quotient_cap` | 1e5, three ids, 20, 1000 |
//! | `hypotheses.uni_n`, `hypotheses.grid_n`, `hypotheses.branch_pairs` | 1, 200, two ids per pair |
//! | `hypotheses.q`, `hypotheses.d_star`, `hypotheses.n_grid`, `hypotheses.n_samples` | 0.5, 2/d_hat, powers of two, 1e6 |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::flow::{correlate, log_grid, CorrelationSeries, Observable};
use crate::hypotheses::{self, DiophantineVerdict, HypothesisReport};
use crate::inducing::{default_tail_window, tail_fit, GmScheme, InducedSystem, SchemeMode};
use crate::io;
use crate::mapzoo::{MapSpec, Profile, RoofKind, RoofSpec};
use crate::operator::{build_ulam, eigen_exponent_fit, geom_grid};
use crate::renewal::{self, AsymptoticModel};

pub const PIPELINES: [&str; 6] =
    ["tail-fit", "ulam-spectrum", "correlate", "renewal-compare", "check-hypotheses", "laplace-roundtrip"];

/// Flat dotted-key view of a TOML document. Every key must be consumed.
#[derive(Clone, Debug, Default)]
pub struct Config {
    values: BTreeMap<String, toml::Value>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<document>", e.to_string()))?;
        let mut values = BTreeMap::new();
        flatten("", &table, &mut values);
        Ok(Config { values, used: Default::default() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        Self::parse(&text)
    }

    /// Sets `key = value`, where `value` is TOML (bare words are taken as strings).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        self.values.insert(key.to_string(), parsed);
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&toml::Value> {
        self.used.borrow_mut().insert(key.to_string());
        self.values.get(key)
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(toml::Value::Float(x)) => Ok(*x),
            Some(toml::Value::Integer(i)) => Ok(*i as f64),
            Some(v) => Err(Error::config(key, format!("expected a number, got {v}"))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(toml::Value::Float(x)) if *x >= 0.0 && x.fract() == 0.0 => Ok(*x as usize),
            Some(v) => Err(Error::config(key, format!("expected a non-negative integer, got {v}"))),
        }
    }

    pub fn str_or(&self, key: &str, default: &str) -> Result<String> {
        match self.get(key) {
            None => Ok(default.to_string()),
            Some(toml::Value::String(s)) => Ok(s.clone()),
            Some(v) => Err(Error::config(key, format!("expected a string, got {v}"))),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    toml::Value::Float(x) => Ok(*x),
                    toml::Value::Integer(i) => Ok(*i as f64),
                    _ => Err(Error::config(key, "expected a list of numbers")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(Error::config(key, "expected a list of numbers")),
        }
    }

    pub fn str_list(&self, key: &str) -> Result<Option<Vec<String>>> {
        match self.get(key) {
            None => Ok(None),
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(|v| v.as_str().map(str::to_string).ok_or_else(|| Error::config(key, "expected a list of strings")))
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(Error::config(key, "expected a list of strings")),
        }
    }

    /// Errors on the first key no pipeline stage read.
    pub fn check_unused(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.values.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(Error::config(k.clone(), "unknown key")),
            None => Ok(()),
        }
    }

    /// Canonical text: sorted `key = value` lines.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        io::digest_hex(self.canonical().as_bytes())
    }
}

fn in_range(cfg: &Config, key: &str, default: f64, ok: impl Fn(f64) -> bool, what: &str) -> Result<f64> {
    let v = cfg.f64_or(key, default)?;
    if ok(v) {
        Ok(v)
    } else {
        Err(Error::config(key, format!("{v} {what}")))
    }
}

pub fn map_from(cfg: &Config) -> Result<MapSpec> {
    let family = cfg.str_or("map.family", "afn")?;
    let spec = match family.as_str() {
        "afn" | "lsv" => {
            let beta = in_range(cfg, "map.beta", 0.75, |b| b > 0.5 && b < 1.0, "is not in (1/2, 1)")?;
            let a = in_range(cfg, "map.a", 1.0, |a| a > 0.0 && a.is_finite(), "must be positive")?;
            if family == "lsv" && a.fract() != 0.0 {
                return Err(Error::config("map.a", "LSV needs an integer coefficient"));
            }
            MapSpec::afn(beta, a)
        }
        "logistic" => MapSpec::logistic(in_range(cfg, "map.ce_param", 4.0, |p| p > 0.0 && p <= 4.0, "is not in (0, 4]")?),
        "piecewise-linear" => {
            let ends = cfg.f64_list("map.branch_endpoints")?.ok_or_else(|| Error::config("map.branch_endpoints", "required"))?;
            MapSpec::piecewise_linear(ends).map_err(|e| Error::config("map.branch_endpoints", e.to_string()))
        }
        "doubling" => Ok(MapSpec::doubling()),
        other => return Err(Error::config("map.family", format!("unknown family `{other}`"))),
    };
    spec.map_err(|e| Error::config("map", e.to_string()))
}

pub fn roof_from(cfg: &Config) -> Result<RoofSpec> {
    let profile = match cfg.str_or("roof.profile", "constant")?.as_str() {
        "constant" => Profile::Constant { value: cfg.f64_or("roof.value", 2.0)? },
        "affine" => Profile::Affine { c0: cfg.f64_or("roof.c0", 2.0)?, c1: cfg.f64_or("roof.c1", 1.0)? },
        "cosine" => Profile::Cosine {
            c0: cfg.f64_or("roof.c0", 2.0)?,
            amp: cfg.f64_or("roof.amp", 0.5)?,
            freq: cfg.f64_or("roof.freq", 1.0)?,
        },
        "step" => Profile::Step {
            low: cfg.f64_or("roof.low", 2.0)?,
            high: cfg.f64_or("roof.high", 3.0)?,
            at: cfg.f64_or("roof.at", 0.5)?,
        },
        "cusp" => Profile::Cusp {
            c0: cfg.f64_or("roof.c0", 2.0)?,
            amp: cfg.f64_or("roof.amp", 0.5)?,
            center: cfg.f64_or("roof.center", 0.5)?,
            exponent: cfg.f64_or("roof.exponent", 0.5)?,
        },
        other => return Err(Error::config("roof.profile", format!("unknown profile `{other}`"))),
    };
    let floor = cfg.f64_or("roof.floor", 1.0)?;
    let roof = match cfg.str_or("roof.kind", "constant")?.as_str() {
        "constant" => match profile {
            Profile::Constant { value } => RoofSpec::constant(value),
            _ => return Err(Error::config("roof.profile", "a constant roof needs the constant profile")),
        },
        "hoelder" => RoofSpec::hoelder(profile, cfg.f64_or("roof.eta", 1.0)?),
        "critical-singular" => {
            RoofSpec::critical_singular(profile, cfg.f64_or("roof.x0", 0.5)?, cfg.f64_or("roof.beta", 0.75)?)
        }
        other => return Err(Error::config("roof.kind", format!("unknown kind `{other}`"))),
    }?;
    if floor != 1.0 {
        roof.with_floor(floor)
    } else {
        Ok(roof)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub pipeline: String,
    /// Run directory relative to the output directory.
    pub run_dir: String,
    pub seed: u64,
    pub map: MapSpec,
    pub roof: RoofSpec,
    pub versions: BTreeMap<String, String>,
    pub wall_time: f64,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    pub verdicts: serde_json::Value,
}

impl RunManifest {
    /// True when the verdict block reports a hypothesis violation.
    pub fn violated(&self) -> bool {
        self.verdicts.get("violation").and_then(|v| v.as_bool()).unwrap_or(false)
    }
}

/// Output sink for one run: `<out_dir>/<run_id>[-k]/`.
struct Sink {
    root: PathBuf,
    dir: String,
    outputs: Vec<String>,
}

impl Sink {
    fn new(out_dir: &Path, run_id: &str) -> Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        let mut dir = run_id.to_string();
        let mut k = 1;
        // never touch an existing run directory
        while out_dir.join(&dir).exists() {
            dir = format!("{run_id}-{k}");
            k += 1;
        }
        std::fs::create_dir_all(out_dir.join(&dir))?;
        Ok(Sink { root: out_dir.to_path_buf(), dir, outputs: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let rel = format!("{}/{name}", self.dir);
        self.outputs.push(rel.clone());
        self.root.join(rel)
    }
}

fn observables(cfg: &Config) -> Result<(Observable, Observable)> {
    Ok((Observable::fiber_bump(cfg.f64_or("flow.v_amp", 1.0)?), Observable::fiber_bump(cfg.f64_or("flow.w_amp", 1.0)?)))
}

fn run_correlation(cfg: &Config, sys: &InducedSystem, seed: u64) -> Result<(CorrelationSeries, Observable, Observable)> {
    let (v, w) = observables(cfg)?;
    let t_min = cfg.f64_or("flow.t_min", 10.0)?;
    let t_max = cfg.f64_or("flow.t_max", 1000.0)?;
    let grid = log_grid(t_min, t_max, cfg.usize_or("flow.per_decade", 8)?);
    let series = correlate(sys, &v, &w, &grid, cfg.usize_or("flow.n_samples", 100_000)?, seed)?;
    Ok((series, v, w))
}

fn write_series(sink: &mut Sink, series: &CorrelationSeries, sys: &InducedSystem) -> Result<()> {
    let p = sink.path("correlation.csv");
    io::write_csv(
        &p,
        &["t", "rho", "stderr"],
        (0..series.t_grid.len()).map(|k| vec![series.t_grid[k], series.rho[k], series.stderr[k]]),
    )?;
    let side = sink.path("correlation.json");
    io::write_json(
        &side,
        &json!({"map": sys.base, "roof": sys.roof0, "n": series.n_samples, "seed": series.seed, "censored": series.censored}),
    )
}

/// Comparison CSV `(t, rho_mc, stderr, rho_pred, ratio)`.
pub fn export_series(series: &CorrelationSeries, model: &AsymptoticModel, iv: f64, iw: f64, path: &Path) -> Result<PathBuf> {
    let rows = renewal::compare(series, model, iv, iw);
    io::write_csv(
        path,
        &["t", "rho_mc", "stderr", "rho_pred", "ratio"],
        rows.iter().map(|r| vec![r.t, r.rho_mc, r.stderr, r.rho_pred, r.ratio]),
    )?;
    Ok(path.to_path_buf())
}

fn tail_stage(cfg: &Config, sys: &InducedSystem, seed: u64, sink: &mut Sink) -> Result<(Complex64, crate::inducing::TailFit, Vec<f64>)> {
    let n = cfg.usize_or("inducing.n_samples", 1_000_000)?;
    let burn = cfg.usize_or("inducing.burn_in", 1000)?;
    let sample = sys.stationary_sample(n, burn, seed)?;
    let (lo, hi) = default_tail_window(&sample.taus);
    let t_min = cfg.f64_or("inducing.t_min", lo)?;
    let t_max = cfg.f64_or("inducing.t_max", hi)?;
    let fit = tail_fit(&sample.taus, t_min, t_max)?;
    io::write_column(
        &sink.path("tau.csv"),
        "tau",
        &sample.taus,
        &json!({"seed": seed, "map": sys.base, "roof": sys.roof0, "censored": sample.censored}),
    )?;
    sink.outputs.push(format!("{}/tau.json", sink.dir));
    let e1 = renewal::estimate_e1(&sample.taus, &fit);
    Ok((e1, fit, sample.points))
}

fn scheme_from(cfg: &Config, sys: &InducedSystem) -> Result<GmScheme> {
    let default_mode = if sys.base.family == crate::mapzoo::Family::AfnIntermittent { "reinduce" } else { "markov" };
    let mode = match cfg.str_or("scheme.mode", default_mode)?.as_str() {
        "markov" => SchemeMode::MarkovExact,
        "reinduce" => SchemeMode::Reinduce,
        other => return Err(Error::config("scheme.mode", format!("unknown mode `{other}`"))),
    };
    GmScheme::build(sys, mode, cfg.usize_or("scheme.depth", 8)?, cfg.f64_or("scheme.coverage_tol", 1e-3)?)
}

fn check_hypotheses(cfg: &Config, seed: u64, sink: &mut Sink) -> Result<serde_json::Value> {
    let map = map_from(cfg)?;
    let roof = roof_from(cfg)?;
    let default_checks: Vec<String> = if roof.kind == RoofKind::CriticalSingular {
        vec!["recurrence".into()]
    } else {
        ["h2h3", "h4", "uni"].iter().map(|s| s.to_string()).collect()
    };
    let checks = cfg.str_list("hypotheses.checks")?.unwrap_or(default_checks);
    let mut report = HypothesisReport::default();
    let needs_scheme = checks.iter().any(|c| c != "recurrence");
    let sys = InducedSystem::new(map.clone(), roof.clone());
    let scheme = if needs_scheme { Some(scheme_from(cfg, &sys)?) } else { None };
    let n_pairs = cfg.usize_or("hypotheses.n_pairs", 100_000)?;
    for check in &checks {
        match check.as_str() {
            "h2h3" => {
                let sc = scheme.as_ref().unwrap();
                let h3 = hypotheses::doubling_check(n_pairs, |n| hypotheses::h3_constant(sc, n, seed).c_hat);
                let dens = hypotheses::Density::estimate(&sys, sc.z_lo, sc.z_hi, 200_000, seed)?;
                let dist =
                    hypotheses::doubling_check(n_pairs, |n| hypotheses::distortion_constant(sc, &dens, n, seed).c_hat);
                for (name, st) in [("H3", &h3), ("H2_distortion", &dist)] {
                    let status = if st.diverging {
                        "VIOLATED"
                    } else if st.stable {
                        "PASS"
                    } else {
                        "UNSTABLE"
                    };
                    report.push(name, status, serde_json::to_value(st).unwrap(), n_pairs, seed);
                }
            }
            "h4" => {
                let sc = scheme.as_ref().unwrap();
                let cells = cfg.f64_list("hypotheses.cells")?.unwrap_or_else(|| {
                    let l = sc.z_hi - sc.z_lo;
                    vec![sc.z_lo + 0.05 * l, sc.z_lo + 0.5 * l, sc.z_hi - 0.02 * l]
                });
                if cells.len() != 3 {
                    return Err(Error::config("hypotheses.cells", "need exactly three cell identifiers"));
                }
                let pd = hypotheses::find_periodic_points(sc, [cells[0], cells[1], cells[2]], 1e-13)?;
                let rep = hypotheses::diophantine_check(
                    &pd,
                    cfg.usize_or("hypotheses.depth", 20)?,
                    cfg.usize_or("hypotheses.quotient_cap", 1000)? as u64,
                )?;
                let status = match rep.verdict {
                    DiophantineVerdict::PassHeuristic => "PASS_HEURISTIC",
                    DiophantineVerdict::FailRational => "FAIL_RATIONAL",
                    DiophantineVerdict::Inconclusive => "INCONCLUSIVE",
                };
                report.push("H4", status, json!({"periodic": pd, "check": rep}), 0, seed);
            }
            "uni" => {
                let sc = scheme.as_ref().unwrap();
                let pairs = match cfg.f64_list("hypotheses.branch_pairs")? {
                    Some(v) if v.len() >= 2 && v.len() % 2 == 0 => v.chunks(2).map(|p| (p[0], p[1])).collect(),
                    Some(_) => return Err(Error::config("hypotheses.branch_pairs", "need an even number of ids")),
                    None => {
                        let l = sc.z_hi - sc.z_lo;
                        vec![(sc.z_lo + 0.05 * l, sc.z_hi - 0.05 * l)]
                    }
                };
                let ub = hypotheses::uni_lower_bound(
                    sc,
                    cfg.usize_or("hypotheses.uni_n", 1)?,
                    &pairs,
                    cfg.usize_or("hypotheses.grid_n", 200)?,
                )?;
                let status = if ub.inf_abs_psi_prime > 1e-3 { "PASS" } else { "VIOLATED" };
                report.push("UNI", status, serde_json::to_value(&ub).unwrap(), 0, seed);
            }
            "recurrence" => {
                let q = cfg.f64_or("hypotheses.q", 0.5)?;
                // 2 / d_hat from the sigma tail when it can be fitted, else 2
                let (d_star, d_star_source) = match cfg.has("hypotheses.d_star") {
                    true => (cfg.f64_or("hypotheses.d_star", 2.0)?, "config"),
                    false => {
                        let fitted = scheme_from(cfg, &InducedSystem::new(map.clone(), roof.clone()))
                            .and_then(|sc| crate::inducing::sigma_tail(&sc.sigma_sample(100_000, 100, seed)));
                        match fitted {
                            Ok(tail) if tail.d_hat > 0.0 && tail.d_hat.is_finite() => (2.0 / tail.d_hat, "sigma_tail"),
                            _ => (2.0, "default"),
                        }
                    }
                };
                let grid: Vec<u64> = match cfg.f64_list("hypotheses.n_grid")? {
                    Some(v) => v.into_iter().map(|x| x as u64).collect(),
                    None => (1..=10).map(|k| 1u64 << k).collect(),
                };
                let n = cfg.usize_or("hypotheses.n_samples", 1_000_000)?;
                let table = hypotheses::recurrence_statistic(&map, &roof, q, d_star, &grid, n, seed)?;
                io::write_csv(
                    &sink.path("recurrence.csv"),
                    &["n", "mu_level", "mu_xq", "mu_xq_plus"],
                    table.rows.iter().map(|r| vec![r.n as f64, r.mu_level, r.mu_xq, r.mu_xq_plus]),
                )?;
                let fit = hypotheses::recurrence_exponent(&table).ok();
                report.push(
                    "recurrence",
                    "REPORTED",
                    json!({"exponent": fit.map(|f| -f.slope), "exponent_se": fit.map(|f| f.slope_se), "q": q, "d_star": d_star, "d_star_source": d_star_source}),
                    n,
                    seed,
                );
            }
            other => return Err(Error::config("hypotheses.checks", format!("unknown check `{other}`"))),
        }
    }
    io::write_json(&sink.path("hypotheses.json"), &report)?;
    Ok(json!({"violation": report.any_violation(), "report": report}))
}

/// Runs the pipeline named in the config and writes outputs plus a manifest
/// under `out_dir`. The manifest is also appended to `out_dir/manifests.jsonl`.
pub fn run_config(cfg: &Config, out_dir: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let pipeline = cfg.str_or("experiment.pipeline", "")?;
    if !PIPELINES.contains(&pipeline.as_str()) {
        return Err(Error::config("experiment.pipeline", format!("unknown pipeline `{pipeline}`")));
    }
    let seed = cfg.usize_or("experiment.seed", 0)? as u64;
    let map = map_from(cfg)?;
    let roof = roof_from(cfg)?;
    let config_hash = cfg.hash();
    let run_id = format!("{pipeline}-{}", &io::digest_hex(format!("{config_hash}/{seed}").as_bytes())[..12]);
    let mut sink = Sink::new(out_dir, &run_id)?;
    let ctx = |e: Error| e.context(pipeline.clone());
    let sys = InducedSystem::new(map.clone(), roof.clone());
    let verdicts = match pipeline.as_str() {
        "tail-fit" => {
            let (e1, fit, _) = tail_stage(cfg, &sys, seed, &mut sink).map_err(ctx)?;
            json!({"beta_hat": fit.beta_hat, "c_hat": fit.c_hat, "stderr": fit.stderr, "t_min": fit.t_min, "t_max": fit.t_max, "e1_im": e1.im})
        }
        "ulam-spectrum" => {
            let op = build_ulam(&sys, cfg.usize_or("operator.n_bins", 2000)?, cfg.usize_or("operator.n_mc", 1000)?, seed)
                .map_err(ctx)?;
            io::write_bytes(&sink.path("operator.bin"), &op.to_bytes())?;
            io::write_json(
                &sink.path("operator.json"),
                &json!({"n_bins": op.n_bins(), "n_mc": op.n_mc, "seed": op.seed, "map_hash": op.map_hash, "merged": op.merged, "censored": op.censored, "map": map, "roof": roof}),
            )?;
            let grid = geom_grid(
                cfg.f64_or("operator.b_min", 1e-3)?,
                cfg.f64_or("operator.b_max", 5e-2)?,
                cfg.usize_or("operator.n_b", 12)?,
            );
            let mut rows = Vec::new();
            let mut init: Option<Vec<Complex64>> = None;
            for &b in &grid {
                let sd = op.leading_eig_from(Complex64::new(0.0, b), 1e-12, 20_000, init.as_deref()).map_err(ctx)?;
                rows.push(vec![b, sd.lambda.re, sd.lambda.im, sd.residual]);
                init = Some(sd.zeta);
            }
            io::write_csv(&sink.path("spectrum.csv"), &["b", "re_lambda", "im_lambda", "residual"], rows)?;
            let fit = eigen_exponent_fit(&op, &grid).map_err(ctx)?;
            json!({"beta_hat": fit.beta_hat, "arg_c": fit.c_cb_hat.arg(), "abs_c": fit.c_cb_hat.norm(), "r2": fit.r2})
        }
        "correlate" => {
            let (series, _, _) = run_correlation(cfg, &sys, seed).map_err(ctx)?;
            write_series(&mut sink, &series, &sys)?;
            let fit = renewal::decay_fit(&series, series.t_grid[0], *series.t_grid.last().unwrap()).map_err(ctx)?;
            json!({"rate": fit.rate, "stderr_rate": fit.stderr_rate, "amplitude": fit.amplitude, "censored": series.censored})
        }
        "renewal-compare" => {
            let (_, fit, points) = tail_stage(cfg, &sys, seed, &mut sink).map_err(ctx)?;
            let (series, v, w) = run_correlation(cfg, &sys, seed ^ 0x5bd1e995).map_err(ctx)?;
            write_series(&mut sink, &series, &sys)?;
            let model = AsymptoticModel::leading(map.beta, fit.c_hat).map_err(ctx)?;
            let iv = crate::flow::strip_integral(&v, &points);
            let iw = crate::flow::strip_integral(&w, &points);
            export_series(&series, &model, iv, iw, &sink.path("comparison.csv"))?;
            let dfit = renewal::decay_fit(&series, series.t_grid[0], *series.t_grid.last().unwrap()).map_err(ctx)?;
            let v = renewal::verdict(&dfit, map.beta);
            io::write_json(&sink.path("verdict.json"), &v)?;
            json!({"rate": v.rate, "expected": v.expected, "z": v.z, "c_hat": fit.c_hat})
        }
        "check-hypotheses" => check_hypotheses(cfg, seed, &mut sink).map_err(ctx)?,
        "laplace-roundtrip" => {
            let ts = cfg.f64_list("renewal.t_grid")?.unwrap_or_else(|| (1..=10).map(f64::from).collect());
            let mut rows = Vec::new();
            let mut worst = 0.0f64;
            for &t in &ts {
                let got = renewal::laplace_invert(|s| 1.0 / (1.0 + s), t, 1e3, 16).map_err(ctx)?;
                let exact = (-t).exp();
                worst = worst.max((got.value - exact).abs());
                rows.push(vec![t, exact, got.value, (got.value - exact).abs()]);
            }
            io::write_csv(&sink.path("roundtrip.csv"), &["t", "exact", "inverted", "abs_err"], rows)?;
            json!({"max_abs_err": worst, "violation": false})
        }
        _ => unreachable!(),
    };
    cfg.check_unused()?;
    let mut versions = BTreeMap::new();
    versions.insert("semiflow".to_string(), env!("CARGO_PKG_VERSION").to_string());
    let manifest = RunManifest {
        run_id,
        config_hash,
        pipeline,
        run_dir: sink.dir.clone(),
        seed,
        map,
        roof,
        versions,
        wall_time: start.elapsed().as_secs_f64(),
        outputs: sink.outputs.clone(),
        verdicts,
    };
    io::write_json(&out_dir.join(&sink.dir).join("manifest.json"), &manifest)?;
    let line = serde_json::to_string(&manifest).map_err(|e| Error::domain(e.to_string()))?;
    use std::io::Write;
    let mut index = std::fs::OpenOptions::new().create(true).append(true).open(out_dir.join("manifests.jsonl"))?;
    writeln!(index, "{line}")?;
    Ok(manifest)
}

/// Loads `config_path` and runs it.
pub fn run_experiment(config_path: &Path, out_dir: &Path) -> Result<RunManifest> {
    run_config(&Config::load(config_path)?, out_dir)
}
