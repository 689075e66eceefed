use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semiflow::harness::{run_config, Config};

#[derive(Parser)]
#[command(name = "semiflow", version, about = "Suspension semiflow experiments over intermittent maps")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed (overrides experiment.seed)
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for the global pool (default: all cores)
    #[arg(long)]
    workers: Option<usize>,
    /// Base config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override `key=value`, repeatable (e.g. `map.beta=0.8`)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the pipeline named in a config file
    Run {
        #[arg(value_name = "CONFIG")]
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the tail of the induced roof
    TailFit(Common),
    /// Build the Ulam operator and scan its leading eigenvalue
    UlamSpectrum(Common),
    /// Monte Carlo correlation series of the semiflow
    Correlate(Common),
    /// Correlations against the renewal prediction
    RenewalCompare(Common),
    /// Roof regularity and distortion stability
    CheckH2h3(Common),
    /// Periodic-orbit ratio and continued fraction heuristic
    CheckH4(Common),
    /// Uniform non-integrability lower bound
    CheckUni(Common),
    /// Numerical Laplace inversion of a known pair
    LaplaceRoundtrip(Common),
}

fn build(common: &Common, file: Option<&PathBuf>, pipeline: Option<&str>, checks: Option<&str>) -> semiflow::Result<Config> {
    let mut cfg = match file.or(common.config.as_ref()) {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(p) = pipeline {
        cfg.set("experiment.pipeline", &format!("\"{p}\""))?;
    }
    if let Some(c) = checks {
        cfg.set("hypotheses.checks", &format!("[\"{c}\"]"))?;
    }
    if let Some(s) = common.seed {
        cfg.set("experiment.seed", &s.to_string())?;
    }
    for kv in &common.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| semiflow::Error::config(kv.clone(), "expected key=value"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, file, pipeline, checks) = match &cli.cmd {
        Cmd::Run { file, common } => (common, Some(file), None, None),
        Cmd::TailFit(c) => (c, None, Some("tail-fit"), None),
        Cmd::UlamSpectrum(c) => (c, None, Some("ulam-spectrum"), None),
        Cmd::Correlate(c) => (c, None, Some("correlate"), None),
        Cmd::RenewalCompare(c) => (c, None, Some("renewal-compare"), None),
        Cmd::CheckH2h3(c) => (c, None, Some("check-hypotheses"), Some("h2h3")),
        Cmd::CheckH4(c) => (c, None, Some("check-hypotheses"), Some("h4")),
        Cmd::CheckUni(c) => (c, None, Some("check-hypotheses"), Some("uni")),
        Cmd::LaplaceRoundtrip(c) => (c, None, Some("laplace-roundtrip"), None),
    };
    if let Some(n) = common.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = build(common, file, pipeline, checks).and_then(|cfg| run_config(&cfg, &common.out_dir));
    match result {
        Ok(m) => {
            println!("{}", serde_json::to_string_pretty(&m.verdicts).unwrap_or_default());
            println!("manifest: {}", common.out_dir.join(&m.run_dir).join("manifest.json").display());
            if m.violated() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
