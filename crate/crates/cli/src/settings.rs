//! Solver settings from an optional config file, overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use fairroute::fairsolver::{SolverConfig, StepRule};
use fairroute::io::FORMAT_VERSION;
use fairroute::riskmeasures::{RiskKind, RiskSpec};
use fairroute::ExecMode;
use serde::{Deserialize, Serialize};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_DELTA: f64 = 0.5;

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// Network JSON file.
    #[arg(long)]
    pub network: PathBuf,
    /// Scenario JSON file.
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Solver config JSON; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// cvar, evar or tv.
    #[arg(long)]
    pub risk: Option<RiskKind>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub gap_tol: Option<f64>,
    /// Lower bound on every community allocation.
    #[arg(long)]
    pub x_min: Option<f64>,
    /// line-search or fully-corrective.
    #[arg(long)]
    pub step_rule: Option<StepRule>,
    /// Seed for randomized checks.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Config file layout. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    format_version: u32,
    alpha: Option<f64>,
    epsilon: Option<f64>,
    risk: Option<RiskKind>,
    delta: Option<f64>,
    max_iters: Option<usize>,
    gap_tol: Option<f64>,
    x_min: Option<f64>,
    step_rule: Option<StepRule>,
    seed: Option<u64>,
    jobs: Option<usize>,
}

fn read_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let cfg: ConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        anyhow::anyhow!("{}: field `{field}`: {}", path.display(), e.into_inner())
    })?;
    if cfg.format_version != FORMAT_VERSION {
        bail!(
            "{}: unsupported format_version {} (expected {FORMAT_VERSION})",
            path.display(),
            cfg.format_version
        );
    }
    Ok(cfg)
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub alpha: f64,
    pub risk: RiskSpec,
    pub config: SolverConfig,
    pub seed: u64,
    pub jobs: Option<usize>,
}

impl Settings {
    pub fn resolve(args: &SolveArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => read_config(p)?,
            None => ConfigFile::default(),
        };
        let jobs = args.jobs.or(file.jobs);
        if jobs == Some(0) {
            bail!("--jobs must be at least 1");
        }
        let defaults = SolverConfig::default();
        let config = SolverConfig {
            max_iters: args.max_iters.or(file.max_iters).unwrap_or(defaults.max_iters),
            gap_tol: args.gap_tol.or(file.gap_tol).unwrap_or(defaults.gap_tol),
            step_rule: args.step_rule.or(file.step_rule).unwrap_or(defaults.step_rule),
            x_min: args.x_min.or(file.x_min).unwrap_or(defaults.x_min),
            exec: if jobs == Some(1) { ExecMode::Sequential } else { ExecMode::Parallel },
            ..defaults
        };
        let kind = args.risk.or(file.risk).unwrap_or(RiskKind::Cvar);
        let delta = args.delta.or(file.delta).unwrap_or(DEFAULT_DELTA);
        let epsilon = args.epsilon.or(file.epsilon).unwrap_or(DEFAULT_EPSILON);
        Ok(Settings {
            alpha: args.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA),
            risk: RiskSpec::new(kind, delta, epsilon)?,
            config,
            seed: args.seed.or(file.seed).unwrap_or(0),
            jobs,
        })
    }
}
