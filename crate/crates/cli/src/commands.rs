use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use fairroute::casegen::{generate, CaseSpec, Reduction};
use fairroute::exec;
use fairroute::fairsolver::{check_alpha_fairness, solve_fair, solve_maxsum, FairProblem, SolveError};
use fairroute::io::{
    case_to_json, read_network, read_scenarios, report_to_json, solution_to_json, write_atomic,
    SolutionFile, FORMAT_VERSION,
};
use fairroute::riskmeasures::{RiskError, RiskSpec};
use fairroute::validate_network;
use serde::Serialize;
use serde_json::json;

use crate::settings::{Settings, SolveArgs};
use crate::tables;
use crate::GenArgs;

const INFEASIBLE: u8 = 2;

/// 2 when the chain bottoms out in an infeasibility, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> ExitCode {
    let infeasible = err.chain().any(|e| {
        matches!(e.downcast_ref::<SolveError>(), Some(SolveError::Infeasible(_)))
            || matches!(e.downcast_ref::<RiskError>(), Some(RiskError::HardInfeasible { .. }))
    });
    if infeasible {
        ExitCode::from(INFEASIBLE)
    } else {
        ExitCode::FAILURE
    }
}

/// Inputs, settings and timing of one command, written as `run.json`.
#[derive(Serialize)]
struct RunManifest<'a> {
    format_version: u32,
    command: &'a str,
    tool_version: &'a str,
    network: &'a Path,
    scenarios: &'a Path,
    config: Option<&'a Path>,
    settings: &'a Settings,
    out: &'a Path,
    wall_time_secs: f64,
}

struct Run {
    args: SolveArgs,
    settings: Settings,
    problem: FairProblem,
    started: Instant,
}

impl Run {
    fn start(args: &SolveArgs) -> Result<Self> {
        let started = Instant::now();
        let settings = Settings::resolve(args)?;
        if let Some(n) = settings.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the worker pool")?;
        }
        let network = read_network(&args.network)?.network;
        let scenarios = read_scenarios(&args.scenarios)?.scenarios;
        let problem = FairProblem::new(network, scenarios, settings.risk, settings.alpha, settings.config)?;
        fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
        Ok(Run {
            args: args.clone(),
            settings,
            problem,
            started,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.args.out.join(name)
    }

    fn finish(&self, command: &str) -> Result<()> {
        let manifest = RunManifest {
            format_version: FORMAT_VERSION,
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            network: &self.args.network,
            scenarios: &self.args.scenarios,
            config: self.args.config.as_deref(),
            settings: &self.settings,
            out: &self.args.out,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&self.path("run.json"), text.as_bytes())?;
        Ok(())
    }
}

pub fn validate(network: &Path, scenarios: Option<&Path>) -> Result<ExitCode> {
    let net = read_network(network)?.network;
    let issues = validate_network(&net);
    if !issues.is_empty() {
        for issue in &issues {
            eprintln!("{}: {issue}", network.display());
        }
        bail!("{}: {} problem(s) found", network.display(), issues.len());
    }
    println!(
        "{}: ok ({} nodes, {} links, {} routes, {} communities)",
        network.display(),
        net.node_count,
        net.link_count(),
        net.route_count(),
        net.community_count
    );
    if let Some(path) = scenarios {
        let sc = read_scenarios(path)?.scenarios;
        sc.check_dims(net.node_count, net.link_count())
            .with_context(|| format!("{} does not match {}", path.display(), network.display()))?;
        println!("{}: ok ({} scenarios)", path.display(), sc.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_reduction(s: &str) -> Result<Reduction> {
    let (f, p) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("reduction '{s}' must look like FRACTION:PROB"))?;
    Ok(Reduction {
        fraction: f.trim().parse().with_context(|| format!("reduction fraction in '{s}'"))?,
        prob: p.trim().parse().with_context(|| format!("reduction probability in '{s}'"))?,
    })
}

pub fn gen(args: &GenArgs) -> Result<ExitCode> {
    let defaults = CaseSpec::default();
    let reductions = if args.reductions.is_empty() {
        defaults.reductions.clone()
    } else {
        args.reductions.iter().map(|s| parse_reduction(s)).collect::<Result<_>>()?
    };
    let spec = CaseSpec {
        seed: args.seed,
        nodes: args.nodes,
        links: args.links,
        routes: args.routes,
        communities: args.communities,
        max_route_len: args.max_route_len,
        reductions,
        ..defaults
    };
    let case = generate(&spec)?;
    let (network, scenarios) = case_to_json(&case);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_atomic(&args.out.join("network.json"), network.as_bytes())?;
    write_atomic(&args.out.join("scenarios.json"), scenarios.as_bytes())?;
    println!(
        "generated {} nodes, {} links, {} routes, {} communities, {} scenarios after {} attempt(s)",
        case.network.node_count,
        case.network.link_count(),
        case.network.route_count(),
        case.network.community_count,
        case.scenarios.len(),
        case.provenance.attempts
    );
    Ok(ExitCode::SUCCESS)
}

pub fn solve(args: &SolveArgs, check: usize) -> Result<ExitCode> {
    let run = Run::start(args)?;
    let problem = &run.problem;
    let (sol, report) = solve_fair(problem)?;
    let file = SolutionFile {
        format_version: FORMAT_VERSION,
        objective: "alpha-fair".into(),
        alpha: Some(problem.alpha),
        risk: problem.risk,
        objective_value: report.objective,
        solution: sol,
    };
    write_atomic(&run.path("solution.json"), solution_to_json(&file).as_bytes())?;
    write_atomic(&run.path("report.json"), report_to_json("solve", &report).as_bytes())?;
    tables::write_communities(&run.path("communities.csv"), &file.solution.x)?;
    tables::write_links(&run.path("links.csv"), &problem.network, &file.solution.y)?;
    println!(
        "objective {:.9e} after {} iterations, gap {:.3e}{}",
        report.objective,
        report.iterations,
        report.final_gap,
        if report.converged { "" } else { " (iteration limit)" }
    );
    if check > 0 {
        let result = check_alpha_fairness(&file.solution.x, problem, check, run.settings.seed, None)?;
        let text = json!({ "format_version": FORMAT_VERSION, "check": result });
        write_atomic(&run.path("fairness.json"), format!("{text:#}\n").as_bytes())?;
        println!(
            "fairness check: {} of {} candidates violate (max {:.3e}, tolerance {:.3e})",
            result.violations.len(),
            result.candidates,
            result.max_value,
            result.tolerance
        );
    }
    run.finish("solve")?;
    Ok(ExitCode::SUCCESS)
}

pub fn compare(args: &SolveArgs) -> Result<ExitCode> {
    let run = Run::start(args)?;
    let (fair, fair_report) = solve_fair(&run.problem)?;
    let (maxsum, maxsum_report) = solve_maxsum(&run.problem)?;
    tables::write_compare(&run.path("compare.csv"), &fair.x, &maxsum.x)?;
    let metrics = json!({
        "format_version": FORMAT_VERSION,
        "alpha": run.problem.alpha,
        "risk": run.problem.risk,
        "fair": { "objective": fair_report.objective, "metrics": fair_report.metrics },
        "maxsum": { "objective": maxsum_report.objective, "metrics": maxsum_report.metrics },
    });
    write_atomic(&run.path("metrics.json"), format!("{metrics:#}\n").as_bytes())?;
    println!(
        "total served: fair {:.6} maxsum {:.6}; Jain index: fair {:.6} maxsum {:.6}",
        fair_report.metrics.total,
        maxsum_report.metrics.total,
        fair_report.metrics.jain_index,
        maxsum_report.metrics.jain_index
    );
    run.finish("compare")?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Clone, Copy)]
enum Objective {
    Fair,
    MaxSum,
}

impl Objective {
    fn tag(self) -> &'static str {
        match self {
            Objective::Fair => "fair",
            Objective::MaxSum => "maxsum",
        }
    }
}

pub fn sweep(args: &SolveArgs, deltas: Vec<f64>) -> Result<ExitCode> {
    let run = Run::start(args)?;
    let deltas = if deltas.is_empty() {
        (1..=9).map(|i| i as f64 / 10.0).collect()
    } else {
        deltas
    };
    let base = run.problem.risk;
    let mut points = Vec::new();
    for &delta in &deltas {
        let risk = RiskSpec::new(base.kind, delta, base.epsilon)?;
        for objective in [Objective::Fair, Objective::MaxSum] {
            points.push((delta, risk, objective));
        }
    }
    let staging = run.path(".sweep-points");
    fs::create_dir_all(&staging).with_context(|| format!("creating {}", staging.display()))?;

    let outcomes = exec::map_collect(run.settings.config.exec, &points, |&(delta, risk, objective)| {
        let problem = run.problem.with_risk(risk);
        let solved = match objective {
            Objective::Fair => solve_fair(&problem),
            Objective::MaxSum => solve_maxsum(&problem),
        };
        let point = format!("delta {delta} {}", objective.tag());
        let (sol, _) = solved.map_err(|e| anyhow::Error::new(e).context(point.clone()))?;
        let body = tables::sweep_body(&tables::sweep_rows(delta, objective.tag(), &sol.x))?;
        let path = staging.join(format!("{delta}-{}.csv", objective.tag()));
        write_atomic(&path, &body)?;
        Ok::<_, anyhow::Error>(path)
    });

    let mut csv = tables::sweep_header().to_vec();
    let mut code = ExitCode::SUCCESS;
    let mut failed = 0;
    for outcome in &outcomes {
        match outcome {
            Ok(path) => {
                csv.extend(fs::read(path).with_context(|| format!("reading {}", path.display()))?);
                fs::remove_file(path).ok();
            }
            Err(err) => {
                eprintln!("skipped: {err:#}");
                failed += 1;
                if exit_code(err) != ExitCode::from(INFEASIBLE) {
                    code = ExitCode::FAILURE;
                } else if code == ExitCode::SUCCESS {
                    code = ExitCode::from(INFEASIBLE);
                }
            }
        }
    }
    fs::remove_dir(&staging).ok();
    write_atomic(&run.path("sweep.csv"), &csv)?;
    println!("{} of {} sweep points solved", points.len() - failed, points.len());
    run.finish("sweep")?;
    Ok(code)
}
