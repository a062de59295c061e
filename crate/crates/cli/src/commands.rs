use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use spectral_em::analysis::{
    continuous_second_moments, exact_second_moments, init_weight_check,
    mc_regularity_experiment_with, InitMargin, McOutcome, MomentTable, RegularityReport,
};
use spectral_em::ensemble::PathEnsemble;
use spectral_em::solver::run_recursive;
use spectral_em::resolvent::weight_table;
use spectral_em::{LevelGrids, MergedGrid, Problem};

use crate::config::RunConfig;
use crate::output::{
    ensure_dir, float, write_json, ArtifactEntry, Counts, RunManifest, Table, Timings,
    SCHEMA_VERSION,
};
use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    CheckLemma,
    Simulate,
    Maxreg,
    Oracle,
    CompareUniform,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::CheckLemma => "check-lemma",
            Subcommand::Simulate => "simulate",
            Subcommand::Maxreg => "maxreg",
            Subcommand::Oracle => "oracle",
            Subcommand::CompareUniform => "compare-uniform",
        }
    }
}

/// What a successful run reports on stdout.
#[derive(Debug, Clone)]
pub struct Summary {
    pub out_dir: PathBuf,
    pub message: String,
}

const WEIGHT_COLUMNS: &[&str] = &["mode", "lambda", "level", "step", "weight_sum", "bound", "margin"];
const TRAJECTORY_COLUMNS: &[&str] = &["path", "eta", "tau", "j", "value"];
const INCREMENT_COLUMNS: &[&str] = &["path", "level", "step", "t_start", "t_end", "increment"];
const CONTRIBUTION_COLUMNS: &[&str] =
    &["eta", "tau", "dtau", "lhs", "se_lhs", "lhs_convolution", "se_lhs_convolution"];
const MC_MOMENT_COLUMNS: &[&str] = &["eta", "tau", "j", "estimate", "standard_error", "exact"];
const ORACLE_MOMENT_COLUMNS: &[&str] = &["eta", "tau", "j", "full", "convolution", "continuous"];

struct Context {
    cfg: RunConfig,
    problem: Problem,
    ensemble: PathEnsemble,
    out: PathBuf,
    timings: Timings,
}

/// Runs one subcommand and writes its artifacts and manifest.
pub fn run(sub: Subcommand, cfg: &RunConfig) -> Result<Summary, RunError> {
    let start = Instant::now();
    let problem = cfg.build_problem()?;
    let out = PathBuf::from(cfg.out_dir());
    ensure_dir(&out)?;
    let ensemble = PathEnsemble::new(cfg.seed, cfg.paths).with_threads(cfg.threads);
    let mut ctx = Context {
        cfg: cfg.clone(),
        problem,
        ensemble,
        out,
        timings: Timings { setup_seconds: start.elapsed().as_secs_f64(), ..Timings::default() },
    };
    let (artifacts, message) = match sub {
        Subcommand::CheckLemma => check_lemma(&mut ctx)?,
        Subcommand::Simulate => simulate(&mut ctx)?,
        Subcommand::Maxreg => maxreg(&mut ctx)?,
        Subcommand::Oracle => oracle(&mut ctx)?,
        Subcommand::CompareUniform => compare_uniform(&mut ctx)?,
    };
    write_manifest(&ctx, sub, artifacts)?;
    Ok(Summary { out_dir: ctx.out, message })
}

type Outcome = Result<(Vec<ArtifactEntry>, String), RunError>;

fn write_manifest(ctx: &Context, sub: Subcommand, mut artifacts: Vec<ArtifactEntry>) -> Result<(), RunError> {
    let p = &ctx.problem;
    artifacts.push(ArtifactEntry::json("manifest.json"));
    let manifest = RunManifest {
        tool: "spectral-em".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: sub.name().into(),
        config_digest: ctx.cfg.digest(),
        seed: ctx.cfg.seed,
        schema_version: SCHEMA_VERSION,
        counts: Counts {
            modes: p.es.modes(),
            levels: p.es.levels(),
            steps: p.grid.steps(),
            level_steps: p.grids.step_counts(),
            paths: ctx.cfg.paths,
        },
        c_disc: p.grids.quasi_uniformity(),
        artifacts,
        timings: ctx.timings.clone(),
    };
    write_json(&ctx.out, "manifest.json", &manifest)
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed().as_secs_f64();
    out
}

fn check_lemma(ctx: &mut Context) -> Outcome {
    let p = &ctx.problem;
    let rows = timed(&mut ctx.timings.compute_seconds, || weight_table(&p.es, &p.grids, &p.grid, &p.table));
    let out = &ctx.out;
    timed(&mut ctx.timings.write_seconds, || {
        let mut t = Table::create(out, "weights.csv", WEIGHT_COLUMNS)?;
        for r in &rows {
            t.row([
                r.mode.to_string(),
                float(r.lambda),
                r.level.to_string(),
                r.step.to_string(),
                float(r.weight_sum),
                float(r.bound),
                float(r.margin),
            ])?;
        }
        t.finish()
    })?;
    let violations = rows.iter().filter(|r| r.margin < 0.0).count();
    let min_margin = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    Ok((
        vec![ArtifactEntry::table("weights.csv", WEIGHT_COLUMNS)],
        format!("{} weight sums, minimum margin {min_margin:e}, {violations} violations", rows.len()),
    ))
}

fn simulate(ctx: &mut Context) -> Outcome {
    let p = &ctx.problem;
    let with_increments = ctx.cfg.simulate.increments;
    let mut traj_table = Table::create(&ctx.out, "trajectory.csv", TRAJECTORY_COLUMNS)?;
    let mut inc_table = if with_increments {
        Some(Table::create(&ctx.out, "increments.csv", INCREMENT_COLUMNS)?)
    } else {
        None
    };
    let mut failure: Option<RunError> = None;
    let ensemble = ctx.ensemble;
    let sink = |path: u64, result: spectral_em::Result<_>| {
        if failure.is_some() {
            return;
        }
        let (traj, inc): (spectral_em::Trajectory, spectral_em::LevelIncrements) = match result {
            Ok(v) => v,
            Err(e) => {
                failure = Some(RunError::numerical(format!("path {path}"), e));
                return;
            }
        };
        let mut write = || -> Result<(), RunError> {
            let path_s = path.to_string();
            for eta in 0..=traj.steps() {
                let (eta_s, tau_s) = (eta.to_string(), float(traj.taus()[eta]));
                for j in 0..traj.modes() {
                    traj_table.row([&path_s, &eta_s, &tau_s, &(j + 1).to_string(), &float(traj.get(eta, j))])?;
                }
            }
            if let Some(t) = inc_table.as_mut() {
                for level in 0..p.grids.levels() {
                    for i in 1..=p.grids.steps(level) {
                        t.row([
                            path_s.clone(),
                            (level + 1).to_string(),
                            i.to_string(),
                            float(p.grids.node(level, i - 1)),
                            float(p.grids.node(level, i)),
                            float(inc.level(level, i)),
                        ])?;
                    }
                }
            }
            Ok(())
        };
        if let Err(e) = write() {
            failure = Some(e);
        }
    };
    let compute = Instant::now();
    ensemble
        .for_each(
            |path| {
                let inc = p.sample_increments(&ensemble.stream(path))?;
                let traj = run_recursive(&p.input(&inc))?;
                Ok((traj, inc))
            },
            sink,
        )
        .map_err(|e| RunError::numerical("simulate", e))?;
    ctx.timings.compute_seconds = compute.elapsed().as_secs_f64();
    if let Some(e) = failure {
        return Err(e);
    }
    timed(&mut ctx.timings.write_seconds, || -> Result<(), RunError> {
        traj_table.finish()?;
        if let Some(t) = inc_table {
            t.finish()?;
        }
        Ok(())
    })?;
    let mut artifacts = vec![ArtifactEntry::table("trajectory.csv", TRAJECTORY_COLUMNS)];
    if with_increments {
        artifacts.push(ArtifactEntry::table("increments.csv", INCREMENT_COLUMNS));
    }
    Ok((
        artifacts,
        format!("{} paths, {} merged steps, {} modes", ctx.cfg.paths, p.grid.steps(), p.es.modes()),
    ))
}

#[derive(Serialize)]
struct FailedPath {
    path: u64,
    error: String,
}

/// Reports for one problem: the exact one when available, always the
/// Monte Carlo one.
#[derive(Serialize)]
struct ProblemReport<'a> {
    verdict: &'a str,
    exact: Option<&'a RegularityReport>,
    monte_carlo: &'a RegularityReport,
    failed_paths: Vec<FailedPath>,
    init_weights: Vec<InitMargin>,
}

fn problem_report<'a>(p: &Problem, outcome: &'a McOutcome) -> Result<ProblemReport<'a>, RunError> {
    let exact = outcome.exact.as_ref().map(|(r, _)| r);
    let verdict = exact.unwrap_or(&outcome.report).verdict.as_str();
    Ok(ProblemReport {
        verdict,
        exact,
        monte_carlo: &outcome.report,
        failed_paths: outcome
            .failures
            .iter()
            .map(|(path, e)| FailedPath { path: *path, error: e.to_string() })
            .collect(),
        init_weights: init_weight_check(p, p.iota()).map_err(|e| RunError::numerical("init weights", e))?,
    })
}

fn monte_carlo(ctx: &mut Context, p: &Problem, noise: &MergedGrid, what: &str) -> Result<McOutcome, RunError> {
    let ensemble = ctx.ensemble;
    timed(&mut ctx.timings.compute_seconds, || {
        mc_regularity_experiment_with(p, &ensemble, |s| p.increments_from(noise, s))
    })
    .map_err(|e| RunError::numerical(what, e))
}

fn maxreg(ctx: &mut Context) -> Outcome {
    let p = ctx.problem.clone();
    let outcome = monte_carlo(ctx, &p, &p.grid, "maxreg")?;
    let report = problem_report(&p, &outcome)?;
    let out = ctx.out.clone();
    timed(&mut ctx.timings.write_seconds, || -> Result<(), RunError> {
        write_json(&out, "report.json", &report)?;
        let mut t = Table::create(&out, "contributions.csv", CONTRIBUTION_COLUMNS)?;
        for c in &outcome.contributions {
            t.row([
                c.eta.to_string(),
                float(c.tau),
                float(c.dtau),
                float(c.lhs),
                float(c.se_lhs),
                float(c.lhs_convolution),
                float(c.se_lhs_convolution),
            ])?;
        }
        t.finish()?;
        let exact = outcome.exact.as_ref().map(|(_, m)| &m.full);
        write_mc_moments(&out, &p, &outcome.moments, exact)
    })?;
    Ok((
        vec![
            ArtifactEntry::json("report.json"),
            ArtifactEntry::table("contributions.csv", CONTRIBUTION_COLUMNS),
            ArtifactEntry::table("moments.csv", MC_MOMENT_COLUMNS),
        ],
        format!("verdict: {}", report.verdict),
    ))
}

fn write_mc_moments(out: &Path, p: &Problem, m: &MomentTable, exact: Option<&MomentTable>) -> Result<(), RunError> {
    let mut t = Table::create(out, "moments.csv", MC_MOMENT_COLUMNS)?;
    for eta in 0..=p.grid.steps() {
        for j in 0..p.es.modes() {
            t.row([
                eta.to_string(),
                float(p.grid.tau(eta)),
                (j + 1).to_string(),
                float(m.values[[eta, j]]),
                float(m.standard_errors[[eta, j]]),
                exact.map(|e| float(e.values[[eta, j]])).unwrap_or_default(),
            ])?;
        }
    }
    t.finish()
}

fn oracle(ctx: &mut Context) -> Outcome {
    let p = &ctx.problem;
    let (exact, continuous) = timed(&mut ctx.timings.compute_seconds, || {
        let exact = exact_second_moments(p)?;
        // the continuous reference exists only for diagonal constant noise
        let continuous = continuous_second_moments(&p.es, p.op.as_ref(), p.xi.coeffs(), p.grid.taus()).ok();
        Ok((exact, continuous))
    })
    .map_err(|e| RunError::numerical("oracle", e))?;
    let out = &ctx.out;
    timed(&mut ctx.timings.write_seconds, || -> Result<(), RunError> {
        let mut t = Table::create(out, "moments.csv", ORACLE_MOMENT_COLUMNS)?;
        for eta in 0..=p.grid.steps() {
            for j in 0..p.es.modes() {
                t.row([
                    eta.to_string(),
                    float(p.grid.tau(eta)),
                    (j + 1).to_string(),
                    float(exact.full.values[[eta, j]]),
                    float(exact.convolution.values[[eta, j]]),
                    continuous.as_ref().map(|c| float(c.values[[eta, j]])).unwrap_or_default(),
                ])?;
            }
        }
        t.finish()
    })?;
    Ok((
        vec![ArtifactEntry::table("moments.csv", ORACLE_MOMENT_COLUMNS)],
        format!("exact moments on {} merged steps", p.grid.steps()),
    ))
}

/// Step count of the uniform scheme spending the same number of Brownian
/// increments as the level grids `n`.
pub fn matched_uniform_steps(n: &[usize]) -> usize {
    let total: usize = n.iter().sum();
    ((total as f64 / n.len() as f64).round() as usize).max(1)
}

#[derive(Serialize)]
struct Budget {
    nonuniform: usize,
    uniform: usize,
}

#[derive(Serialize)]
struct Comparison<'a> {
    uniform_steps: usize,
    increment_budget: Budget,
    nonuniform: ProblemReport<'a>,
    uniform: ProblemReport<'a>,
}

fn compare_uniform(ctx: &mut Context) -> Outcome {
    let p = ctx.problem.clone();
    let n = p.grids.step_counts();
    let steps = matched_uniform_steps(&n);
    let uniform_grids = LevelGrids::uniform(&vec![steps; n.len()])
        .map_err(|e| RunError::numerical("compare-uniform", e))?;
    let u = Problem::new(p.es.clone(), uniform_grids, p.op.clone(), p.xi.clone())
        .map_err(|e| RunError::numerical("compare-uniform", e))?;
    // both schemes read their increments off one Brownian path per level
    let noise = MergedGrid::new(&p.grids.concat(&u.grids));
    let nonuniform_outcome = monte_carlo(ctx, &p, &noise, "compare-uniform (non-uniform)")?;
    let uniform_outcome = monte_carlo(ctx, &u, &noise, "compare-uniform (uniform)")?;
    let comparison = Comparison {
        uniform_steps: steps,
        increment_budget: Budget { nonuniform: n.iter().sum(), uniform: steps * n.len() },
        nonuniform: problem_report(&p, &nonuniform_outcome)?,
        uniform: problem_report(&u, &uniform_outcome)?,
    };
    let out = ctx.out.clone();
    timed(&mut ctx.timings.write_seconds, || write_json(&out, "report.json", &comparison))?;
    Ok((
        vec![ArtifactEntry::json("report.json")],
        format!(
            "non-uniform: {}; uniform (n = {steps}): {}",
            comparison.nonuniform.verdict, comparison.uniform.verdict
        ),
    ))
}
