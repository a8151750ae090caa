mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use oparc::adaptive::{lcmv, qcmv, sinr_report};
use oparc::array::{pattern_linear, pattern_over_grid};
use oparc::multipoint::solve_step;
use oparc::quiescent::{adapt, adapt_with_constraints, design_quiescent};
use oparc::scenario::{control_metrics, generate_snapshots};
use oparc::synthesis::synthesize;
use oparc::{
    to_db, AngleGrid, ArrayGeometry, BeamWeight, ConstraintSpec, CovarianceEstimate, LedgerEntry, PersistedDesign, QuiescentDesign, Steering,
    SynthesisOutcome, Vcm,
};
use serde_json::json;

use config::{Config, ConstraintFile, ScenarioSettings, SolverKind, TaskFile};
use output::Run;

#[derive(Parser)]
#[command(name = "oparc", version, about = "Multi-point array response control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a pattern meeting [desired_pattern].
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum)]
        solver: Option<SolverKind>,
        /// Also write the pattern after every step and the solver traces.
        #[arg(long)]
        trace: bool,
    },
    /// One multi-point control step.
    Control {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Adaptive beamforming with level constraints on simulated data.
    Beamform {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        constraints: PathBuf,
        #[arg(long)]
        snapshots: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Two-stage quiescent pattern control.
    Quiescent {
        #[arg(value_enum)]
        stage: Stage,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        extra_constraints: Option<PathBuf>,
    },
    /// Write simulated interference-plus-noise snapshots as CSV.
    Sim {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        snapshots: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Stage {
    Design,
    Adapt,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, out_dir, solver, trace } => synth(&config, &out_dir, solver, trace),
        Command::Control { config, tasks, out_dir } => control(&config, &tasks, &out_dir),
        Command::Beamform { config, constraints, snapshots, seed, out_dir } => beamform(&config, &constraints, snapshots, seed, &out_dir),
        Command::Quiescent { stage: Stage::Design, config, design, out_dir, extra_constraints } => {
            if extra_constraints.is_some() {
                Err(anyhow::anyhow!("--extra-constraints applies to `quiescent adapt` only"))
            } else {
                quiescent_design(&config, &design, &out_dir)
            }
        }
        Command::Quiescent { stage: Stage::Adapt, config, design, out_dir, extra_constraints } => {
            quiescent_adapt(&config, &design, &out_dir, extra_constraints.as_deref())
        }
        Command::Sim { config, snapshots, seed, out } => sim(&config, snapshots, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn output_grid(cfg: &Config) -> Result<AngleGrid> {
    Ok(AngleGrid::full(cfg.solver.grid_step())?)
}

fn scenario_settings(cfg: &Config, snapshots: Option<usize>, seed: Option<u64>) -> Result<ScenarioSettings> {
    let section = cfg.scenario.as_ref().context("config has no [scenario] section")?;
    let fallback = cfg.desired_pattern.as_ref().map(|d| d.theta0_deg);
    section.settings(fallback, snapshots, seed)
}

fn estimate(settings: &ScenarioSettings, geom: &ArrayGeometry) -> Result<CovarianceEstimate> {
    let x = generate_snapshots(&settings.scenario, geom)?;
    Ok(CovarianceEstimate::from_snapshots(&x, settings.interference_count)?)
}

fn ledger_value(ledger: &[LedgerEntry]) -> serde_json::Value {
    json!(ledger)
}

fn synth(config: &Path, out_dir: &Path, solver: Option<SolverKind>, trace: bool) -> Result<()> {
    let loaded = config::load(config)?;
    let cfg = &loaded.config;
    let geom = cfg.array.geometry()?;
    let desired = cfg.desired_pattern.as_ref().context("config has no [desired_pattern] section")?.desired()?;
    let scfg = cfg.solver.synthesis(solver);
    let result = synthesize(&geom, &desired, &scfg)?;
    let mut run = Run::new(out_dir, &loaded.bytes)?;

    let grid = AngleGrid::full(scfg.grid_step_deg)?;
    let mut ledger: Vec<LedgerEntry> = Vec::new();
    for step in &result.steps {
        ledger.extend(step.tasks.iter().zip(&step.inrs).map(|(t, &b)| LedgerEntry { theta_deg: t.theta_deg, inr_linear: b }));
        let mut record = json!({
            "step": step.step,
            "angles_deg": step.tasks.iter().map(|t| t.theta_deg).collect::<Vec<_>>(),
            "levels_db": step.tasks.iter().map(|t| t.level_db()).collect::<Vec<_>>(),
            "inrs": step.inrs,
            "gain": step.gain,
            "solver_converged": step.solver_converged,
        });
        if trace {
            record["solver_trace"] = json!(step.solver_trace);
            let w = Vcm::from_ledger(&geom, &ledger)?.optimal_weight(&geom.steer(desired.beam_axis_deg)?);
            run.pattern(&format!("pattern_step_{:03}.csv", step.step), &pattern_over_grid(&w, desired.beam_axis_deg, &grid, &geom)?)?;
        }
        run.trace(record)?;
    }
    run.pattern("pattern.csv", &result.pattern)?;
    run.weights("weights.csv", &result.weight)?;
    run.json("ledger.json", &ledger_value(result.vcm.ledger()))?;
    let outcome = match &result.outcome {
        SynthesisOutcome::Qualified => "qualified".to_string(),
        SynthesisOutcome::StepLimit => "step_limit".to_string(),
        SynthesisOutcome::SolverFailed(e) => format!("solver_failed: {e}"),
    };
    run.metric("outcome", &outcome)?;
    run.metric("solver", scfg.solver.name())?;
    run.metric("steps", result.steps_used())?;
    run.metric("gain_trace", result.steps.iter().map(|s| s.gain).collect::<Vec<_>>())?;
    run.metric("peak_deviations_db", &result.peak_deviations)?;
    run.finish()?;
    match &result.outcome {
        SynthesisOutcome::Qualified => Ok(()),
        SynthesisOutcome::StepLimit => {
            eprintln!("warning: step limit {} reached before the pattern qualified", scfg.max_steps);
            Ok(())
        }
        SynthesisOutcome::SolverFailed(e) => bail!("synthesis stopped after {} steps: {e}", result.steps_used()),
    }
}

fn control(config: &Path, tasks: &Path, out_dir: &Path) -> Result<()> {
    let loaded = config::load(config)?;
    let cfg = &loaded.config;
    let geom = cfg.array.geometry()?;
    let file: TaskFile = config::read_toml(tasks)?;
    let tasks = file.tasks()?;
    let theta0 = file
        .theta0_deg
        .or(cfg.desired_pattern.as_ref().map(|d| d.theta0_deg))
        .or(cfg.scenario.as_ref().and_then(|s| s.theta0_deg))
        .context("no beam axis: set `theta0_deg` in the task file or the config")?;
    for t in &tasks {
        t.check_against_axis(theta0)?;
    }
    let solver = cfg.solver.solver(None);
    let vcm = Vcm::from_ledger(&geom, &file.initial)?;
    let a0 = geom.steer(theta0)?;
    let before = vcm.optimal_weight(&a0);
    let out = solve_step(&vcm, &a0, &geom, &tasks, &solver)?;

    let grid = output_grid(cfg)?;
    let mut run = Run::new(out_dir, &loaded.bytes)?;
    let p_before = pattern_over_grid(&before, theta0, &grid, &geom)?;
    let p_after = pattern_over_grid(&out.weight, theta0, &grid, &geom)?;
    run.pattern("pattern_before.csv", &p_before)?;
    run.pattern("pattern.csv", &p_after)?;
    run.weights("weights.csv", &out.weight)?;
    run.json("ledger.json", &ledger_value(out.vcm.ledger()))?;

    let points = grid.points();
    let lin = |p: &[(f64, f64)]| p.iter().map(|x| 10f64.powf(x.1 / 10.0)).collect::<Vec<_>>();
    let j = control_metrics(&points, &lin(&p_before), &lin(&p_after), &[])?.j;
    let angles: Vec<f64> = tasks.iter().map(|t| t.theta_deg).collect();
    let lb = pattern_linear(&before, theta0, &angles, &geom)?;
    let la = pattern_linear(&out.weight, theta0, &angles, &geom)?;
    let d = control_metrics(&angles, &lb, &la, &angles)?.d_db;
    run.trace(json!({ "solver": solver.name(), "trace": out.trace, "converged": out.converged }))?;
    run.metric("theta0_deg", theta0)?;
    run.metric("inrs", &out.sigma)?;
    run.metric("achieved_levels_db", la.iter().map(|&l| to_db(l)).collect::<Vec<_>>())?;
    run.metric("target_levels_db", tasks.iter().map(|t| t.level_db()).collect::<Vec<_>>())?;
    run.metric("d_db", &d)?;
    run.metric("j_linear", j)?;
    run.metric("gain", oparc::array::array_gain(&out.weight, out.vcm.matrix(), &a0)?)?;
    run.metric("converged", out.converged)?;
    run.finish()?;
    if !out.converged {
        eprintln!("warning: {} solver stopped before converging", solver.name());
    }
    Ok(())
}

fn beamform(config: &Path, constraints: &Path, snapshots: usize, seed: u64, out_dir: &Path) -> Result<()> {
    let loaded = config::load(config)?;
    let cfg = &loaded.config;
    let geom = cfg.array.geometry()?;
    let settings = scenario_settings(cfg, Some(snapshots), Some(seed))?;
    let theta0 = settings.scenario.theta0_deg;
    let file: ConstraintFile = config::read_toml(constraints)?;
    let side: Vec<(f64, f64)> = file.constraint.iter().map(|c| (c.theta_deg, c.level_db)).collect();
    let spec = ConstraintSpec::from_levels_db(theta0, &side)?;
    let est = estimate(&settings, &geom)?;
    let solver = cfg.solver.solver(None);
    let result = qcmv(&est.r_hat, est.sigma_n2_hat, &spec, &geom, &solver)?;

    let mut run = Run::new(out_dir, &loaded.bytes)?;
    let grid = output_grid(cfg)?;
    run.weights("weights.csv", &result.weight)?;
    run.pattern("pattern.csv", &pattern_over_grid(&result.weight, theta0, &grid, &geom)?)?;
    run.json("ledger.json", &ledger_value(&result.loading))?;
    run.trace(json!({ "solver": solver.name(), "trace": result.diagnostics.solver_trace, "converged": result.diagnostics.solver_converged }))?;
    run.metric("sinr_qcmv_db", sinr_report(&result.weight, &settings.scenario, &geom)?)?;
    match lcmv(&est.r_hat, &spec, &geom) {
        Ok(w) => run.metric("sinr_lcmv_db", sinr_report(&w, &settings.scenario, &geom)?)?,
        Err(e) => run.metric("sinr_lcmv_db", format!("unavailable: {e}"))?,
    }
    run.metric("sigma_n2_hat", est.sigma_n2_hat)?;
    run.metric("snapshots", est.snapshots_used)?;
    run.metric("regularization", result.diagnostics.regularization)?;
    run.metric("null_angles_deg", &result.diagnostics.null_angles_deg)?;
    let a0 = geom.steer(theta0)?;
    let achieved: Vec<f64> = side
        .iter()
        .map(|&(t, _)| Ok(to_db(oparc::array::response_level_vectors(&result.weight, &geom.steer(t)?, &a0)?)))
        .collect::<Result<_>>()?;
    run.metric("achieved_levels_db", achieved)?;
    run.finish()
}

fn quiescent_design(config: &Path, design_path: &Path, out_dir: &Path) -> Result<()> {
    let loaded = config::load(config)?;
    let cfg = &loaded.config;
    let geom = cfg.array.geometry()?;
    let desired = cfg.desired_pattern.as_ref().context("config has no [desired_pattern] section")?.desired()?;
    let scfg = cfg.solver.synthesis(None);
    let (design, result) = design_quiescent(&geom, &desired, &scfg)?;
    output::write_file(design_path, &(serde_json::to_string_pretty(&design.persist())? + "\n"))?;

    let mut run = Run::new(out_dir, &loaded.bytes)?;
    run.pattern("pattern.csv", &result.pattern)?;
    run.weights("weights.csv", design.weight())?;
    run.metric("design", design_path.display().to_string())?;
    run.metric("outcome", if result.success() { "qualified" } else { "step_limit" })?;
    run.metric("steps", result.steps_used())?;
    run.metric("ledger_entries", design.vcm().ledger().len())?;
    run.metric("fingerprint", design.fingerprint())?;
    run.finish()?;
    if !result.success() {
        eprintln!("warning: step limit {} reached before the quiescent pattern qualified", scfg.max_steps);
    }
    Ok(())
}

fn quiescent_adapt(config: &Path, design_path: &Path, out_dir: &Path, extra: Option<&Path>) -> Result<()> {
    let loaded = config::load(config)?;
    let cfg = &loaded.config;
    let geom = cfg.array.geometry()?;
    let text = std::fs::read_to_string(design_path).with_context(|| format!("reading design {}", design_path.display()))?;
    let persisted: PersistedDesign = serde_json::from_str(&text).with_context(|| format!("parsing design {}", design_path.display()))?;
    let design = QuiescentDesign::restore(&persisted, &geom)?;
    let theta0 = design.theta0_deg();
    let settings = scenario_settings(cfg, None, None)?;
    if (settings.scenario.theta0_deg - theta0).abs() > 1e-9 {
        bail!("[scenario] theta0_deg {} differs from the design's {theta0}", settings.scenario.theta0_deg);
    }
    let est = estimate(&settings, &geom)?;
    let extra_tasks = match extra {
        Some(p) => config::read_toml::<TaskFile>(p)?.tasks()?,
        None => Vec::new(),
    };
    let solver = cfg.solver.solver(None);
    let w: BeamWeight = if extra_tasks.is_empty() {
        adapt(&design, &geom, &est.r_hat, est.sigma_n2_hat)?
    } else {
        adapt_with_constraints(&design, &geom, &est.r_hat, est.sigma_n2_hat, &extra_tasks, &solver)?
    };

    let grid = output_grid(cfg)?;
    let quiescent = design.pattern(&geom, &grid)?;
    let adapted = pattern_over_grid(&w, theta0, &grid, &geom)?;
    let mut run = Run::new(out_dir, &loaded.bytes)?;
    run.weights("weights.csv", &w)?;
    run.pattern("pattern.csv", &adapted)?;
    run.pattern("quiescent_pattern.csv", &quiescent)?;
    let lin = |p: &[(f64, f64)]| p.iter().map(|x| 10f64.powf(x.1 / 10.0)).collect::<Vec<_>>();
    let j = control_metrics(&grid.points(), &lin(&quiescent), &lin(&adapted), &[])?.j;
    run.metric("j_deviation_from_quiescent", j)?;
    run.metric("sinr_db", sinr_report(&w, &settings.scenario, &geom)?)?;
    run.metric("sigma_n2_hat", est.sigma_n2_hat)?;
    run.metric("snapshots", est.snapshots_used)?;
    let interference_angles: Vec<f64> = settings.scenario.interferences.iter().map(|i| i.theta_deg).collect();
    let lq = pattern_linear(design.weight(), theta0, &interference_angles, &geom)?;
    let la = pattern_linear(&w, theta0, &interference_angles, &geom)?;
    run.metric("suppression_db", lq.iter().zip(&la).map(|(q, a)| to_db(*q) - to_db(*a)).collect::<Vec<_>>())?;
    if !extra_tasks.is_empty() {
        let angles: Vec<f64> = extra_tasks.iter().map(|t| t.theta_deg).collect();
        let l = pattern_linear(&w, theta0, &angles, &geom)?;
        run.metric("extra_levels_db", l.iter().map(|&x| to_db(x)).collect::<Vec<_>>())?;
    }
    run.finish()
}

fn sim(config: &Path, snapshots: usize, seed: u64, out: &Path) -> Result<()> {
    let loaded = config::load(config)?;
    let cfg = &loaded.config;
    let geom = cfg.array.geometry()?;
    let settings = scenario_settings(cfg, Some(snapshots), Some(seed))?;
    let x = generate_snapshots(&settings.scenario, &geom)?;
    let mut s = String::from("snapshot,element,re,im\n");
    for (t, v) in x.iter().enumerate() {
        for (n, c) in v.iter().enumerate() {
            s.push_str(&format!("{t},{n},{:e},{:e}\n", c.re, c.im));
        }
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    output::write_file(out, &s)?;
    eprintln!("wrote {} snapshots of {} elements to {}", x.len(), geom.element_count(), out.display());
    Ok(())
}
