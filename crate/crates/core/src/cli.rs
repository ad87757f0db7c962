//! `manifold-reach` command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime abort.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::{Method, RunConfig, SourceKind};
use crate::hamiltonian::HamiltonianMode;
use crate::oracle::{
    calibrate_threshold, classify_brs, dense_slice, grid_solve_circle, table_slices, CircleGridSolution,
    CircleReachSpec, ValueSource,
};
use crate::planner::{plan_step, AgentModel, SafetyModel};
use crate::simulator::{
    run_benchmark, AgentSpec, Controller, Planning, Scenario, TrialRecord, REPORT_HEADER,
};
use crate::trainer::{pde_residual_report, train_with_progress, ReachabilityProblem, TerminalCondition};
use crate::value_net::ValueNetwork;
use crate::{ReachError, Result, Vector};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "manifold-reach", version, about = "Constrained HJ reachability with neural value functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed applied to training data, initialization and benchmark draws.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a value network and write the model, loss history and manifest.
    Train,
    /// Classify the circle BRS at the table slices.
    EvalBrs {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum)]
        source: Option<SourceArg>,
    },
    /// Run the paired planner benchmark.
    Simulate {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// One receding-horizon solve, dumped as JSON.
    Plan {
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Network,
    Grid,
    Analytic,
}

impl From<SourceArg> for SourceKind {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Network => SourceKind::Network,
            SourceArg::Grid => SourceKind::Grid,
            SourceArg::Analytic => SourceKind::Analytic,
        }
    }
}

pub fn exit_code(err: &ReachError) -> i32 {
    match err {
        ReachError::Config { .. } | ReachError::Model { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.apply_seed(s);
    } else {
        cfg.resolve_seeds();
    }
    let model_flag = match &cli.command {
        Command::EvalBrs { model, .. } | Command::Simulate { model } | Command::Plan { model } => model.clone(),
        Command::Train => None,
    };
    if model_flag.is_some() {
        cfg.model = model_flag;
    }
    if let Command::EvalBrs { source: Some(s), .. } = &cli.command {
        cfg.evaluation.source = (*s).into();
    }
    cfg.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.output_dir = Some(out.clone());
    fs::create_dir_all(&out)?;

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            if n == 0 {
                return Err(ReachError::config("--threads", "must be at least 1"));
            }
            b = b.num_threads(n);
        }
        b.build()
            .map_err(|e| ReachError::InvalidInput(format!("thread pool: {e}")))?
    };
    let threads = pool.current_num_threads();
    let (name, outputs) = pool.install(|| match &cli.command {
        Command::Train => cmd_train(&cfg, &out).map(|o| ("train", o)),
        Command::EvalBrs { .. } => cmd_eval_brs(&cfg, &out).map(|o| ("eval-brs", o)),
        Command::Simulate { .. } => cmd_simulate(&cfg, &out).map(|o| ("simulate", o)),
        Command::Plan { .. } => cmd_plan(&cfg, &out).map(|o| ("plan", o)),
    })?;
    write_manifest(&out, name, &cfg, threads, &outputs)
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, threads: usize, outputs: &[String]) -> Result<()> {
    let toml_text = cfg.to_toml();
    fs::write(out.join("resolved_config.toml"), &toml_text)?;
    let manifest = json!({
        "tool": "manifold-reach",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "threads": threads,
        "seeds": {
            "training.data_seed": cfg.training.data_seed,
            "training.init_seed": cfg.training.init_seed,
            "benchmark.seed": cfg.benchmark.seed,
        },
        "outputs": outputs,
        "resolved_config_file": "resolved_config.toml",
        "config": cfg,
    });
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn write(out: &Path, name: &str, contents: &str, outputs: &mut Vec<String>) -> Result<()> {
    fs::write(out.join(name), contents)?;
    outputs.push(name.to_string());
    Ok(())
}

fn train_model(cfg: &RunConfig, problem: &ReachabilityProblem) -> Result<(ValueNetwork, String)> {
    let arch = cfg.architecture.build(problem.state_dim())?;
    let outcome = train_with_progress(problem, &arch, &cfg.training, |r| {
        eprintln!(
            "step {:>6}  l1 {:.6}  l2 {:.6}  total {:.6}  |g| {:.3e}",
            r.step, r.l1, r.l2, r.total, r.grad_norm
        );
    })?;
    let mut csv = String::from("step,l1,l2,total,grad_norm\n");
    for r in &outcome.history {
        let _ = writeln!(csv, "{},{:e},{:e},{:e},{:e}", r.step, r.l1, r.l2, r.total, r.grad_norm);
    }
    Ok((outcome.network, csv))
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let problem = cfg.problem.build()?;
    let (net, csv) = train_model(cfg, &problem)?;
    let mut outputs = Vec::new();
    net.save(&out.join("model.json"))?;
    outputs.push("model.json".to_string());
    write(out, "loss.csv", &csv, &mut outputs)?;
    let report = pde_residual_report(&net, &problem, 1000, cfg.training.data_seed.wrapping_add(1))?;
    write(out, "residuals.json", &serde_json::to_string_pretty(&report)?, &mut outputs)?;
    Ok(outputs)
}

fn load_model(cfg: &RunConfig, problem: &ReachabilityProblem) -> Result<ValueNetwork> {
    let path = cfg
        .model
        .as_ref()
        .ok_or_else(|| ReachError::config("model", "a trained model path is required (--model)"))?;
    let net = ValueNetwork::load(path).map_err(|e| match e {
        ReachError::Model { .. } => e,
        other => ReachError::Model {
            path: path.clone(),
            message: other.to_string(),
        },
    })?;
    check_model(&net, problem, path)?;
    Ok(net)
}

fn check_model(net: &ValueNetwork, problem: &ReachabilityProblem, path: &Path) -> Result<()> {
    if net.state_dim() != problem.state_dim() {
        return Err(ReachError::Model {
            path: path.to_path_buf(),
            message: format!(
                "model state dimension {} does not match the problem's {}",
                net.state_dim(),
                problem.state_dim()
            ),
        });
    }
    if (net.horizon() - problem.horizon).abs() > 1e-12 {
        return Err(ReachError::Model {
            path: path.to_path_buf(),
            message: format!("model horizon {} does not match the problem's {}", net.horizon(), problem.horizon),
        });
    }
    Ok(())
}

fn circle_spec(problem: &ReachabilityProblem) -> Result<CircleReachSpec> {
    let spec = CircleReachSpec::new(problem.horizon);
    let matches = problem.mode == HamiltonianMode::ReachMin
        && problem.ego == crate::geometry::ManifoldConstraint::circle(spec.radius, spec.center)?
        && problem.terminal
            == TerminalCondition::GoalDistance {
                goal: spec.goal.to_vec(),
            }
        && (problem.bounds.u_max - spec.u_max).abs() < 1e-15;
    if !matches {
        return Err(ReachError::config("problem", "eval-brs needs the circle reach problem"));
    }
    Ok(spec)
}

#[derive(Serialize)]
struct Calibration {
    slice: f64,
    candidates: Vec<f64>,
    threshold: f64,
}

fn cmd_eval_brs(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let problem = cfg.problem.build()?;
    let spec = circle_spec(&problem)?;
    let ev = &cfg.evaluation;
    let net;
    let grid: CircleGridSolution;
    let source = match ev.source {
        SourceKind::Network => {
            net = load_model(cfg, &problem)?;
            ValueSource::Network(&net)
        }
        SourceKind::Grid => {
            grid = grid_solve_circle(&spec, ev.grid_theta, ev.grid_time)?;
            ValueSource::Grid(&grid)
        }
        SourceKind::Analytic => ValueSource::Analytic,
    };
    let slices: Vec<f64> = if ev.slices.is_empty() {
        table_slices(spec.horizon).to_vec()
    } else {
        ev.slices.clone()
    };
    for &t in &slices {
        if !(0.0..=spec.horizon).contains(&t) {
            return Err(ReachError::config("evaluation.slices", format!("{t} lies outside [0, T]")));
        }
    }
    let cal_slice = ev
        .calibration_slice
        .unwrap_or(spec.horizon - 3.0 * std::f64::consts::PI / 16.0);
    let calibrated = calibrate_threshold(source, &spec, cal_slice, ev.resolution, &ev.calibration_candidates)?;

    let flag = if problem.constrained { "w/" } else { "w/o" };
    let header = "t,manifold,source,threshold,accuracy,recall,precision,f1,tp,fp,tn,fn\n";
    let mut table = String::from(header);
    let mut table_cal = String::from(header);
    let mut dense = String::from("t,angle,value,truth,prediction\n");
    for &t in &slices {
        for (delta, target) in [(ev.threshold, &mut table), (calibrated, &mut table_cal)] {
            let r = classify_brs(source, &spec, t, ev.resolution, delta)?;
            let _ = writeln!(
                target,
                "{:.6},{},{},{},{:.2},{:.2},{:.2},{:.2},{},{},{},{}",
                t,
                flag,
                source.label(),
                delta,
                r.accuracy,
                r.recall,
                r.precision,
                r.f1,
                r.tp,
                r.fp,
                r.tn,
                r.fn_
            );
        }
        for s in dense_slice(source, &spec, t, ev.resolution, ev.threshold)? {
            let _ = writeln!(dense, "{:.6},{:.9},{:e},{},{}", t, s.angle, s.value, s.truth as u8, s.prediction as u8);
        }
    }
    print!("{table}");
    let mut outputs = Vec::new();
    write(out, "brs_table.csv", &table, &mut outputs)?;
    write(out, "brs_table_calibrated.csv", &table_cal, &mut outputs)?;
    write(out, "dense.csv", &dense, &mut outputs)?;
    let cal = Calibration {
        slice: cal_slice,
        candidates: ev.calibration_candidates.clone(),
        threshold: calibrated,
    };
    write(out, "calibration.json", &serde_json::to_string_pretty(&cal)?, &mut outputs)?;
    Ok(outputs)
}

fn game_problem(cfg: &RunConfig) -> Result<ReachabilityProblem> {
    let problem = cfg.problem.build()?;
    if problem.mode != HamiltonianMode::AvoidGame {
        return Err(ReachError::config("problem", "this command needs a pairwise game problem"));
    }
    Ok(problem)
}

/// Two Hammar agents on the game's circle; starts and goals are redrawn per trial.
pub fn default_scenario(problem: &ReachabilityProblem) -> Result<Scenario> {
    let c = problem.ego.clone();
    let radius = match problem.terminal {
        TerminalCondition::PairwiseSeparation { agent_radius } => agent_radius,
        _ => 0.05,
    };
    // Four well-separated template points; trials redraw starts and goals anyway.
    let candidates = c.sample(64, 0)?;
    let mut points: Vec<Vector> = Vec::new();
    for p in candidates {
        if points.iter().all(|q| (q - &p).norm() > 4.0 * radius) {
            points.push(p);
        }
        if points.len() == 4 {
            break;
        }
    }
    if points.len() < 4 {
        return Err(ReachError::config("scenario", "manifold too small for a default two-agent scenario"));
    }
    let agent = |s: &Vector, g: &Vector| AgentSpec {
        constraint: c.clone(),
        start: s.as_slice().to_vec(),
        goal: g.as_slice().to_vec(),
        radius,
        u_max: problem.bounds.u_max,
        controller: Controller::Hammar,
    };
    Ok(Scenario {
        agents: vec![agent(&points[0], &points[1]), agent(&points[2], &points[3])],
        dt: 0.05,
        max_steps: 200,
        seed: 0,
    })
}

fn trial_summary(t: &TrialRecord) -> TrialRecord {
    TrialRecord {
        log: Vec::new(),
        ..t.clone()
    }
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let problem = game_problem(cfg)?;
    let mut outputs = Vec::new();
    let net = if cfg.model.is_some() {
        load_model(cfg, &problem)?
    } else {
        let (net, csv) = train_model(cfg, &problem)?;
        net.save(&out.join("model.json"))?;
        outputs.push("model.json".to_string());
        write(out, "loss.csv", &csv, &mut outputs)?;
        net
    };
    cfg.planning
        .validate(problem.horizon)?;
    let safety = SafetyModel::new(&problem, &net)?;
    let base = match &cfg.scenario {
        Some(s) => s.clone(),
        None => default_scenario(&problem)?,
    };
    base.validate()?;
    let planning = Planning {
        config: &cfg.planning,
        safety: Some(safety),
    };
    let mut csv = format!("{REPORT_HEADER}\n");
    let mut summaries = Vec::new();
    for method in &cfg.simulate.methods {
        let controller = match method {
            Method::Hammar => Controller::Hammar,
            Method::NoSafety => Controller::NoSafety,
        };
        let scenario = base.with_controller(controller);
        let report = run_benchmark(&scenario, &cfg.benchmark, planning)?;
        csv.push_str(&report.summary.csv_row());
        csv.push('\n');
        eprintln!("{}", report.summary.csv_row());
        let label = report.summary.method.to_lowercase();
        let mut trials = String::new();
        let mut steps = String::new();
        for (k, t) in report.trials.iter().enumerate() {
            trials.push_str(&serde_json::to_string(&trial_summary(t))?);
            trials.push('\n');
            if cfg.simulate.trial_logs {
                for s in &t.log {
                    let mut v = serde_json::to_value(s)?;
                    v["trial"] = json!(k);
                    steps.push_str(&serde_json::to_string(&v)?);
                    steps.push('\n');
                }
            }
        }
        write(out, &format!("trials_{label}.jsonl"), &trials, &mut outputs)?;
        if cfg.simulate.trial_logs {
            write(out, &format!("steps_{label}.jsonl"), &steps, &mut outputs)?;
        }
        let max_residual = report
            .trials
            .iter()
            .map(|t| t.max_manifold_residual)
            .fold(0.0, f64::max);
        summaries.push(json!({ "summary": report.summary, "max_manifold_residual": max_residual }));
    }
    print!("{csv}");
    write(out, "benchmark.csv", &csv, &mut outputs)?;
    write(out, "benchmark.json", &serde_json::to_string_pretty(&summaries)?, &mut outputs)?;
    Ok(outputs)
}

fn cmd_plan(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let problem = game_problem(cfg)?;
    let query = cfg
        .plan
        .as_ref()
        .ok_or_else(|| ReachError::config("plan", "missing [plan] section with ego, others and goal"))?;
    let n = problem.ego.ambient_dim();
    if query.ego.len() != n || query.goal.len() != n || query.others.iter().any(|o| o.len() != n) {
        return Err(ReachError::config("plan", format!("states must have dimension {n}")));
    }
    let net = if query.others.is_empty() && cfg.model.is_none() {
        None
    } else {
        Some(load_model(cfg, &problem)?)
    };
    let safety = net.as_ref().map(|n| SafetyModel::new(&problem, n)).transpose()?;
    let ego = Vector::from_column_slice(&query.ego);
    let goal = Vector::from_column_slice(&query.goal);
    let others: Vec<Vector> = query.others.iter().map(|o| Vector::from_column_slice(o)).collect();
    let agent = AgentModel {
        constraint: &problem.ego,
        u_max: query.u_max,
    };
    let r = plan_step(&ego, &others, &goal, agent, safety, &cfg.planning, None)?;
    let dump = json!({
        "status": r.status,
        "controls": r.controls.iter().map(|u| u.as_slice().to_vec()).collect::<Vec<_>>(),
        "states": r.states.iter().map(|x| x.as_slice().to_vec()).collect::<Vec<_>>(),
        "min_safety_value": r.min_safety_value,
        "iterations": r.iterations,
        "wall_time": r.wall_time,
    });
    let text = serde_json::to_string_pretty(&dump)?;
    println!("{text}");
    let mut outputs = Vec::new();
    write(out, "plan.json", &text, &mut outputs)?;
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_exit_with_config_code() {
        assert_eq!(run(["manifold-reach", "bogus"]), EXIT_CONFIG);
        assert_eq!(run(["manifold-reach", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_config_file_is_a_config_error() {
        let code = run(["manifold-reach", "train", "--config", "/nonexistent/run.toml"]);
        assert_eq!(code, EXIT_CONFIG);
    }
}
