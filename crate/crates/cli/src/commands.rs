use std::path::{Path, PathBuf};
use std::time::Instant;

use oc_core::baseline;
use oc_core::checkpoint::Checkpoint;
use oc_core::evaluation::{self, CodConfig, CodReport, CostSummary, ShockSpec, SphereStats};
use oc_core::problem::ControlProblem;
use oc_core::scenarios::ScenarioId;
use oc_core::trainer::{self, TrainEvent, TrainStatus};
use oc_core::{Scenario64, ValueNet64};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Resolved, RunConfig};
use crate::exit::CliError;
use crate::manifest::{Run, Status};
use crate::plot::{self, Figure, Mark, Series, Table};
use crate::{BaselineArgs, BenchArgs, CodArgs, Common, EvalArgs, HypersphereArgs, PlotArgs, PlotKind, ShockArgs, TrainArgs};

type CmdResult = Result<(), CliError>;

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.scenario {
        cfg.scenario = Some(s);
    }
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    Ok(cfg)
}

fn set(section: &mut Value, key: &str, value: Option<Value>) {
    if let (Some(v), Value::Object(map)) = (value, section) {
        map.insert(key.to_string(), v);
    }
}

/// Flag, then environment (both via clap), then config file, then `runs/<scenario>`.
fn out_dir(common: &Common, cfg: &RunConfig, scenario: ScenarioId) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(scenario.to_string()))
}

fn build(resolved: &Resolved) -> Result<Scenario64, CliError> {
    Ok(resolved.params.build::<f64>()?)
}

fn start_point(x0: &Option<Vec<f64>>, sc: &Scenario64) -> Result<Vec<f64>, CliError> {
    let x = x0.clone().unwrap_or_else(|| sc.rho.center.clone());
    let d = sc.problem.state_dim();
    if x.len() != d {
        return Err(CliError::config(format!("start state has {} entries, scenario needs {d}", x.len())));
    }
    Ok(x)
}

fn seeds(r: &Resolved) -> Value {
    json!({
        "train": r.train.seed,
        "baseline": r.baseline.seed,
        "sweep": r.sweep.seed,
        "bootstrap": r.sweep.bootstrap.seed,
    })
}

/// Writes the manifest and maps the body's result to the command result.
fn finish(run: Run, result: CmdResult) -> CmdResult {
    match result {
        Ok(()) => {
            let path = run.finish(Status::Complete, None)?;
            eprintln!("manifest: {}", path.display());
            Ok(())
        }
        Err(e) => {
            let status = if run.manifest.artifacts.is_empty() {
                Status::Failed
            } else {
                Status::Partial
            };
            if let Ok(path) = run.finish(status, Some(e.message.clone())) {
                eprintln!("manifest: {}", path.display());
            }
            Err(e)
        }
    }
}

fn begin(command: &str, common: &Common, cfg: &RunConfig, resolved: &Resolved, single_thread: bool) -> Result<Run, CliError> {
    let dir = out_dir(common, cfg, resolved.scenario);
    let mut run = Run::start(command, &dir, single_thread)?;
    run.manifest.run_config = Some(resolved.to_run_config(None));
    run.manifest.seeds = seeds(resolved);
    Ok(run)
}

/// Loads a checkpoint and resolves the config against its scenario.
fn with_checkpoint(
    common: &Common,
    path: &Path,
    patch: impl FnOnce(&mut RunConfig),
) -> Result<(RunConfig, Resolved, ValueNet64), CliError> {
    let ckpt = Checkpoint::load(path)?;
    let mut cfg = load_config(common)?;
    patch(&mut cfg);
    if let Some(s) = cfg.scenario {
        if s != ckpt.scenario {
            return Err(CliError::config(format!(
                "config scenario {s} does not match checkpoint scenario {}",
                ckpt.scenario
            )));
        }
    }
    let mut resolved = cfg.resolve(ckpt.scenario)?;
    resolved.train = ckpt.train_config.clone();
    let net = ckpt.to_net::<f64>()?;
    let d = resolved.params.state_dim();
    if net.state_dim() != d {
        return Err(CliError::config(format!(
            "checkpoint has state dimension {}, scenario needs {d}",
            net.state_dim()
        )));
    }
    Ok((cfg, resolved, net))
}

#[derive(Serialize)]
struct TrainReport<'a> {
    scenario: ScenarioId,
    status: &'a TrainStatus,
    iters: usize,
    params: usize,
    wall_seconds: f64,
    final_validation: Option<&'a trainer::Validation>,
}

pub fn train(args: &TrainArgs, single_thread: bool) -> CmdResult {
    let mut cfg = load_config(&args.common)?;
    set(&mut cfg.train, "width", args.width.map(Value::from));
    set(&mut cfg.train, "max_iters", args.iters.map(Value::from));
    set(&mut cfg.train, "batch_size", args.batch_size.map(Value::from));
    set(&mut cfg.train, "checkpoint_every", args.checkpoint_every.map(Value::from));
    let resolved = cfg.resolve(ScenarioId::Corridor)?;
    let mut run = begin("train", &args.common, &cfg, &resolved, single_thread)?;
    let result = train_body(&mut run, &resolved, args.quiet);
    finish(run, result)
}

fn train_body(run: &mut Run, r: &Resolved, quiet: bool) -> CmdResult {
    let sc = build(r)?;
    let d = sc.problem.state_dim();
    let tc = &r.train;
    let init = ValueNet64::init(d, tc.width, tc.seed)?;
    if !quiet {
        eprintln!(
            "training {} (d = {d}, m = {}, {} params) for {} iterations",
            r.scenario,
            tc.width,
            init.num_params(),
            tc.max_iters
        );
    }
    let start = Instant::now();
    let dir = run.dir.clone();
    let mut saved = Vec::new();
    let mut save_err = None;
    let outcome = trainer::train_with(&sc.problem, &sc.rho, tc, init, &mut |ev| match ev {
        TrainEvent::Iteration(rec) => {
            if let (false, Some(v)) = (quiet, &rec.validation) {
                eprintln!(
                    "iter {:>6}  loss {:>12.5}  val J {:>12.5}  G {:>10.5}  lr {:.1e}  {:.1}s",
                    rec.iter, rec.loss, v.objective, v.terminal, rec.lr, rec.elapsed_s
                );
            }
        }
        TrainEvent::Checkpoint { iter, net } => {
            let name = format!("checkpoint_{iter:06}.json");
            match Checkpoint::new(r.scenario, net, tc, iter).save(&dir.join(&name)) {
                Ok(()) => saved.push(name),
                Err(e) => save_err = Some(e),
            }
        }
    })?;
    for name in saved {
        run.artifact(&name);
    }
    if let Some(e) = save_err {
        return Err(e.into());
    }
    let ckpt = Checkpoint::new(r.scenario, &outcome.net, tc, outcome.iters);
    ckpt.save(&run.artifact("checkpoint.json"))?;
    outcome.log.save_csv(&run.artifact("train_log.csv"))?;
    let report = TrainReport {
        scenario: r.scenario,
        status: &outcome.status,
        iters: outcome.iters,
        params: outcome.net.num_params(),
        wall_seconds: start.elapsed().as_secs_f64(),
        final_validation: outcome.log.validations().last().map(|(_, v)| v),
    };
    run.write_json("train_report.json", &report)?;
    match &outcome.status {
        TrainStatus::Completed => {
            if !quiet {
                eprintln!("wrote {}", run.dir.join("checkpoint.json").display());
            }
            Ok(())
        }
        TrainStatus::Aborted { iter, reason } => Err(CliError::numerical(format!(
            "training aborted at iteration {iter}: {reason} (checkpoint holds the last finite parameters)"
        ))),
    }
}

#[derive(Serialize)]
struct BaselineReport {
    scenario: ScenarioId,
    x0: Vec<f64>,
    t0: f64,
    n_t: usize,
    /// Validation-cost breakdown of the optimized trajectory.
    cost: CostSummary,
    /// Objective that was minimized (training obstacle model).
    optimized_objective: f64,
    start_objectives: Vec<f64>,
    converged: bool,
    wall_seconds: f64,
}

pub fn baseline(args: &BaselineArgs, single_thread: bool) -> CmdResult {
    let mut cfg = load_config(&args.common)?;
    set(&mut cfg.baseline, "n_t", args.n_t.map(Value::from));
    set(&mut cfg.baseline, "iters", args.iters.map(Value::from));
    let resolved = cfg.resolve(ScenarioId::Corridor)?;
    let mut run = begin("baseline", &args.common, &cfg, &resolved, single_thread)?;
    run.manifest.inputs = json!({ "x0": args.x0, "t0": args.t0 });
    let result = (|| {
        let sc = build(&resolved)?;
        let x0 = start_point(&args.x0, &sc)?;
        let horizon = sc.problem.horizon();
        if !(0.0..horizon).contains(&args.t0) {
            return Err(CliError::config(format!("t0 must lie in [0, {horizon})")));
        }
        let bc = &resolved.baseline;
        let n = bc.steps_from(args.t0, horizon);
        let start = Instant::now();
        let sol = baseline::solve_with_steps(&sc.problem, &x0, args.t0, n, bc)?;
        sol.save_csv(&sc.problem, &run.artifact("baseline_trajectory.csv"))?;
        let report = BaselineReport {
            scenario: resolved.scenario,
            x0: x0.clone(),
            t0: args.t0,
            n_t: n,
            cost: CostSummary::of_baseline(&sc.problem.validation(), &sol),
            optimized_objective: sol.optimized.total,
            start_objectives: sol.start_objectives.clone(),
            converged: sol.converged,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        eprintln!("baseline J = {:.6} (l = {:.6}, G = {:.6})", report.cost.objective, report.cost.ell, report.cost.terminal);
        run.write_json("baseline_report.json", &report)?;
        Ok(())
    })();
    finish(run, result)
}

pub fn eval(args: &EvalArgs, single_thread: bool) -> CmdResult {
    let (cfg, resolved, net) = with_checkpoint(&args.common, &args.checkpoint, |_| {})?;
    let mut run = begin("eval", &args.common, &cfg, &resolved, single_thread)?;
    run.manifest.inputs = json!({
        "checkpoint": args.checkpoint,
        "x0": args.x0,
        "t0": args.t0,
        "n_t": args.n_t,
        "baseline": !args.no_baseline,
    });
    let result = (|| {
        let sc = build(&resolved)?;
        let x0 = start_point(&args.x0, &sc)?;
        let n_t = args.n_t.unwrap_or(resolved.train.n_t_val);
        let bc = (!args.no_baseline).then_some(&resolved.baseline);
        let (mut report, rollout) = evaluation::evaluate(&net, &sc.problem, &x0, args.t0, n_t, bc)?;
        report.scenario = Some(resolved.scenario);
        rollout.save_csv(&run.artifact("eval_rollout.csv"))?;
        run.write_json("eval_report.json", &report)?;
        eprint!("policy J = {:.6}", report.nn.objective);
        if let (Some(b), Some(s)) = (&report.baseline, report.suboptimality) {
            eprint!("  baseline J = {:.6}  suboptimality = {:.2}%", b.objective, 100.0 * s);
        }
        eprintln!();
        Ok(())
    })();
    finish(run, result)
}

pub fn shock(args: &ShockArgs, single_thread: bool) -> CmdResult {
    let (cfg, resolved, net) = with_checkpoint(&args.common, &args.checkpoint, |_| {})?;
    let mut run = begin("shock", &args.common, &cfg, &resolved, single_thread)?;
    run.manifest.inputs = json!({
        "checkpoint": args.checkpoint,
        "time": args.time,
        "displacement": args.displacement,
        "norm": args.norm,
        "direction_seed": args.direction_seed,
        "x0": args.x0,
    });
    let result = (|| {
        let sc = build(&resolved)?;
        let x0 = start_point(&args.x0, &sc)?;
        let d = sc.problem.state_dim();
        let spec = match (&args.displacement, args.norm) {
            (Some(xi), _) => ShockSpec {
                time: args.time,
                displacement: xi.clone(),
            },
            (None, Some(norm)) => ShockSpec::random(d, norm, args.time, args.direction_seed),
            (None, None) => return Err(CliError::config("give --displacement or --norm")),
        };
        let (report, rollout) =
            evaluation::shock_experiment(&net, &sc.problem, &x0, &spec, resolved.train.n_t_val, &resolved.baseline)?;
        rollout.save_csv(&run.artifact("shock_rollout.csv"))?;
        run.write_json("shock_report.json", &report)?;
        eprintln!(
            "shock |xi| = {:.3} at t = {:.3}: policy {:.6}  baseline {:.6}  suboptimality {:.2}%  G {:.4}",
            report.shock_norm,
            report.time,
            report.nn.objective,
            report.baseline.objective,
            100.0 * report.suboptimality,
            report.nn.terminal
        );
        Ok(())
    })();
    finish(run, result)
}

fn sphere_figure(stats: &[SphereStats], scenario: ScenarioId) -> Figure {
    let pick = |f: fn(&SphereStats) -> f64| stats.iter().map(|s| (s.magnitude, 100.0 * f(s))).collect();
    Figure {
        title: format!("{scenario}: suboptimality vs shock magnitude"),
        x_label: "|xi|".into(),
        y_label: "suboptimality (%)".into(),
        mark: Mark::Line,
        series: vec![
            Series {
                name: "mean".into(),
                points: pick(|s| s.mean_suboptimality),
            },
            Series {
                name: "2.5%".into(),
                points: pick(|s| s.ci_low),
            },
            Series {
                name: "97.5%".into(),
                points: pick(|s| s.ci_high),
            },
        ],
        equal_aspect: false,
    }
}

pub fn hypersphere(args: &HypersphereArgs, single_thread: bool) -> CmdResult {
    let (cfg, mut resolved, net) = with_checkpoint(&args.common, &args.checkpoint, |cfg| {
        set(&mut cfg.sweep, "magnitudes", args.magnitudes.as_ref().map(|m| json!(m)));
        set(&mut cfg.sweep, "count", args.count.map(Value::from));
    })?;
    if cfg.sweep.get("n_t_val").is_none() {
        resolved.sweep.n_t_val = resolved.train.n_t_val;
    }
    let mut run = begin("sweep_hypersphere", &args.common, &cfg, &resolved, single_thread)?;
    run.manifest.inputs = json!({ "checkpoint": args.checkpoint });
    let result = (|| {
        let sc = build(&resolved)?;
        let x0 = sc.rho.center.clone();
        let stats = evaluation::hypersphere_sweep(&net, &sc.problem, &x0, &resolved.sweep)?;
        run.write_json("hypersphere_report.json", &stats)?;
        let mut w = csv::Writer::from_path(run.artifact("hypersphere.csv")).map_err(|e| CliError::config(e.to_string()))?;
        let rows = std::iter::once(
            ["magnitude", "mean_suboptimality", "ci_low", "ci_high", "interaction_pct", "overlap_pct"].map(String::from),
        )
        .chain(stats.iter().map(|s| {
            [s.magnitude, s.mean_suboptimality, s.ci_low, s.ci_high, s.interaction_pct, s.overlap_pct].map(|v| v.to_string())
        }));
        for row in rows {
            w.write_record(&row).map_err(|e| CliError::config(e.to_string()))?;
        }
        w.flush()?;
        std::fs::write(run.artifact("hypersphere.svg"), sphere_figure(&stats, resolved.scenario).to_svg())?;
        for s in &stats {
            eprintln!(
                "|xi| = {:>5.2}: mean suboptimality {:>7.2}%  95% [{:.2}%, {:.2}%]  interaction {:.0}%",
                s.magnitude,
                100.0 * s.mean_suboptimality,
                100.0 * s.ci_low,
                100.0 * s.ci_high,
                s.interaction_pct
            );
        }
        Ok(())
    })();
    finish(run, result)
}

fn cod_figure(report: &CodReport) -> Figure {
    let pts: Vec<(f64, f64)> = report
        .points
        .iter()
        .filter_map(|p| p.params.map(|n| (p.d as f64, n as f64)))
        .collect();
    let mut series = vec![Series {
        name: "chosen width".into(),
        points: pts.clone(),
    }];
    if let Some(fit) = report.fit {
        series.push(Series {
            name: format!("fit (R2 = {:.3})", fit.r2),
            points: pts.iter().map(|&(x, _)| (x, fit.slope * x + fit.intercept)).collect(),
        });
    }
    Figure {
        title: "parameters vs dimension".into(),
        x_label: "d".into(),
        y_label: "parameters".into(),
        mark: Mark::Scatter,
        series,
        equal_aspect: false,
    }
}

pub fn cod(args: &CodArgs, single_thread: bool) -> CmdResult {
    let mut cfg = load_config(&args.common)?;
    set(&mut cfg.train, "max_iters", args.iters.map(Value::from));
    set(&mut cfg.train, "batch_size", args.batch_size.map(Value::from));
    let first = *args.pairs.first().ok_or_else(|| CliError::config("--pairs is empty"))?;
    let resolved = cfg.resolve(ScenarioId::SwapK(first))?;
    let mut common = args.common.clone();
    if common.out.is_none() && cfg.out_dir.is_none() {
        common.out = Some(PathBuf::from("runs").join("cod"));
    }
    let mut run = begin("sweep_cod", &common, &cfg, &resolved, single_thread)?;
    let cod = CodConfig {
        pairs: args.pairs.clone(),
        widths: args.widths.clone(),
        budget: args.budget,
        train: resolved.train.clone(),
        baseline: resolved.baseline.clone(),
    };
    run.manifest.inputs = serde_json::to_value(&cod)?;
    let result = (|| {
        let report = evaluation::cod_sweep::<f64>(&cod, &mut |t, k| {
            eprintln!(
                "k = {k}: width {:>4} ({:>6} params) suboptimality {:>7.2}%  {:.1}s",
                t.width,
                t.params,
                100.0 * t.suboptimality,
                t.train_seconds
            );
        })?;
        run.write_json("cod_report.json", &report)?;
        let mut w = csv::Writer::from_path(run.artifact("cod.csv")).map_err(|e| CliError::config(e.to_string()))?;
        w.write_record(["pairs", "d", "baseline", "chosen_width", "params", "wall_seconds"])
            .map_err(|e| CliError::config(e.to_string()))?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for p in &report.points {
            w.write_record([
                p.pairs.to_string(),
                p.d.to_string(),
                p.baseline.to_string(),
                opt(p.chosen_width.map(|v| v.to_string())),
                opt(p.params.map(|v| v.to_string())),
                opt(p.wall_seconds.map(|v| v.to_string())),
            ])
            .map_err(|e| CliError::config(e.to_string()))?;
        }
        w.flush()?;
        std::fs::write(run.artifact("cod.svg"), cod_figure(&report).to_svg())?;
        if let Some(fit) = report.fit {
            eprintln!("params ~ {:.1} d + {:.1}  (R2 = {:.3})", fit.slope, fit.intercept, fit.r2);
        }
        Ok(())
    })();
    finish(run, result)
}

pub fn bench(args: &BenchArgs, single_thread: bool) -> CmdResult {
    let (cfg, resolved, net) = with_checkpoint(&args.common, &args.checkpoint, |_| {})?;
    let mut run = begin("bench", &args.common, &cfg, &resolved, single_thread)?;
    run.manifest.inputs = json!({ "checkpoint": args.checkpoint, "reps": args.reps, "n_t": args.n_t });
    let result = (|| {
        let sc = build(&resolved)?;
        let x0 = sc.rho.center.clone();
        let n_t = args.n_t.unwrap_or(resolved.train.n_t_val);
        let report = evaluation::timing_harness(&net, &sc.problem, &x0, n_t, args.reps)?;
        run.write_json("bench_report.json", &report)?;
        eprintln!(
            "policy step {:.2} us  baseline estimate {:.3} ms  ratio {:.1}x  (cv {:.3})",
            report.nn_step_seconds * 1e6,
            report.baseline_seconds * 1e3,
            report.ratio,
            report.nn_step_cv
        );
        Ok(())
    })();
    finish(run, result)
}

pub fn plot(args: &PlotArgs, single_thread: bool) -> CmdResult {
    let output = args.output.clone().unwrap_or_else(|| args.input.with_extension("svg"));
    let dir = match output.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut run = Run::start("plot", &dir, single_thread)?;
    if let Some(stem) = output.file_stem() {
        run.manifest_name = format!("{}.plot.manifest.json", stem.to_string_lossy());
    }
    run.manifest.inputs = json!({
        "input": args.input,
        "output": output,
        "kind": format!("{:?}", args.kind).to_lowercase(),
        "x": args.x,
        "y": args.y,
        "agent_dim": args.agent_dim,
    });
    let result = (|| {
        let table = Table::read(&args.input)?;
        let title = args.title.clone().unwrap_or_else(|| {
            args.input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        let kind = match args.kind {
            PlotKind::Auto if table.is_trajectory() => PlotKind::Trajectory,
            PlotKind::Auto => PlotKind::Line,
            k => k,
        };
        let fig = match kind {
            PlotKind::Trajectory => plot::trajectory_figure(&table, args.agent_dim, &title)?,
            _ => {
                let x = args.x.clone().unwrap_or_else(|| table.headers[0].clone());
                let ys = args
                    .y
                    .clone()
                    .unwrap_or_else(|| table.headers.iter().skip(1).take(1).cloned().collect());
                let mark = if kind == PlotKind::Scatter { Mark::Scatter } else { Mark::Line };
                plot::column_figure(&table, &x, &ys, mark, &title)?
            }
        };
        let name = output
            .file_name()
            .ok_or_else(|| CliError::config("output path has no file name"))?
            .to_string_lossy()
            .into_owned();
        std::fs::write(run.artifact(&name), fig.to_svg())?;
        Ok(())
    })();
    finish(run, result)
}
