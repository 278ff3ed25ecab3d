//! Subcommand bodies.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use chrono::{SecondsFormat, Utc};
use log::info;
use serde::Serialize;

use cwm_core::baselines::{worldcoder_search, zero_shot_pass_at_k, WorldCoderConfig};
use cwm_core::bench::{
    find_manifests, ingest_environment, ingest_io_problem, run_dir_name, to_json, write_atomic,
    ResultsTable, RunManifest, RunSummary, MANIFEST_FILE,
};
use cwm_core::eval::{BufferEvaluator, Evaluation, Evaluator, UnitTestEvaluator};
use cwm_core::fixtures::fixture_env;
use cwm_core::llm::LanguageModel;
use cwm_core::model::SpaceKind;
use cwm_core::planners::{evaluate_cwm, EpisodeOptions, Planner};
use cwm_core::search::{run_search, SearchConfig, SearchTrace};

use crate::setup::require_dir;
use crate::{EvalArgs, Format, PlanArgs, ProgramSource, ReportArgs, SynthArgs};

/// Bad input: exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl fmt::Display) -> anyhow::Error {
    UsageError(msg.to_string()).into()
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// A fresh run directory with the files written into it so far.
struct RunDir {
    path: PathBuf,
    artifacts: Vec<String>,
}

impl RunDir {
    fn create(root: &Path, method: &str, task: &str) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create {}", root.display()))?;
        let base = run_dir_name(
            &Utc::now().format("%Y%m%dT%H%M%S%3fZ").to_string(),
            method,
            task,
        );
        for n in 0.. {
            let name = if n == 0 {
                base.clone()
            } else {
                format!("{base}-{n}")
            };
            let path = root.join(name);
            match fs::create_dir(&path) {
                Ok(()) => {
                    return Ok(Self {
                        path,
                        artifacts: Vec::new(),
                    })
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => {
                    return Err(e).with_context(|| format!("cannot create {}", path.display()))
                }
            }
        }
        unreachable!()
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let p = self.path.join(name);
        write_atomic(&p, bytes).with_context(|| format!("cannot write {}", p.display()))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn finish(self, mut manifest: RunManifest) -> anyhow::Result<PathBuf> {
        manifest.artifacts = self.artifacts;
        manifest.finished_at = now();
        manifest
            .write(&self.path)
            .context("cannot write manifest")?;
        Ok(self.path)
    }
}

enum Task {
    Env(PathBuf),
    Problem(PathBuf),
}

/// What one synthesis run produced.
struct SynthResult {
    program: String,
    trace: SearchTrace,
    stats: Option<String>,
    config: serde_json::Value,
}

fn search_with(
    args: &SynthArgs,
    gateway: &dyn LanguageModel,
    evaluator: &mut dyn Evaluator,
) -> anyhow::Result<SynthResult> {
    let seed = args.common.seed;
    Ok(match args.method {
        crate::Method::GifMcts => {
            let mut cfg = SearchConfig {
                budget: args.budget,
                seed,
                ..SearchConfig::default()
            };
            for a in &args.ablation {
                a.apply(&mut cfg);
            }
            let out = run_search(&cfg, gateway, evaluator).map_err(|e| usage(e.0))?;
            SynthResult {
                stats: Some(out.stats().to_table()),
                config: serde_json::to_value(&cfg)?,
                program: out.program,
                trace: out.trace,
            }
        }
        crate::Method::WorldCoder => {
            let cfg = WorldCoderConfig {
                budget: args.budget,
                seed,
                ..WorldCoderConfig::default()
            };
            let out = worldcoder_search(&cfg, gateway, evaluator).map_err(|e| usage(e.0))?;
            SynthResult {
                stats: None,
                config: serde_json::to_value(&cfg)?,
                program: out.program,
                trace: out.trace,
            }
        }
        crate::Method::ZeroShot => {
            let out =
                zero_shot_pass_at_k(args.budget, gateway, evaluator).map_err(|e| usage(e.0))?;
            let best = out.attempts.iter().filter(|a| a.program.is_some()).fold(
                None::<&cwm_core::baselines::Attempt>,
                |best, a| match best {
                    Some(b) if b.value >= a.value => Some(b),
                    _ => Some(a),
                },
            );
            SynthResult {
                stats: None,
                config: serde_json::json!({ "k": args.budget }),
                program: best.and_then(|a| a.program.clone()).unwrap_or_default(),
                trace: out.trace,
            }
        }
    })
}

fn synthesize_one(args: &SynthArgs, task: &Task) -> anyhow::Result<(PathBuf, bool)> {
    let started = now();
    let clock = Instant::now();
    let executor = args
        .common
        .worker
        .build()
        .context("cannot start execution worker")?;
    let (mut evaluator, kind): (Box<dyn Evaluator>, Option<SpaceKind>) = match task {
        Task::Env(dir) => {
            require_dir(dir, "environment").map_err(usage)?;
            let t = ingest_environment(dir).map_err(usage)?;
            let kind = t.action_space.kind();
            (Box::new(BufferEvaluator::new(t, executor)), Some(kind))
        }
        Task::Problem(dir) => {
            require_dir(dir, "problem").map_err(usage)?;
            let p = ingest_io_problem(dir).map_err(usage)?;
            (Box::new(UnitTestEvaluator::new(p, executor)), None)
        }
    };
    let gateway = args.backend.build().map_err(usage)?;
    let backend_hash = args.backend.hash().map_err(usage)?;
    let task_id = evaluator.task_id().to_string();
    info!(
        "{} on {task_id}, budget {}",
        args.method.as_str(),
        args.budget
    );

    let result = search_with(args, gateway.as_ref(), evaluator.as_mut())?;
    let evaluation: Option<Evaluation> =
        (!result.program.is_empty()).then(|| evaluator.evaluate(&result.program));

    let mut run = RunDir::create(&args.common.out, args.method.as_str(), &task_id)?;
    run.write("program.txt", result.program.as_bytes())?;
    run.write("trace.json", (result.trace.to_json() + "\n").as_bytes())?;
    if let Some(stats) = &result.stats {
        run.write("stats.txt", stats.as_bytes())?;
    }
    if let Some(e) = &evaluation {
        run.write("eval.json", to_json(e).as_bytes())?;
    }
    let value = evaluation
        .as_ref()
        .filter(|e| !e.is_buggy())
        .map(|e| e.value);
    let summary = RunSummary {
        accuracy: value,
        llm_calls_used: Some(result.trace.llm_calls_used),
        wall_time: clock.elapsed().as_secs_f64(),
        action_kind: kind,
        solved: matches!(task, Task::Problem(_)).then(|| value == Some(1.0)),
        ..RunSummary::default()
    };
    let aborted = result.trace.aborted.clone();
    let manifest = RunManifest {
        command: "synthesize".into(),
        method: args.method.as_str().into(),
        task_id: task_id.clone(),
        budget: Some(args.budget),
        seed: args.common.seed,
        backend: Some(args.backend.label()),
        backend_hash: Some(backend_hash),
        config: serde_json::json!({
            "search": result.config,
            "ablation": args.ablation,
            "worker": args.common.worker.label(),
        }),
        started_at: started,
        finished_at: String::new(),
        artifacts: Vec::new(),
        summary,
    };
    let path = run.finish(manifest)?;
    match &aborted {
        Some(reason) => eprintln!("{task_id}: search aborted: {reason}"),
        None => println!(
            "{task_id}: {} value {} in {} calls -> {}",
            args.method.as_str(),
            value.map_or("-".into(), |v| format!("{v:.4}")),
            result.trace.llm_calls_used,
            path.display()
        ),
    }
    Ok((path, aborted.is_none()))
}

pub fn synthesize(args: &SynthArgs, problems_only: bool) -> anyhow::Result<ExitCode> {
    if problems_only && !args.env.is_empty() {
        return Err(usage("apps-eval takes --problem, not --env"));
    }
    let mut tasks: Vec<Task> = args.env.iter().cloned().map(Task::Env).collect();
    tasks.extend(args.problem.iter().cloned().map(Task::Problem));
    if tasks.is_empty() {
        return Err(usage("give at least one --env or --problem"));
    }
    if !args.ablation.is_empty() && args.method != crate::Method::GifMcts {
        return Err(usage("--ablation applies only to gif-mcts"));
    }
    if args.budget == 0 {
        return Err(usage("--budget must be positive"));
    }
    if args.workers == 0 {
        return Err(usage("--workers must be positive"));
    }
    if tasks.len() == 1 {
        let (_, ok) = synthesize_one(args, &tasks[0])?;
        return Ok(if ok {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        });
    }

    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<(usize, anyhow::Result<(PathBuf, bool)>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..args.workers.min(tasks.len()))
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                        if i >= tasks.len() {
                            break done;
                        }
                        done.push((i, synthesize_one(args, &tasks[i])));
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("task thread panicked"))
            .collect()
    });
    let mut worst = 0u8;
    for (_, r) in results {
        match r {
            Ok((_, true)) => {}
            Ok((_, false)) => worst = worst.max(1),
            Err(e) => {
                eprintln!("error: {e:#}");
                worst = worst.max(if e.downcast_ref::<UsageError>().is_some() {
                    2
                } else {
                    1
                });
            }
        }
    }
    Ok(ExitCode::from(worst))
}

/// Program text plus the method that produced it, if known.
fn load_program(source: &ProgramSource) -> anyhow::Result<(String, String)> {
    let (path, method) = match (&source.program, &source.run) {
        (Some(p), _) => (p.clone(), None),
        (None, Some(run)) => {
            let m = RunManifest::read(&run.join(MANIFEST_FILE)).map_err(usage)?;
            (run.join("program.txt"), Some(m.method))
        }
        (None, None) => return Err(usage("give --program or --run")),
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| usage(format!("cannot read program {}: {e}", path.display())))?;
    Ok((text, method.unwrap_or_else(|| "external".into())))
}

pub fn evaluate(args: &EvalArgs) -> anyhow::Result<ExitCode> {
    let started = now();
    let clock = Instant::now();
    require_dir(&args.env, "environment").map_err(usage)?;
    let task = ingest_environment(&args.env).map_err(usage)?;
    let (program, method) = load_program(&args.source)?;
    let kind = task.action_space.kind();
    let executor = args
        .common
        .worker
        .build()
        .context("cannot start execution worker")?;
    let mut evaluator = BufferEvaluator::new(task, executor);
    let evaluation = evaluator.evaluate(&program);
    let task_id = evaluator.task().name.clone();

    let mut run = RunDir::create(&args.common.out, &method, &task_id)?;
    run.write("program.txt", program.as_bytes())?;
    run.write("eval.json", to_json(&evaluation).as_bytes())?;
    let accuracy = evaluation.report.as_ref().map(|r| r.accuracy);
    let manifest = RunManifest {
        command: "evaluate".into(),
        method,
        task_id: task_id.clone(),
        budget: None,
        seed: args.common.seed,
        backend: None,
        backend_hash: None,
        config: serde_json::json!({ "worker": args.common.worker.label() }),
        started_at: started,
        finished_at: String::new(),
        artifacts: Vec::new(),
        summary: RunSummary {
            accuracy,
            wall_time: clock.elapsed().as_secs_f64(),
            action_kind: Some(kind),
            ..RunSummary::default()
        },
    };
    let path = run.finish(manifest)?;
    match (&evaluation.error, accuracy) {
        (Some(e), None) => println!("{task_id}: program failed: {e}"),
        _ => println!(
            "{task_id}: accuracy {} -> {}",
            accuracy.map_or("-".into(), |a| format!("{a:.4}")),
            path.display()
        ),
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct PlanSummary<'a> {
    normalized_return: f64,
    std_error: f64,
    unusable: bool,
    error: &'a Option<String>,
    cwm_returns: &'a [f64],
    oracle_returns: &'a [f64],
    random_returns: &'a [f64],
    planner: &'a Planner,
    options: &'a EpisodeOptions,
}

pub fn plan(args: &PlanArgs) -> anyhow::Result<ExitCode> {
    let started = now();
    let clock = Instant::now();
    require_dir(&args.env, "environment").map_err(usage)?;
    let task = ingest_environment(&args.env).map_err(usage)?;
    let env = fixture_env(&task.name).ok_or_else(|| {
        usage(format!(
            "no simulator available for environment '{}'",
            task.name
        ))
    })?;
    let (program, method) = load_program(&args.source)?;
    if args.episodes == 0 {
        return Err(usage("--episodes must be positive"));
    }
    let planner = Planner::for_space(&task.action_space);
    let opts = EpisodeOptions {
        episodes: args.episodes,
        max_steps: args.max_steps,
        seed: args.common.seed,
    };
    let executor = args
        .common
        .worker
        .build()
        .context("cannot start execution worker")?;
    let r = evaluate_cwm(&program, executor, env, &planner, &opts)
        .map_err(|e| anyhow::anyhow!("{e}"))?;

    let mut run = RunDir::create(&args.common.out, &method, &task.name)?;
    run.write("program.txt", program.as_bytes())?;
    let mut episodes = String::new();
    for e in &r.cwm_episodes {
        episodes.push_str(&serde_json::to_string(e)?);
        episodes.push('\n');
    }
    run.write("episodes.jsonl", episodes.as_bytes())?;
    let summary = PlanSummary {
        normalized_return: r.normalized_return,
        std_error: r.std_error,
        unusable: r.unusable,
        error: &r.error,
        cwm_returns: &r.cwm_returns,
        oracle_returns: &r.oracle_returns,
        random_returns: &r.random_returns,
        planner: &planner,
        options: &opts,
    };
    run.write("eval.json", to_json(&summary).as_bytes())?;
    let manifest = RunManifest {
        command: "plan".into(),
        method,
        task_id: task.name.clone(),
        budget: None,
        seed: args.common.seed,
        backend: None,
        backend_hash: None,
        config: serde_json::json!({
            "planner": planner,
            "episodes": opts,
            "worker": args.common.worker.label(),
        }),
        started_at: started,
        finished_at: String::new(),
        artifacts: Vec::new(),
        summary: RunSummary {
            normalized_return: Some(r.normalized_return),
            normalized_return_error: Some(r.std_error),
            wall_time: clock.elapsed().as_secs_f64(),
            action_kind: Some(task.action_space.kind()),
            ..RunSummary::default()
        },
    };
    let path = run.finish(manifest)?;
    if let Some(e) = &r.error {
        println!("{}: program unusable: {e}", task.name);
    }
    println!(
        "{}: normalized return {:.4} ± {:.4} over {} episodes -> {}",
        task.name,
        r.normalized_return,
        r.std_error,
        opts.episodes,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn report(args: &ReportArgs) -> anyhow::Result<ExitCode> {
    require_dir(&args.runs, "runs").map_err(usage)?;
    let paths = find_manifests(&args.runs)
        .with_context(|| format!("cannot scan {}", args.runs.display()))?;
    if paths.is_empty() {
        return Err(usage(format!("no manifests under {}", args.runs.display())));
    }
    let manifests = paths
        .into_iter()
        .map(|p| RunManifest::read(&p).map(|m| (p, m)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    let table = ResultsTable::from_manifests(&manifests);
    let out = args.out.clone().unwrap_or_else(|| args.runs.clone());
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let (json, csv, text) = (to_json(&table), table.to_csv(), table.to_text());
    write_atomic(&out.join("results.json"), json.as_bytes())?;
    write_atomic(&out.join("results.csv"), csv.as_bytes())?;
    write_atomic(&out.join("results.txt"), text.as_bytes())?;
    print!(
        "{}",
        match args.format {
            Format::Text => text,
            Format::Json => json,
            Format::Csv => csv,
        }
    );
    Ok(ExitCode::SUCCESS)
}
