//! Command-line runner: optimize a prompt, score a fixed prompt, project
//! reports from traces, and batch simulated runs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 backend failure,
//! 4 data error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use promptforge::dataset::{load_dataset, load_presplit, AutoSplit};
use promptforge::evaluator::score_set;
use promptforge::initializer::segment_sentences;
use promptforge::optimizer::run_optimization;
use promptforge::report::{report_from_trace, write_csv, write_jsonl};
use promptforge::sim::{make_bundle, SimBackend, SimTaskSpec};
use promptforge::trace::ConvergenceReason;
use promptforge::{
    ChatBackend, DatasetBundle, EngineError, OpenAiBackend, OptimizationResult, OptimizerConfig,
    PromptTemplates, RunTrace, ScriptedBackend, StructuredPrompt, TraceEvent,
};

#[derive(Parser)]
#[command(
    name = "promptforge",
    about = "Dual-phase prompt optimizer for black-box chat models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full dual-phase optimization and write run artifacts.
    Optimize(OptimizeArgs),
    /// Score a fixed prompt on a dataset (no optimization).
    Eval(EvalArgs),
    /// Project a run report out of a trace file.
    Report(ReportArgs),
    /// Batch seeded simulated runs and print aggregate statistics.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Openai,
    Scripted,
    Sim,
}

#[derive(Args)]
struct BackendArgs {
    /// Which chat backend to drive.
    #[arg(long, value_enum)]
    backend: BackendKind,
    /// JSONL response script (scripted backend).
    #[arg(long)]
    script: Option<PathBuf>,
    /// Simulated task spec, JSON (sim backend).
    #[arg(long)]
    sim_spec: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizerFlags {
    /// Failure-gate threshold.
    #[arg(long = "hf", default_value_t = 0.3)]
    h_f: f64,
    /// Validation-gate threshold.
    #[arg(long = "hv", default_value_t = 0.1)]
    h_v: f64,
    /// Reward mixing coefficient.
    #[arg(long, default_value_t = 0.4)]
    alpha: f64,
    /// Weight-update learning rate.
    #[arg(long, default_value_t = 0.055)]
    eta: f64,
    /// Accepted-step budget.
    #[arg(long, default_value_t = 4)]
    max_steps: u32,
    /// Gate failures before the run converges.
    #[arg(long, default_value_t = 5)]
    failure_limit: u32,
    /// Initial-prompt schema level (1-4).
    #[arg(long = "schema", default_value_t = 4)]
    schema_level: u8,
    /// Exemplars serialized into the meta-instruction.
    #[arg(long = "exemplars", default_value_t = 8)]
    exemplar_count: usize,
    /// Concurrent prediction calls during evaluation.
    #[arg(long = "concurrency", default_value_t = 4)]
    eval_concurrency: usize,
    /// Directory of meta-instruction template overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
}

impl OptimizerFlags {
    fn to_config(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            h_f: self.h_f,
            h_v: self.h_v,
            alpha: self.alpha,
            eta: self.eta,
            max_steps: self.max_steps,
            failure_limit: self.failure_limit,
            exemplar_count: self.exemplar_count,
            schema_level: self.schema_level,
            rng_seed: seed,
            eval_concurrency: self.eval_concurrency,
            ..Default::default()
        }
    }

    fn templates(&self) -> Result<PromptTemplates, CliError> {
        match &self.templates {
            Some(dir) => Ok(PromptTemplates::from_dir(dir).map_err(data_error)?),
            None => Ok(PromptTemplates::default()),
        }
    }
}

#[derive(Args)]
struct OptimizeArgs {
    /// Single JSONL task file, split automatically.
    #[arg(long)]
    task: Option<PathBuf>,
    /// Pre-split exemplar-pool file (with --val and --test).
    #[arg(long, requires = "val", requires = "test")]
    train: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Seed for every random choice of the run.
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    flags: OptimizerFlags,
    /// Output directory (trace.jsonl, report.csv, final_prompt.txt, config.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Plain-text prompt file.
    #[arg(long)]
    prompt: PathBuf,
    /// JSONL dataset; every record is scored.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// Concurrent prediction calls.
    #[arg(long = "concurrency", default_value_t = 4)]
    eval_concurrency: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Csv,
    Jsonl,
}

#[derive(Args)]
struct ReportArgs {
    /// Trace file produced by `optimize`.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_enum)]
    format: ReportFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulated task spec, JSON.
    #[arg(long)]
    sim_spec: PathBuf,
    /// Number of seeded runs.
    #[arg(long)]
    runs: u64,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    flags: OptimizerFlags,
}

/// An error carrying its process exit code.
struct CliError {
    code: u8,
    message: String,
}

fn config_error(message: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        message: message.into(),
    }
}

fn data_error(e: impl std::fmt::Display) -> CliError {
    CliError {
        code: 4,
        message: e.to_string(),
    }
}

fn engine_error(e: EngineError) -> CliError {
    let code = match &e {
        EngineError::Gateway(promptforge::GatewayError::Config(_)) => 2,
        EngineError::Gateway(_) => 3,
        _ => 4,
    };
    CliError {
        code,
        message: e.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Optimize(args) => optimize(args),
        Command::Eval(args) => eval(args),
        Command::Report(args) => report(args),
        Command::Simulate(args) => simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn build_backend(
    args: &BackendArgs,
    seed: u64,
) -> Result<(Box<dyn ChatBackend>, Option<SimTaskSpec>), CliError> {
    match args.backend {
        BackendKind::Openai => {
            if args.script.is_some() || args.sim_spec.is_some() {
                return Err(config_error(
                    "--script/--sim-spec only apply to their own backends",
                ));
            }
            let backend = OpenAiBackend::from_env()
                .map_err(|e| config_error(format!("openai backend: {e}")))?;
            Ok((Box::new(backend), None))
        }
        BackendKind::Scripted => {
            let path = args
                .script
                .as_ref()
                .ok_or_else(|| config_error("--backend scripted requires --script"))?;
            let file = std::fs::File::open(path)
                .map_err(|e| data_error(format!("cannot open {}: {e}", path.display())))?;
            let backend =
                ScriptedBackend::from_jsonl(std::io::BufReader::new(file)).map_err(data_error)?;
            Ok((Box::new(backend), None))
        }
        BackendKind::Sim => {
            let path = args
                .sim_spec
                .as_ref()
                .ok_or_else(|| config_error("--backend sim requires --sim-spec"))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| data_error(format!("cannot open {}: {e}", path.display())))?;
            let mut spec: SimTaskSpec = serde_json::from_str(&text)
                .map_err(|e| data_error(format!("{}: {e}", path.display())))?;
            spec.seed = seed;
            let backend = SimBackend::new(spec.clone()).map_err(engine_error)?;
            Ok((Box::new(backend), Some(spec)))
        }
    }
}

fn load_bundle(args: &OptimizeArgs, sim: Option<&SimTaskSpec>) -> Result<DatasetBundle, CliError> {
    match (sim, &args.task, &args.train) {
        (Some(spec), None, None) => make_bundle(spec).map_err(engine_error),
        (Some(_), _, _) => Err(config_error(
            "the sim backend generates its own dataset; drop --task/--train",
        )),
        (None, Some(task), None) => load_dataset(
            task,
            &AutoSplit {
                seed: args.seed,
                ..Default::default()
            },
        )
        .map_err(engine_error),
        (None, None, Some(train)) => {
            let (val, test) = (
                args.val.as_ref().expect("clap enforces --val"),
                args.test.as_ref().expect("clap enforces --test"),
            );
            load_presplit(train, val, test).map_err(engine_error)
        }
        (None, Some(_), Some(_)) => Err(config_error("use either --task or --train/--val/--test")),
        (None, None, None) => Err(config_error(
            "a dataset is required: --task, or --train/--val/--test",
        )),
    }
}

#[derive(Serialize)]
struct RunSummary {
    accepted_steps: u32,
    initial_accuracy: f64,
    final_accuracy: f64,
    convergence: String,
    total_calls: u64,
}

fn summarize(result: &OptimizationResult) -> RunSummary {
    let reason = result
        .trace
        .records
        .iter()
        .rev()
        .find_map(|r| match &r.event {
            TraceEvent::Converged { reason } => Some(*reason),
            _ => None,
        });
    RunSummary {
        accepted_steps: result.accepted_steps,
        initial_accuracy: result.validation_history.first().map(|(_, a)| *a).unwrap_or(0.0),
        final_accuracy: result.validation_history.last().map(|(_, a)| *a).unwrap_or(0.0),
        convergence: match reason {
            Some(ConvergenceReason::StepBudget) => "step-budget".into(),
            Some(ConvergenceReason::FailureLimit) => "failure-limit".into(),
            Some(ConvergenceReason::PerfectValidation) => "perfect-validation".into(),
            None => "aborted".into(),
        },
        total_calls: result.meter.total_calls,
    }
}

fn optimize(args: OptimizeArgs) -> Result<(), CliError> {
    let config = args.flags.to_config(args.seed);
    config.validate().map_err(|e| config_error(e.to_string()))?;
    let templates = args.flags.templates()?;
    let (backend, sim_spec) = build_backend(&args.backend, args.seed)?;
    let bundle = load_bundle(&args, sim_spec.as_ref())?;

    std::fs::create_dir_all(&args.out).map_err(data_error)?;
    let mut trace_file =
        std::fs::File::create(args.out.join("trace.jsonl")).map_err(data_error)?;

    let result = run_optimization(
        backend.as_ref(),
        &bundle,
        &config,
        &templates,
        Some(&mut trace_file),
    )
    .map_err(engine_error)?;

    write_artifacts(&args.out, &config, &result)?;
    let summary = summarize(&result);
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn write_artifacts(
    out: &Path,
    config: &OptimizerConfig,
    result: &OptimizationResult,
) -> Result<(), CliError> {
    let mut csv = std::fs::File::create(out.join("report.csv")).map_err(data_error)?;
    write_csv(&report_from_trace(&result.trace), &mut csv).map_err(engine_error)?;

    std::fs::write(
        out.join("final_prompt.txt"),
        promptforge::render(&result.final_prompt),
    )
    .map_err(data_error)?;

    let config_json =
        serde_json::to_string_pretty(config).expect("config serializes");
    std::fs::write(out.join("config.json"), config_json).map_err(data_error)?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let (backend, _) = build_backend(&args.backend, 0)?;
    let prompt_text = std::fs::read_to_string(&args.prompt)
        .map_err(|e| data_error(format!("cannot open {}: {e}", args.prompt.display())))?;
    let sentences = segment_sentences(&prompt_text);
    let prompt = StructuredPrompt::with_unit_weights(sentences)
        .map_err(|e| data_error(format!("prompt file: {e}")))?;
    let examples = promptforge::dataset::load_examples(&args.data).map_err(engine_error)?;
    if examples.is_empty() {
        return Err(data_error("dataset is empty"));
    }
    let config = OptimizerConfig {
        eval_concurrency: args.eval_concurrency,
        ..Default::default()
    };
    let report = score_set(backend.as_ref(), &prompt, &examples, &config).map_err(engine_error)?;
    let failures = report.outcomes.iter().filter(|o| !o.correct).count();
    println!(
        "{}",
        serde_json::json!({
            "examples": report.outcomes.len(),
            "accuracy": report.accuracy,
            "failures": failures,
            "calls_used": report.calls_used,
        })
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.trace)
        .map_err(|e| data_error(format!("cannot open {}: {e}", args.trace.display())))?;
    let trace = RunTrace::from_jsonl(&text).map_err(engine_error)?;
    let mut out = std::fs::File::create(&args.out).map_err(data_error)?;
    match args.format {
        ReportFormat::Csv => write_csv(&report_from_trace(&trace), &mut out).map_err(engine_error)?,
        ReportFormat::Jsonl => write_jsonl(&trace, &mut out).map_err(engine_error)?,
    }
    out.flush().map_err(data_error)?;
    Ok(())
}

#[derive(Serialize, Default)]
struct SimAggregate {
    runs: u64,
    mean_initial_accuracy: f64,
    mean_final_accuracy: f64,
    mean_improvement: f64,
    mean_accepted_steps: f64,
    mean_total_calls: f64,
    converged_step_budget: u64,
    converged_failure_limit: u64,
    converged_perfect_validation: u64,
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    if args.runs == 0 {
        return Err(config_error("--runs must be at least 1"));
    }
    let text = std::fs::read_to_string(&args.sim_spec)
        .map_err(|e| data_error(format!("cannot open {}: {e}", args.sim_spec.display())))?;
    let base_spec: SimTaskSpec =
        serde_json::from_str(&text).map_err(|e| data_error(format!("sim spec: {e}")))?;
    let templates = args.flags.templates()?;

    let mut agg = SimAggregate {
        runs: args.runs,
        ..Default::default()
    };
    let n = args.runs as f64;
    for i in 0..args.runs {
        let seed = args.seed.wrapping_add(i);
        let spec = SimTaskSpec {
            seed,
            ..base_spec.clone()
        };
        let config = args.flags.to_config(seed);
        config.validate().map_err(|e| config_error(e.to_string()))?;
        let backend = SimBackend::new(spec.clone()).map_err(engine_error)?;
        let bundle = make_bundle(&spec).map_err(engine_error)?;
        let result = run_optimization(&backend, &bundle, &config, &templates, None)
            .map_err(engine_error)?;
        let summary = summarize(&result);
        agg.mean_initial_accuracy += summary.initial_accuracy / n;
        agg.mean_final_accuracy += summary.final_accuracy / n;
        agg.mean_improvement += (summary.final_accuracy - summary.initial_accuracy) / n;
        agg.mean_accepted_steps += summary.accepted_steps as f64 / n;
        agg.mean_total_calls += summary.total_calls as f64 / n;
        match summary.convergence.as_str() {
            "step-budget" => agg.converged_step_budget += 1,
            "failure-limit" => agg.converged_failure_limit += 1,
            "perfect-validation" => agg.converged_perfect_validation += 1,
            _ => {}
        }
    }
    println!("{}", serde_json::to_string_pretty(&agg).expect("aggregate serializes"));
    Ok(())
}
