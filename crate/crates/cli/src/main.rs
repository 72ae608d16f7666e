//! `reams`: run, resume, adjudicate and report on two-stage solving runs.

use std::io::{self, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use reams_core::dataset::Dataset;
use reams_core::grader::{adjudicate, AdjudicationError, Console};
use reams_core::modelclient::{Backend, BackendConfig, BackendKind};
use reams_core::pipeline::{resume_run, Engine, ExecutorSpec, GradingPolicy, RunConfig, RunState, RunStore, StoredRun};
use reams_core::report::{ReportDocument, ReportFormat};

#[derive(Parser)]
#[command(name = "reams", version, about = "Zero-shot program synthesis with reasoning-conditioned retries")]
struct Cli {
    /// Directory holding run stores.
    #[arg(long, global = true, default_value = "runs")]
    store: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a new run and drive it to completion.
    Run(RunArgs),
    /// Continue an interrupted or adjudicated run.
    Resume {
        run_id: String,
    },
    /// Review answers the grader could not decide.
    Adjudicate {
        run_id: String,
        /// Name recorded with each decision.
        #[arg(long)]
        operator: Option<String>,
        /// Read decisions from stdin even when it is not a terminal.
        #[arg(long)]
        from_stdin: bool,
    },
    /// Summarize a run as a table with exact binomial intervals.
    Report {
        run_id: String,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
        alpha: f64,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report on an unfinished run.
        #[arg(long)]
        partial: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Problems as JSONL or CSV.
    #[arg(long)]
    dataset: PathBuf,
    /// Code model backend: http:URL, replay:DIR or scripted:FILE.
    #[arg(long)]
    backend: BackendConfig,
    /// Reasoning model backend; defaults to --backend.
    #[arg(long)]
    reason_backend: Option<BackendConfig>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..=256))]
    workers: u64,
    #[arg(long, default_value_t = 1)]
    max_reasoning_rounds: u32,
    /// Score answers needing review as incorrect instead of holding them.
    #[arg(long)]
    strict: bool,
    /// Run id; generated from the clock when omitted.
    #[arg(long)]
    run_id: Option<String>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// `sandbox` or `stub:FILE`.
    #[arg(long, default_value = "sandbox")]
    executor: ExecutorSpec,
    /// Runner script for the sandbox; defaults to $REAMS_SHIM.
    #[arg(long)]
    shim: Option<PathBuf>,
    /// Interpreter for the runner; defaults to $REAMS_PYTHON or python3.
    #[arg(long)]
    python: Option<PathBuf>,
    /// Read-through response cache for http backends.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Seconds per program.
    #[arg(long, value_parser = parse_seconds)]
    time_limit: Option<Duration>,
    /// MiB per program.
    #[arg(long)]
    memory_limit: Option<u64>,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(a) if a > 0.0 && a < 1.0 => Ok(a),
        _ => Err(format!("alpha must lie in (0, 1), got {s}")),
    }
}

fn parse_seconds(s: &str) -> Result<Duration, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 => Duration::try_from_secs_f64(v).map_err(|e| e.to_string()),
        _ => Err(format!("expected a positive number of seconds, got {s}")),
    }
}

fn with_cache(mut backend: BackendConfig, cache_dir: &Option<PathBuf>) -> BackendConfig {
    if backend.kind == BackendKind::Http && cache_dir.is_some() {
        backend.cache_dir.clone_from(cache_dir);
    }
    backend
}

fn config_from(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(with_cache(args.backend.clone(), &args.cache_dir));
    if let Some(reason) = &args.reason_backend {
        cfg.reason_backend = with_cache(reason.clone(), &args.cache_dir);
    }
    cfg.seed = args.seed;
    cfg.workers = args.workers as usize;
    cfg.max_reasoning_rounds = args.max_reasoning_rounds;
    cfg.grading_policy = if args.strict { GradingPolicy::Strict } else { GradingPolicy::Review };
    cfg.prompts_dir.clone_from(&args.prompts);
    cfg.executor = match (&args.executor, &args.shim, &args.python) {
        (ExecutorSpec::Sandbox { .. }, shim, python) => ExecutorSpec::Sandbox { shim: shim.clone(), python: python.clone() },
        (stub, None, None) => stub.clone(),
        _ => bail!("--shim and --python only apply to the sandbox executor"),
    };
    if let Some(t) = args.time_limit {
        cfg.limits.time_limit = t;
    }
    if let Some(mib) = args.memory_limit {
        cfg.limits.memory_limit = mib.checked_mul(1024 * 1024).context("--memory-limit is too large")?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fresh_run_id(store: &RunStore) -> String {
    let stamp = format!("run-{}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"));
    let mut id = stamp.clone();
    let mut n = 1;
    while store.run_dir(&id).exists() {
        n += 1;
        id = format!("{stamp}-{n}");
    }
    id
}

/// Model clients, executor and prompts for one config.
struct Parts {
    code: Backend,
    reason: Backend,
    executor: Box<dyn reams_core::sandbox::Executor>,
    prompts: reams_core::promptkit::PromptSet,
}

impl Parts {
    fn build(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            code: Backend::from_config(&cfg.code_backend).context("code backend")?,
            reason: Backend::from_config(&cfg.reason_backend).context("reasoning backend")?,
            executor: cfg.executor.build().context("executor")?,
            prompts: cfg.prompt_set()?,
        })
    }

    fn engine<'a>(&'a self, dataset: &'a Dataset, config: &'a RunConfig) -> Engine<'a> {
        Engine {
            dataset,
            config,
            prompts: &self.prompts,
            code_model: &self.code,
            reason_model: &self.reason,
            executor: self.executor.as_ref(),
        }
    }
}

fn zero_shot_line(state: &RunState, ds: &Dataset) -> String {
    let solved = state.s_zero.values().filter(|&&s| s).count();
    let awaiting = state.progress(ds).awaiting_review;
    let mut line = format!("zero-shot: {solved}/{} solved", ds.len());
    if awaiting > 0 {
        line.push_str(&format!(", {awaiting} awaiting review"));
    }
    line
}

fn reasoning_line(state: &RunState, ds: &Dataset) -> String {
    if state.config.max_reasoning_rounds == 0 {
        return "reasoning: skipped (max reasoning rounds is 0)".into();
    }
    let solved = state.s_reason.values().filter(|&&s| s).count();
    let combined = state.outcomes(ds).iter().filter(|o| o.combined()).count();
    format!(
        "reasoning: {solved}/{} retried solved (up to {} round(s)); combined {combined}/{}",
        state.s_reason.len(),
        state.config.max_reasoning_rounds,
        ds.len()
    )
}

fn finish_note(state: &RunState, ds: &Dataset) {
    let progress = state.progress(ds);
    if progress.awaiting_review > 0 {
        println!(
            "{} answer(s) await review: `reams adjudicate {}` then `reams resume {}`",
            progress.awaiting_review, state.run_id, state.run_id
        );
    }
}

fn cmd_run(store: &RunStore, args: &RunArgs) -> Result<()> {
    let dataset = Dataset::load_auto(&args.dataset).with_context(|| format!("loading {}", args.dataset.display()))?;
    let cfg = config_from(args)?;
    let parts = Parts::build(&cfg)?;
    let run_id = match &args.run_id {
        Some(id) => id.clone(),
        None => fresh_run_id(store),
    };
    let handle = store.create(&run_id, &cfg, &dataset)?;
    println!("run {run_id}: {} problems -> {}", dataset.len(), handle.dir().display());

    let engine = parts.engine(&dataset, &cfg);
    let state = engine.run_zero_shot(RunState::empty(&run_id, cfg.clone()), &handle)?;
    println!("{}", zero_shot_line(&state, &dataset));
    let state = if cfg.max_reasoning_rounds == 0 { state } else { engine.run_reasoning_stage(state, &handle)? };
    println!("{}", reasoning_line(&state, &dataset));
    finish_note(&state, &dataset);
    Ok(())
}

fn cmd_resume(store: &RunStore, run_id: &str) -> Result<()> {
    let (stored, handle) = store.open(run_id)?;
    let parts = Parts::build(&stored.config)?;
    let engine = parts.engine(&stored.dataset, &stored.config);
    let before = RunState::from_stored(&stored).attempts.len();
    let state = resume_run(&engine, &stored, &handle)?;
    println!("run {run_id}: {} new attempt(s)", state.attempts.len() - before);
    println!("{}", zero_shot_line(&state, &stored.dataset));
    println!("{}", reasoning_line(&state, &stored.dataset));
    finish_note(&state, &stored.dataset);
    Ok(())
}

fn cmd_adjudicate(store: &RunStore, run_id: &str, operator: Option<String>, from_stdin: bool) -> Result<()> {
    let (stored, handle): (StoredRun, _) = store.open(run_id)?;
    let mut state = RunState::from_stored(&stored);
    let queue = state.review_queue(&stored.dataset);
    if queue.is_empty() {
        println!("run {run_id}: nothing to review");
        return Ok(());
    }
    let stdin = io::stdin();
    let interactive = from_stdin || stdin.is_terminal();
    let mut console = Console::new(stdin.lock(), io::stdout(), interactive);
    let verdicts = match adjudicate(&queue, &mut console) {
        Ok(v) => v,
        Err(e @ AdjudicationError::NonInteractive) => bail!("{e}"),
        Err(e) => return Err(e.into()),
    };
    let operator = operator.or_else(|| std::env::var("USER").ok()).unwrap_or_else(|| "operator".into());
    let written = state.record_adjudications(&handle, &queue, &verdicts, &operator)?;
    println!("\nrun {run_id}: recorded {written} of {} decision(s)", queue.len());
    if !state.progress(&stored.dataset).is_complete() {
        println!("`reams resume {run_id}` continues the reasoning stage");
    }
    Ok(())
}

fn cmd_report(
    store: &RunStore,
    run_id: &str,
    format: ReportFormat,
    alpha: f64,
    out: Option<&Path>,
    partial: bool,
) -> Result<()> {
    let stored = store.load(run_id)?;
    let state = RunState::from_stored(&stored);
    let doc = ReportDocument::build(&stored, &state, format, alpha, partial)?;
    let text = doc.render();
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let store = RunStore::new(&cli.store);
    let result = match &cli.command {
        Command::Run(args) => cmd_run(&store, args),
        Command::Resume { run_id } => cmd_resume(&store, run_id),
        Command::Adjudicate { run_id, operator, from_stdin } => {
            cmd_adjudicate(&store, run_id, operator.clone(), *from_stdin)
        }
        Command::Report { run_id, format, alpha, out, partial } => {
            cmd_report(&store, run_id, *format, *alpha, out.as_deref(), *partial)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
