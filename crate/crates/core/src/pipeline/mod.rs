//! The two-stage solve loop: a zero-shot pass over every problem, then
//! reasoning-conditioned retries for the ones that failed. All state is a
//! fold over the run journal, so an interrupted run picks up where it
//! stopped.

mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use log::{info, warn};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use store::{
    file_sha256, parse_journal, AdjudicationEvent, CorruptRecord, JournalContents, JournalEntry, RunHandle, RunStore,
    StoredRun, CONFIG_FILE, DATASET_FILE, JOURNAL_FILE, WORK_DIR,
};

use crate::dataset::{AnswerSpec, Dataset, DatasetError, Problem};
use crate::grader::{self, Method, TolerancePolicy, Verdict, VerdictValue};
use crate::modelclient::{request_digest, BackendConfig, ChatModel, ModelError, ModelSettings};
use crate::promptkit::{extract_program, CandidateProgram, PromptError, PromptSet};
use crate::sandbox::{
    ExecutionRequest, ExecutionResult, ExecutionStatus, Executor, Limits, Sandbox, SandboxError, ShimCommand,
    StubExecutor,
};
use crate::stats::ProblemOutcome;

pub const PROOF_SKIP_DETAIL: &str = "skipped: proof";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("invalid run id {0:?}")]
    InvalidRunId(String),
    #[error("run {0:?} already exists")]
    RunExists(String),
    #[error("unknown run {0:?}")]
    UnknownRun(String),
    #[error("corrupt run config: {0}")]
    CorruptConfig(String),
    #[error("run store {path}: {source}")]
    Store {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl PipelineError {
    pub(crate) fn store(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Store { path: path.to_path_buf(), source }
    }
}

/// `zero_shot` or `reasoning_<k>` with `k >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    ZeroShot,
    Reasoning(u32),
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::ZeroShot => f.write_str("zero_shot"),
            Stage::Reasoning(k) => write!(f, "reasoning_{k}"),
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "zero_shot" {
            return Ok(Stage::ZeroShot);
        }
        match s.strip_prefix("reasoning_").map(str::parse::<u32>) {
            Some(Ok(k)) if k >= 1 => Ok(Stage::Reasoning(k)),
            _ => Err(format!("unknown stage {s:?}")),
        }
    }
}

impl Serialize for Stage {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Stage {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// What happens to `needs_review` verdicts. `strict` scores them as
/// failures for good; `review` holds them for an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradingPolicy {
    #[default]
    Strict,
    Review,
}

/// Which executor runs candidate programs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecutorSpec {
    /// The subprocess shim; unset fields fall back to `REAMS_SHIM` and
    /// `REAMS_PYTHON`.
    Sandbox {
        #[serde(default)]
        shim: Option<PathBuf>,
        #[serde(default)]
        python: Option<PathBuf>,
    },
    /// Canned results keyed by program source.
    Stub { path: PathBuf },
}

impl Default for ExecutorSpec {
    fn default() -> Self {
        ExecutorSpec::Sandbox { shim: None, python: None }
    }
}

impl FromStr for ExecutorSpec {
    type Err = String;

    /// `sandbox` or `stub:<file>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "sandbox" => Ok(ExecutorSpec::default()),
            Some(("stub", path)) if !path.is_empty() => Ok(ExecutorSpec::Stub { path: path.into() }),
            _ => Err(format!("executor {s:?} is not `sandbox` or `stub:<file>`")),
        }
    }
}

impl ExecutorSpec {
    pub fn build(&self) -> Result<Box<dyn Executor>, SandboxError> {
        match self {
            ExecutorSpec::Stub { path } => Ok(Box::new(StubExecutor::from_file(path)?)),
            ExecutorSpec::Sandbox { shim: None, python: None } => Ok(Box::new(Sandbox::new(ShimCommand::from_env()?))),
            ExecutorSpec::Sandbox { shim, python } => {
                let script = match shim {
                    Some(s) => s.clone(),
                    None => ShimCommand::from_env()?.args.last().map(PathBuf::from).unwrap_or_default(),
                };
                if !script.is_file() {
                    return Err(SandboxError::ShimNotFound(script.display().to_string()));
                }
                let python = python
                    .clone()
                    .or_else(|| std::env::var_os("REAMS_PYTHON").map(PathBuf::from))
                    .unwrap_or_else(|| PathBuf::from("python3"));
                Ok(Box::new(Sandbox::new(ShimCommand::python(python, script))))
            }
        }
    }
}

/// Frozen settings of one run, written to `config.json` when it starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub code_backend: BackendConfig,
    pub reason_backend: BackendConfig,
    pub code_model: ModelSettings,
    pub reason_model: ModelSettings,
    pub max_reasoning_rounds: u32,
    pub workers: usize,
    pub grading_policy: GradingPolicy,
    pub seed: u64,
    pub limits: Limits,
    pub tolerance: TolerancePolicy,
    #[serde(default)]
    pub executor: ExecutorSpec,
    /// Template overrides; `None` uses the shipped prompts.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
}

impl RunConfig {
    /// One backend for both roles, default models and limits.
    pub fn new(backend: BackendConfig) -> Self {
        Self {
            reason_backend: backend.clone(),
            code_backend: backend,
            code_model: ModelSettings::code_default(),
            reason_model: ModelSettings::reasoning_default(),
            max_reasoning_rounds: 1,
            workers: 1,
            grading_policy: GradingPolicy::Strict,
            seed: 0,
            limits: Limits::default(),
            tolerance: TolerancePolicy::default(),
            executor: ExecutorSpec::default(),
            prompts_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.workers == 0 {
            return Err(PipelineError::InvalidConfig("workers must be at least 1".into()));
        }
        if self.limits.time_limit.is_zero() || self.limits.memory_limit == 0 {
            return Err(PipelineError::InvalidConfig("sandbox limits must be positive".into()));
        }
        TolerancePolicy::new(self.tolerance.relative, self.tolerance.absolute).map_err(PipelineError::InvalidConfig)?;
        self.code_backend.validate()?;
        self.reason_backend.validate()?;
        Ok(())
    }

    pub fn prompt_set(&self) -> Result<PromptSet, PipelineError> {
        Ok(match &self.prompts_dir {
            Some(dir) => PromptSet::load_dir(dir)?,
            None => PromptSet::default(),
        })
    }
}

/// One attempt at one problem in one stage. Written once, never changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub problem_id: String,
    pub stage: Stage,
    /// Digest of the code-generation request; absent when no call was made.
    pub request_digest: Option<String>,
    /// Digest of the reasoning request (reasoning stages only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_request_digest: Option<String>,
    pub program: Option<CandidateProgram>,
    pub execution: Option<ExecutionResult>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_text: Option<String>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

/// A `needs_review` attempt with what the operator needs to judge it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewItem {
    pub record: AttemptRecord,
    pub question: String,
    pub expected: AnswerSpec,
}

/// Remaining work in a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Progress {
    pub zero_shot_pending: usize,
    pub reasoning_pending: usize,
    pub awaiting_review: usize,
}

impl Progress {
    /// Nothing left that the pipeline could run on its own.
    pub fn is_complete(&self) -> bool {
        self.zero_shot_pending == 0 && self.reasoning_pending == 0
    }
}

/// Folded view of a run journal.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub run_id: String,
    pub config: RunConfig,
    pub s_zero: BTreeMap<String, bool>,
    /// Only for problems with `s_zero = 0` that entered the reasoning stage.
    pub s_reason: BTreeMap<String, bool>,
    pub attempts: Vec<AttemptRecord>,
    /// Latest operator verdict per attempt.
    pub adjudications: BTreeMap<(String, Stage), AdjudicationEvent>,
}

enum Standing {
    Solved,
    Failed,
    Pending,
}

impl RunState {
    pub fn empty(run_id: impl Into<String>, config: RunConfig) -> Self {
        Self {
            run_id: run_id.into(),
            config,
            s_zero: BTreeMap::new(),
            s_reason: BTreeMap::new(),
            attempts: Vec::new(),
            adjudications: BTreeMap::new(),
        }
    }

    /// Pure fold over journal entries. A repeated `(problem, stage)` attempt
    /// keeps the first record.
    pub fn fold(run_id: impl Into<String>, config: RunConfig, entries: &[JournalEntry]) -> Self {
        let mut state = Self::empty(run_id, config);
        let mut seen = BTreeSet::new();
        for entry in entries {
            match entry {
                JournalEntry::Attempt(rec) => {
                    if seen.insert((rec.problem_id.clone(), rec.stage)) {
                        state.attempts.push(rec.clone());
                    } else {
                        warn!("ignoring duplicate {} record for problem {}", rec.stage, rec.problem_id);
                    }
                }
                JournalEntry::Adjudication(ev) => {
                    state.adjudications.insert((ev.problem_id.clone(), ev.stage), ev.clone());
                }
            }
        }
        state.recompute();
        state
    }

    pub fn from_stored(stored: &StoredRun) -> Self {
        Self::fold(stored.run_id.clone(), stored.config.clone(), &stored.journal.entries)
    }

    fn push(&mut self, rec: AttemptRecord) {
        self.attempts.push(rec);
        self.recompute();
    }

    /// The verdict that counts: the operator's when there is one.
    pub fn effective_verdict<'a>(&'a self, rec: &'a AttemptRecord) -> &'a Verdict {
        self.adjudications.get(&(rec.problem_id.clone(), rec.stage)).map(|e| &e.verdict).unwrap_or(&rec.verdict)
    }

    fn standing(&self, rec: &AttemptRecord) -> Standing {
        match self.effective_verdict(rec).value {
            VerdictValue::Correct => Standing::Solved,
            VerdictValue::Incorrect => Standing::Failed,
            VerdictValue::NeedsReview => match self.config.grading_policy {
                GradingPolicy::Strict => Standing::Failed,
                GradingPolicy::Review => Standing::Pending,
            },
        }
    }

    fn recompute(&mut self) {
        let mut s_zero = BTreeMap::new();
        let mut rounds: BTreeMap<&str, Vec<&AttemptRecord>> = BTreeMap::new();
        for rec in &self.attempts {
            match rec.stage {
                Stage::ZeroShot => {
                    s_zero.insert(rec.problem_id.clone(), matches!(self.standing(rec), Standing::Solved));
                }
                Stage::Reasoning(_) => rounds.entry(rec.problem_id.as_str()).or_default().push(rec),
            }
        }
        let mut s_reason = BTreeMap::new();
        for (id, recs) in rounds {
            if s_zero.get(id) == Some(&false) {
                s_reason.insert(id.to_string(), recs.iter().any(|r| matches!(self.standing(r), Standing::Solved)));
            }
        }
        self.s_zero = s_zero;
        self.s_reason = s_reason;
    }

    fn attempt(&self, problem_id: &str, stage: Stage) -> Option<&AttemptRecord> {
        self.attempts.iter().find(|r| r.problem_id == problem_id && r.stage == stage)
    }

    /// Reasoning rounds recorded for a problem, in round order.
    pub fn rounds(&self, problem_id: &str) -> Vec<&AttemptRecord> {
        let mut v: Vec<_> =
            self.attempts.iter().filter(|r| r.problem_id == problem_id && r.stage != Stage::ZeroShot).collect();
        v.sort_by_key(|r| r.stage);
        v
    }

    /// The next reasoning round to run for `p`, if any.
    fn next_round(&self, p: &Problem) -> Option<u32> {
        if p.proof_based {
            return None;
        }
        let zero = self.attempt(&p.id, Stage::ZeroShot)?;
        if !matches!(self.standing(zero), Standing::Failed) {
            return None;
        }
        let rounds = self.rounds(&p.id);
        for r in &rounds {
            if !matches!(self.standing(r), Standing::Failed) {
                return None;
            }
        }
        let done = rounds.len() as u32;
        (done < self.config.max_reasoning_rounds).then_some(done + 1)
    }

    pub fn progress(&self, ds: &Dataset) -> Progress {
        let mut p = Progress::default();
        for problem in ds.problems() {
            if self.attempt(&problem.id, Stage::ZeroShot).is_none() {
                p.zero_shot_pending += 1;
            } else if self.next_round(problem).is_some() {
                p.reasoning_pending += 1;
            }
        }
        p.awaiting_review = self.review_queue(ds).len();
        p
    }

    /// Per-problem indicators for every problem with a zero-shot record.
    pub fn outcomes(&self, ds: &Dataset) -> Vec<ProblemOutcome> {
        ds.problems()
            .iter()
            .filter_map(|p| {
                Some(ProblemOutcome {
                    problem_id: p.id.clone(),
                    source: p.source,
                    s_zero: *self.s_zero.get(&p.id)?,
                    s_reason: self.s_reason.get(&p.id).copied(),
                })
            })
            .collect()
    }

    /// Attempts still waiting on an operator. Always empty under `strict`.
    pub fn review_queue(&self, ds: &Dataset) -> Vec<ReviewItem> {
        if self.config.grading_policy == GradingPolicy::Strict {
            return Vec::new();
        }
        let mut items: Vec<ReviewItem> = self
            .attempts
            .iter()
            .filter(|r| matches!(self.standing(r), Standing::Pending))
            .filter_map(|r| {
                let p = ds.get(&r.problem_id)?;
                Some(ReviewItem { record: r.clone(), question: p.question_text.clone(), expected: p.answer.clone() })
            })
            .collect();
        let order: BTreeMap<&str, usize> = ds.problems().iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
        items.sort_by_key(|it| (order.get(it.record.problem_id.as_str()).copied(), it.record.stage));
        items
    }

    /// Persists operator decisions for `items`; undecided ones are skipped.
    pub fn record_adjudications(
        &mut self,
        store: &RunHandle,
        items: &[ReviewItem],
        verdicts: &[Verdict],
        operator: &str,
    ) -> Result<usize, PipelineError> {
        let mut written = 0;
        for (item, verdict) in items.iter().zip(verdicts) {
            if verdict.method != Method::Human {
                continue;
            }
            let ev = AdjudicationEvent {
                problem_id: item.record.problem_id.clone(),
                stage: item.record.stage,
                verdict: verdict.clone(),
                operator: operator.to_string(),
                decided_at: Utc::now(),
            };
            store.append(&JournalEntry::Adjudication(ev.clone()))?;
            self.adjudications.insert((ev.problem_id.clone(), ev.stage), ev);
            written += 1;
        }
        self.recompute();
        Ok(written)
    }
}

/// Seed handed to the sandbox for one attempt.
pub fn attempt_seed(run_seed: u64, problem_id: &str, stage: Stage) -> u64 {
    let digest = Sha256::digest(format!("{run_seed}\u{0}{problem_id}\u{0}{stage}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Everything needed to make attempts.
pub struct Engine<'a> {
    pub dataset: &'a Dataset,
    pub config: &'a RunConfig,
    pub prompts: &'a PromptSet,
    pub code_model: &'a dyn ChatModel,
    pub reason_model: &'a dyn ChatModel,
    pub executor: &'a dyn Executor,
}

fn failed_execution(what: &str, err: &dyn fmt::Display) -> ExecutionResult {
    ExecutionResult::failed(ExecutionStatus::ProtocolError, format!("{what}: {err}"))
}

impl<'a> Engine<'a> {
    fn execute_and_grade(
        &self,
        store: &RunHandle,
        problem: &Problem,
        program: CandidateProgram,
        stage: Stage,
    ) -> Result<(CandidateProgram, ExecutionResult, Verdict), PipelineError> {
        let workdir = store.workdir(&problem.id, stage)?;
        let req = ExecutionRequest::new(program, &self.config.limits, workdir, attempt_seed(self.config.seed, &problem.id, stage));
        let execution = match self.executor.execute(&req) {
            Ok(r) => r,
            Err(e) => {
                warn!("problem {} {stage}: executor failed: {e}", problem.id);
                failed_execution("executor", &e)
            }
        };
        let verdict =
            grader::grade(execution.answer_text.as_deref().unwrap_or(""), &execution, &problem.answer, self.config.tolerance);
        Ok((req.program, execution, verdict))
    }

    fn zero_shot_attempt(&self, store: &RunHandle, problem: &Problem) -> Result<AttemptRecord, PipelineError> {
        let started_at = Utc::now();
        let mut rec = AttemptRecord {
            problem_id: problem.id.clone(),
            stage: Stage::ZeroShot,
            request_digest: None,
            reasoning_request_digest: None,
            program: None,
            execution: None,
            verdict: Verdict::incorrect(Method::Exact, PROOF_SKIP_DETAIL),
            reasoning_text: None,
            started_at,
            finished_at: started_at,
        };
        if problem.proof_based {
            return Ok(rec);
        }

        let req = self.prompts.build_zero_shot_prompt(problem, &self.config.code_model);
        rec.request_digest = Some(request_digest(&req));
        match self.code_model.complete(&req) {
            Err(e) => {
                warn!("problem {} zero_shot: model failed: {e}", problem.id);
                rec.execution = Some(failed_execution("model", &e));
                rec.verdict = Verdict::incorrect(Method::Exact, "no program: model call failed");
            }
            Ok(resp) => match extract_program(&resp.text, Stage::ZeroShot) {
                Err(e) => {
                    rec.execution = Some(failed_execution("extraction", &e));
                    rec.verdict = Verdict::incorrect(Method::Exact, "no program in model reply");
                }
                Ok(program) => {
                    let (program, execution, verdict) = self.execute_and_grade(store, problem, program, Stage::ZeroShot)?;
                    rec.program = Some(program);
                    rec.execution = Some(execution);
                    rec.verdict = verdict;
                }
            },
        }
        rec.finished_at = Utc::now();
        Ok(rec)
    }

    fn reasoning_attempt(&self, store: &RunHandle, problem: &Problem, round: u32) -> Result<AttemptRecord, PipelineError> {
        let stage = Stage::Reasoning(round);
        let started_at = Utc::now();
        let mut rec = AttemptRecord {
            problem_id: problem.id.clone(),
            stage,
            request_digest: None,
            reasoning_request_digest: None,
            program: None,
            execution: None,
            verdict: Verdict::incorrect(Method::Exact, "no program: reasoning call failed"),
            reasoning_text: Some(String::new()),
            started_at,
            finished_at: started_at,
        };

        let reason_req = self.prompts.build_reasoning_prompt(problem, &self.config.reason_model);
        rec.reasoning_request_digest = Some(request_digest(&reason_req));
        let reasoning = match self.reason_model.complete(&reason_req) {
            Ok(resp) => resp.text,
            Err(e) => {
                warn!("problem {} {stage}: reasoning model failed: {e}", problem.id);
                rec.execution = Some(failed_execution("model", &e));
                rec.finished_at = Utc::now();
                return Ok(rec);
            }
        };
        rec.reasoning_text = Some(reasoning.clone());

        let code_req = match self.prompts.build_code_with_reasoning_prompt(problem, &reasoning, &self.config.code_model) {
            Ok(r) => r,
            Err(e) => {
                rec.execution = Some(failed_execution("prompt", &e));
                rec.verdict = Verdict::incorrect(Method::Exact, "no program: empty reasoning");
                rec.finished_at = Utc::now();
                return Ok(rec);
            }
        };
        rec.request_digest = Some(request_digest(&code_req));
        match self.code_model.complete(&code_req) {
            Err(e) => {
                warn!("problem {} {stage}: model failed: {e}", problem.id);
                rec.execution = Some(failed_execution("model", &e));
                rec.verdict = Verdict::incorrect(Method::Exact, "no program: model call failed");
            }
            Ok(resp) => match extract_program(&resp.text, stage) {
                Err(e) => {
                    rec.execution = Some(failed_execution("extraction", &e));
                    rec.verdict = Verdict::incorrect(Method::Exact, "no program in model reply");
                }
                Ok(program) => {
                    let (program, execution, verdict) = self.execute_and_grade(store, problem, program, stage)?;
                    rec.program = Some(program);
                    rec.execution = Some(execution);
                    rec.verdict = verdict;
                }
            },
        }
        rec.finished_at = Utc::now();
        Ok(rec)
    }

    /// Runs `job` over `items` on `cfg.workers` threads. Records go through
    /// `state` and the journal under one lock; the first store error stops
    /// all workers.
    fn run_pool<T: Sync>(
        &self,
        state: RunState,
        items: &[T],
        job: impl Fn(&T, &Mutex<RunState>) -> Result<(), PipelineError> + Sync,
    ) -> Result<RunState, PipelineError> {
        let state = Mutex::new(state);
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let first_err: Mutex<Option<PipelineError>> = Mutex::new(None);
        let workers = self.config.workers.max(1).min(items.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(item) = items.get(i) else { break };
                    if let Err(e) = job(item, &state) {
                        abort.store(true, Ordering::SeqCst);
                        first_err.lock().unwrap_or_else(|p| p.into_inner()).get_or_insert(e);
                        break;
                    }
                });
            }
        });
        if let Some(e) = first_err.into_inner().unwrap_or_else(|p| p.into_inner()) {
            return Err(e);
        }
        Ok(state.into_inner().unwrap_or_else(|p| p.into_inner()))
    }

    fn commit(store: &RunHandle, state: &Mutex<RunState>, rec: AttemptRecord) -> Result<(), PipelineError> {
        let mut guard = state.lock().unwrap_or_else(|p| p.into_inner());
        store.append(&JournalEntry::Attempt(rec.clone()))?;
        guard.push(rec);
        Ok(())
    }

    /// Step 1: one zero-shot attempt for every problem that has none yet.
    pub fn run_zero_shot(&self, state: RunState, store: &RunHandle) -> Result<RunState, PipelineError> {
        let todo: Vec<&Problem> =
            self.dataset.problems().iter().filter(|p| state.attempt(&p.id, Stage::ZeroShot).is_none()).collect();
        info!("zero-shot: {} of {} problems to attempt", todo.len(), self.dataset.len());
        self.run_pool(state, &todo, |p, state| {
            let rec = self.zero_shot_attempt(store, p)?;
            Self::commit(store, state, rec)
        })
    }

    /// Step 2: reasoning rounds for zero-shot failures, stopping at the
    /// first correct round or after `max_reasoning_rounds`.
    pub fn run_reasoning_stage(&self, state: RunState, store: &RunHandle) -> Result<RunState, PipelineError> {
        let todo: Vec<&Problem> = self.dataset.problems().iter().filter(|p| state.next_round(p).is_some()).collect();
        info!("reasoning: {} problems to attempt", todo.len());
        self.run_pool(state, &todo, |p, state| loop {
            let round = {
                let guard = state.lock().unwrap_or_else(|e| e.into_inner());
                guard.next_round(p)
            };
            let Some(round) = round else { return Ok(()) };
            let rec = self.reasoning_attempt(store, p, round)?;
            Self::commit(store, state, rec)?;
        })
    }

    /// Both stages; the first finishes completely before the second starts.
    pub fn run(&self, state: RunState, store: &RunHandle) -> Result<RunState, PipelineError> {
        let state = self.run_zero_shot(state, store)?;
        self.run_reasoning_stage(state, store)
    }
}

/// Reopens a run and finishes whatever its journal does not yet record.
pub fn resume_run(engine: &Engine<'_>, stored: &StoredRun, store: &RunHandle) -> Result<RunState, PipelineError> {
    if let Some(c) = &stored.journal.corrupt {
        warn!("run {}: resuming before corrupt record at byte {}", stored.run_id, c.offset);
    }
    engine.run(RunState::from_stored(stored), store)
}
