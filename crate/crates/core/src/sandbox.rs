//! Execution of candidate programs in a child interpreter.
//!
//! The Rust side spawns the runner shim in its own process group, sends it
//! one JSON payload on stdin, enforces the wall-clock limit by killing the
//! whole group, and reads back a single JSON line from stdout. The jail is
//! best-effort (import guard, cleared environment, no network by default in
//! the shim); it is not a security boundary.
//!
//! [`StubExecutor`] replays canned results instead of running anything.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::promptkit::CandidateProgram;
use crate::sync::Semaphore;

pub const OUTPUT_CAP: usize = 64 * 1024;
/// Slack allowed past the time limit for kill-and-reap.
pub const KILL_GRACE: Duration = Duration::from_secs(1);
pub const DEFAULT_TIME_LIMIT: Duration = Duration::from_secs(30);
pub const DEFAULT_MEMORY_LIMIT: u64 = 512 * 1024 * 1024;
pub const DEFAULT_ALLOWLIST: [&str; 6] = ["numpy", "sympy", "matplotlib", "math", "random", "scipy"];
pub const IMAGE_EXTENSIONS: [&str; 11] = ["png", "jpg", "jpeg", "svg", "pdf", "gif", "bmp", "tif", "tiff", "webp", "eps"];

/// Cap on raw bytes read from the child before discarding.
const READ_CAP: usize = 8 * 1024 * 1024;
const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("runner shim not found: {0}")]
    ShimNotFound(String),
    #[error("workdir {0} already exists and is not empty")]
    WorkdirCollision(PathBuf),
    #[error("invalid execution request: {0}")]
    InvalidRequest(String),
    #[error("serializing shim payload: {0}")]
    Payload(#[from] serde_json::Error),
    #[error("sandbox io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionStatus {
    Ok,
    Timeout,
    RuntimeError,
    DeniedImport,
    ResourceExceeded,
    ProtocolError,
}

impl ExecutionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecutionStatus::Ok => "ok",
            ExecutionStatus::Timeout => "timeout",
            ExecutionStatus::RuntimeError => "runtime_error",
            ExecutionStatus::DeniedImport => "denied_import",
            ExecutionStatus::ResourceExceeded => "resource_exceeded",
            ExecutionStatus::ProtocolError => "protocol_error",
        }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v.max(0.0)).map_err(serde::de::Error::custom)
    }
}

/// Outcome of one execution. Serialized form is the shim's stdout line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecutionStatus,
    pub answer_text: Option<String>,
    pub stdout: String,
    pub stderr: String,
    #[serde(default)]
    pub artifacts: Vec<String>,
    #[serde(rename = "wall_time_s", with = "secs")]
    pub wall_time: Duration,
}

impl ExecutionResult {
    pub fn failed(status: ExecutionStatus, stderr: impl Into<String>) -> Self {
        Self {
            status,
            answer_text: None,
            stdout: String::new(),
            stderr: stderr.into(),
            artifacts: Vec::new(),
            wall_time: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    #[serde(rename = "time_limit_s", with = "secs")]
    pub time_limit: Duration,
    pub memory_limit: u64,
    pub import_allowlist: Vec<String>,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            time_limit: DEFAULT_TIME_LIMIT,
            memory_limit: DEFAULT_MEMORY_LIMIT,
            import_allowlist: DEFAULT_ALLOWLIST.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExecutionRequest {
    pub program: CandidateProgram,
    pub time_limit: Duration,
    pub memory_limit: u64,
    pub import_allowlist: Vec<String>,
    pub workdir: PathBuf,
    pub rng_seed: u64,
}

impl ExecutionRequest {
    pub fn new(program: CandidateProgram, limits: &Limits, workdir: impl Into<PathBuf>, rng_seed: u64) -> Self {
        Self {
            program,
            time_limit: limits.time_limit,
            memory_limit: limits.memory_limit,
            import_allowlist: limits.import_allowlist.clone(),
            workdir: workdir.into(),
            rng_seed,
        }
    }

    fn validate(&self) -> Result<(), SandboxError> {
        if self.time_limit.is_zero() {
            return Err(SandboxError::InvalidRequest("time limit must be positive".into()));
        }
        if self.memory_limit == 0 {
            return Err(SandboxError::InvalidRequest("memory limit must be positive".into()));
        }
        if self.program.source.trim().is_empty() {
            return Err(SandboxError::InvalidRequest("empty program".into()));
        }
        Ok(())
    }
}

/// The stdin document sent to the shim.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ShimPayload {
    pub source: String,
    pub time_limit_s: f64,
    pub memory_limit_bytes: u64,
    pub allowlist: Vec<String>,
    pub rng_seed: u64,
    pub workdir: String,
}

impl ShimPayload {
    pub fn from_request(req: &ExecutionRequest) -> Self {
        Self {
            source: req.program.source.clone(),
            time_limit_s: req.time_limit.as_secs_f64(),
            memory_limit_bytes: req.memory_limit,
            allowlist: req.import_allowlist.clone(),
            rng_seed: req.rng_seed,
            workdir: req.workdir.display().to_string(),
        }
    }
}

/// Anything that can run a candidate program.
pub trait Executor: Send + Sync {
    fn execute(&self, req: &ExecutionRequest) -> Result<ExecutionResult, SandboxError>;
}

/// How to launch the shim: an interpreter plus arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShimCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl ShimCommand {
    pub fn python(interpreter: impl Into<PathBuf>, script: impl AsRef<Path>) -> Self {
        Self {
            program: interpreter.into(),
            args: vec!["-I".into(), script.as_ref().display().to_string()],
        }
    }

    /// `REAMS_SHIM` names the shim script, `REAMS_PYTHON` the interpreter
    /// (default `python3`).
    pub fn from_env() -> Result<Self, SandboxError> {
        let script = std::env::var_os("REAMS_SHIM")
            .ok_or_else(|| SandboxError::ShimNotFound("set REAMS_SHIM or pass --shim".into()))?;
        let python = std::env::var_os("REAMS_PYTHON").unwrap_or_else(|| "python3".into());
        let script = PathBuf::from(script);
        if !script.is_file() {
            return Err(SandboxError::ShimNotFound(script.display().to_string()));
        }
        Ok(Self::python(python, script))
    }
}

/// Subprocess executor. Concurrent children are bounded by a shared
/// semaphore (default: logical CPU count).
#[derive(Debug, Clone)]
pub struct Sandbox {
    shim: ShimCommand,
    slots: Arc<Semaphore>,
}

impl Sandbox {
    pub fn new(shim: ShimCommand) -> Self {
        let cpus = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        Self::with_concurrency(shim, cpus)
    }

    pub fn with_concurrency(shim: ShimCommand, max_children: usize) -> Self {
        Self { shim, slots: Arc::new(Semaphore::new(max_children)) }
    }
}

fn prepare_workdir(dir: &Path) -> Result<(), SandboxError> {
    match fs::read_dir(dir) {
        Ok(mut entries) => {
            if entries.next().is_some() {
                return Err(SandboxError::WorkdirCollision(dir.to_path_buf()));
            }
            Ok(())
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(fs::create_dir_all(dir)?),
        Err(e) => Err(e.into()),
    }
}

/// Truncates at a char boundary no later than `OUTPUT_CAP` bytes.
pub fn truncate_output(mut s: String) -> String {
    if s.len() > OUTPUT_CAP {
        let mut cut = OUTPUT_CAP;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
    }
    s
}

/// Image files under `dir`, as sorted paths relative to it.
pub fn collect_artifacts(dir: &Path) -> Vec<String> {
    let mut out: Vec<String> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .filter(|e| {
            e.path()
                .extension()
                .and_then(|x| x.to_str())
                .map(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
                .unwrap_or(false)
        })
        .filter_map(|e| e.path().strip_prefix(dir).ok().map(|p| p.display().to_string()))
        .collect();
    out.sort();
    out
}

fn spawn_reader<R: Read + Send + 'static>(mut pipe: R) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match pipe.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if buf.len() < READ_CAP {
                        buf.extend_from_slice(&chunk[..n]);
                    }
                }
            }
        }
        buf
    })
}

fn kill_group(pgid: u32) {
    // SAFETY: killpg only sends a signal; ESRCH for an empty group is fine.
    unsafe {
        libc::killpg(pgid as libc::pid_t, libc::SIGKILL);
    }
}

fn last_line(bytes: &[u8]) -> Option<String> {
    String::from_utf8_lossy(bytes)
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .map(str::to_string)
}

impl Executor for Sandbox {
    fn execute(&self, req: &ExecutionRequest) -> Result<ExecutionResult, SandboxError> {
        req.validate()?;
        prepare_workdir(&req.workdir)?;
        let payload = serde_json::to_vec(&ShimPayload::from_request(req))?;

        let _slot = self.slots.acquire();
        let started = Instant::now();
        let mut cmd = Command::new(&self.shim.program);
        cmd.args(&self.shim.args)
            .current_dir(&req.workdir)
            .env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_default())
            .env("HOME", &req.workdir)
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("MPLBACKEND", "Agg")
            .env("MPLCONFIGDIR", req.workdir.join(".mplconfig"))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);

        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) if e.kind() == io::ErrorKind::NotFound || e.kind() == io::ErrorKind::PermissionDenied => {
                return Err(SandboxError::ShimNotFound(format!("{}: {e}", self.shim.program.display())))
            }
            Err(e) => return Err(e.into()),
        };
        let pgid = child.id();

        let mut stdin = child.stdin.take().expect("stdin is piped");
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(&payload);
        });
        let out_reader = spawn_reader(child.stdout.take().expect("stdout is piped"));
        let err_reader = spawn_reader(child.stderr.take().expect("stderr is piped"));

        let deadline = started + req.time_limit;
        let mut timed_out = false;
        let exit = loop {
            if let Some(status) = child.try_wait()? {
                break Some(status);
            }
            if Instant::now() >= deadline {
                timed_out = true;
                kill_group(pgid);
                child.wait()?;
                break None;
            }
            thread::sleep(POLL);
        };
        // sweep anything the shim left behind in its group
        kill_group(pgid);
        let wall_time = started.elapsed();

        let _ = writer.join();
        let raw_out = out_reader.join().unwrap_or_default();
        let raw_err = err_reader.join().unwrap_or_default();
        let proc_stderr = String::from_utf8_lossy(&raw_err).into_owned();
        let artifacts = collect_artifacts(&req.workdir);

        if timed_out {
            return Ok(ExecutionResult {
                status: ExecutionStatus::Timeout,
                answer_text: None,
                stdout: String::new(),
                stderr: truncate_output(format!(
                    "killed after {:.3}s (limit {:.3}s)\n{proc_stderr}",
                    wall_time.as_secs_f64(),
                    req.time_limit.as_secs_f64()
                )),
                artifacts,
                wall_time,
            });
        }

        let protocol_error = |why: String| ExecutionResult {
            status: ExecutionStatus::ProtocolError,
            answer_text: None,
            stdout: truncate_output(String::from_utf8_lossy(&raw_out).into_owned()),
            stderr: truncate_output(format!("{why}\n{proc_stderr}")),
            artifacts: artifacts.clone(),
            wall_time,
        };

        let Some(line) = last_line(&raw_out) else {
            let code = exit.and_then(|s| s.code()).map_or("signal".to_string(), |c| c.to_string());
            return Ok(protocol_error(format!("shim produced no result line (exit {code})")));
        };
        let parsed: ExecutionResult = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => return Ok(protocol_error(format!("unparseable shim result: {e}"))),
        };
        if parsed.status == ExecutionStatus::Ok && parsed.answer_text.is_none() {
            return Ok(protocol_error("shim reported ok without answer_text".into()));
        }

        let mut stderr = parsed.stderr;
        if !proc_stderr.trim().is_empty() {
            if !stderr.is_empty() && !stderr.ends_with('\n') {
                stderr.push('\n');
            }
            stderr.push_str(&proc_stderr);
        }
        Ok(ExecutionResult {
            status: parsed.status,
            answer_text: parsed.answer_text,
            stdout: truncate_output(parsed.stdout),
            stderr: truncate_output(stderr),
            artifacts,
            wall_time,
        })
    }
}

/// Replays canned results keyed by trimmed program source. Unknown programs
/// come back as `protocol_error`.
#[derive(Debug, Clone, Default)]
pub struct StubExecutor {
    canned: HashMap<String, ExecutionResult>,
}

impl StubExecutor {
    pub fn new(canned: HashMap<String, ExecutionResult>) -> Self {
        Self { canned: canned.into_iter().map(|(k, v)| (k.trim().to_string(), v)).collect() }
    }

    /// Reads a JSON object mapping program source to a shim-format result.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SandboxError> {
        let raw = fs::read_to_string(path.as_ref())?;
        let canned: HashMap<String, ExecutionResult> = serde_json::from_str(&raw)?;
        Ok(Self::new(canned))
    }

    pub fn insert(&mut self, source: &str, result: ExecutionResult) {
        self.canned.insert(source.trim().to_string(), result);
    }
}

impl Executor for StubExecutor {
    fn execute(&self, req: &ExecutionRequest) -> Result<ExecutionResult, SandboxError> {
        req.validate()?;
        Ok(match self.canned.get(req.program.source.trim()) {
            Some(r) => r.clone(),
            None => ExecutionResult::failed(ExecutionStatus::ProtocolError, "no canned result for this program"),
        })
    }
}
