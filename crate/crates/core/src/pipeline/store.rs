use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AttemptRecord, PipelineError, RunConfig, Stage};
use crate::dataset::{Dataset, DatasetError, Format, Provenance};
use crate::grader::Verdict;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const WORK_DIR: &str = "work";

/// An operator decision on a `needs_review` attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationEvent {
    pub problem_id: String,
    pub stage: Stage,
    pub verdict: Verdict,
    pub operator: String,
    pub decided_at: DateTime<Utc>,
}

/// One journal line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalEntry {
    Attempt(AttemptRecord),
    Adjudication(AdjudicationEvent),
}

/// Where a journal stopped parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptRecord {
    pub offset: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JournalContents {
    pub entries: Vec<JournalEntry>,
    /// Length of the valid prefix in bytes.
    pub valid_len: u64,
    pub corrupt: Option<CorruptRecord>,
}

/// Parses complete lines up to the first bad one. A trailing line without
/// a newline counts as bad: it is what an interrupted append leaves behind.
pub fn parse_journal(bytes: &[u8]) -> JournalContents {
    let mut entries = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return JournalContents {
                entries,
                valid_len: offset as u64,
                corrupt: Some(CorruptRecord { offset: offset as u64, message: "truncated record".into() }),
            };
        };
        let line = &rest[..nl];
        if !line.iter().all(u8::is_ascii_whitespace) {
            match serde_json::from_slice::<JournalEntry>(line) {
                Ok(e) => entries.push(e),
                Err(e) => {
                    return JournalContents {
                        entries,
                        valid_len: offset as u64,
                        corrupt: Some(CorruptRecord { offset: offset as u64, message: e.to_string() }),
                    }
                }
            }
        }
        offset += nl + 1;
    }
    JournalContents { entries, valid_len: offset as u64, corrupt: None }
}

/// The directory holding all runs.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    fn check_id(run_id: &str) -> Result<(), PipelineError> {
        let ok = !run_id.is_empty()
            && run_id != "."
            && run_id != ".."
            && run_id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if ok {
            Ok(())
        } else {
            Err(PipelineError::InvalidRunId(run_id.to_string()))
        }
    }

    /// Creates `<root>/<run_id>/` with the frozen config and dataset.
    pub fn create(&self, run_id: &str, config: &RunConfig, dataset: &Dataset) -> Result<RunHandle, PipelineError> {
        Self::check_id(run_id)?;
        config.validate()?;
        let dir = self.run_dir(run_id);
        fs::create_dir_all(&self.root).map_err(|e| PipelineError::store(&self.root, e))?;
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => return Err(PipelineError::RunExists(run_id.to_string())),
            Err(e) => return Err(PipelineError::store(&dir, e)),
        }
        let config_json = serde_json::to_string_pretty(config).expect("config serializes") + "\n";
        write_file(&dir.join(CONFIG_FILE), config_json.as_bytes())?;
        write_file(&dir.join(DATASET_FILE), dataset.to_jsonl_string().as_bytes())?;
        let journal_path = dir.join(JOURNAL_FILE);
        let journal = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&journal_path)
            .map_err(|e| PipelineError::store(&journal_path, e))?;
        Ok(RunHandle { run_id: run_id.to_string(), dir, journal: Mutex::new(journal) })
    }

    /// Read-only view of a run.
    pub fn load(&self, run_id: &str) -> Result<StoredRun, PipelineError> {
        Self::check_id(run_id)?;
        let dir = self.run_dir(run_id);
        if !dir.join(CONFIG_FILE).is_file() {
            return Err(PipelineError::UnknownRun(run_id.to_string()));
        }
        let config_path = dir.join(CONFIG_FILE);
        let raw = fs::read_to_string(&config_path).map_err(|e| PipelineError::store(&config_path, e))?;
        let config: RunConfig =
            serde_json::from_str(&raw).map_err(|e| PipelineError::CorruptConfig(format!("{}: {e}", config_path.display())))?;
        let dataset_path = dir.join(DATASET_FILE);
        let dataset = match Dataset::load(&dataset_path, Format::Jsonl) {
            Err(DatasetError::Empty) => {
                Dataset::from_problems(Vec::new(), Provenance { path: dataset_path, loaded_at: Utc::now() })?
            }
            other => other?,
        };
        let dataset_sha256 = file_sha256(&dir.join(DATASET_FILE))?;
        let journal_path = dir.join(JOURNAL_FILE);
        let bytes = match fs::read(&journal_path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(PipelineError::store(&journal_path, e)),
        };
        let journal = parse_journal(&bytes);
        if let Some(c) = &journal.corrupt {
            warn!("{}: corrupt record at byte {}: {}", journal_path.display(), c.offset, c.message);
        }
        Ok(StoredRun { run_id: run_id.to_string(), dir, config, dataset, dataset_sha256, journal })
    }

    /// Opens a run for appending. A corrupt tail is cut off so new records
    /// follow the last good one.
    pub fn open(&self, run_id: &str) -> Result<(StoredRun, RunHandle), PipelineError> {
        let stored = self.load(run_id)?;
        let journal_path = stored.dir.join(JOURNAL_FILE);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)
            .map_err(|e| PipelineError::store(&journal_path, e))?;
        if stored.journal.corrupt.is_some() {
            file.set_len(stored.journal.valid_len).map_err(|e| PipelineError::store(&journal_path, e))?;
        }
        let handle = RunHandle { run_id: run_id.to_string(), dir: stored.dir.clone(), journal: Mutex::new(file) };
        Ok((stored, handle))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|e| PipelineError::store(path, e))
}

pub fn file_sha256(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::store(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Everything persisted for one run.
#[derive(Debug, Clone)]
pub struct StoredRun {
    pub run_id: String,
    pub dir: PathBuf,
    pub config: RunConfig,
    pub dataset: Dataset,
    pub dataset_sha256: String,
    pub journal: JournalContents,
}

/// Append side of a run. Appends from any thread are serialized.
#[derive(Debug)]
pub struct RunHandle {
    run_id: String,
    dir: PathBuf,
    journal: Mutex<File>,
}

impl RunHandle {
    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn journal_path(&self) -> PathBuf {
        self.dir.join(JOURNAL_FILE)
    }

    /// A fresh, empty working directory for one attempt.
    pub fn workdir(&self, problem_id: &str, stage: Stage) -> Result<PathBuf, PipelineError> {
        let safe: String =
            problem_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
        let path = self.dir.join(WORK_DIR).join(format!("{safe}_{stage}"));
        if path.exists() {
            fs::remove_dir_all(&path).map_err(|e| PipelineError::store(&path, e))?;
        }
        fs::create_dir_all(&path).map_err(|e| PipelineError::store(&path, e))?;
        Ok(path)
    }

    pub fn append(&self, entry: &JournalEntry) -> Result<(), PipelineError> {
        let mut line = serde_json::to_string(entry).expect("journal entries serialize");
        line.push('\n');
        let mut file = self.journal.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|()| file.sync_data())
            .map_err(|e| PipelineError::store(&self.dir.join(JOURNAL_FILE), e))
    }
}
