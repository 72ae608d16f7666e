//! Problem catalogs: loading, validation, serialization and seeded sampling.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use num_bigint::BigInt;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grader::expr::Expr;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {message}")]
    Malformed { line: usize, field: String, message: String },
    #[error("duplicate problem id {0:?}")]
    DuplicateId(String),
    #[error("unknown source label {0:?}")]
    UnknownSource(String),
    #[error("unknown answer kind {0:?}")]
    UnknownAnswerKind(String),
    #[error("no problems")]
    Empty,
    #[error("group {group} has {available} problems, {requested} requested")]
    Insufficient { group: String, available: usize, requested: usize },
    #[error("cannot infer dataset format from {0}; use jsonl or csv")]
    UnknownFormat(PathBuf),
}

/// Where a problem comes from: one of seven university courses or one of
/// six MATH topics. The set is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    Calculus1801,
    Calculus1802,
    DiffEq1803,
    Probability1805,
    LinearAlgebra1806,
    MathForCs6042,
    Coms3251,
    Prealgebra,
    Algebra,
    NumberTheory,
    CountingAndProbability,
    IntermediateAlgebra,
    Precalculus,
}

impl Source {
    pub const ALL: [Source; 13] = [
        Source::Calculus1801,
        Source::Calculus1802,
        Source::DiffEq1803,
        Source::Probability1805,
        Source::LinearAlgebra1806,
        Source::MathForCs6042,
        Source::Coms3251,
        Source::Prealgebra,
        Source::Algebra,
        Source::NumberTheory,
        Source::CountingAndProbability,
        Source::IntermediateAlgebra,
        Source::Precalculus,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Source::Calculus1801 => "18.01",
            Source::Calculus1802 => "18.02",
            Source::DiffEq1803 => "18.03",
            Source::Probability1805 => "18.05",
            Source::LinearAlgebra1806 => "18.06",
            Source::MathForCs6042 => "6.042",
            Source::Coms3251 => "COMS3251",
            Source::Prealgebra => "Prealgebra",
            Source::Algebra => "Algebra",
            Source::NumberTheory => "Number Theory",
            Source::CountingAndProbability => "Counting and Probability",
            Source::IntermediateAlgebra => "Intermediate Algebra",
            Source::Precalculus => "Precalculus",
        }
    }

    /// True for the university courses, false for MATH topics.
    pub fn is_course(self) -> bool {
        (self as usize) < 7
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Source {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|src| src.label() == s)
            .ok_or_else(|| DatasetError::UnknownSource(s.to_string()))
    }
}

impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Integer,
    Real,
    Expression,
    Tuple,
    Text,
    Plot,
}

impl FromStr for AnswerKind {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "integer" => AnswerKind::Integer,
            "real" => AnswerKind::Real,
            "expression" => AnswerKind::Expression,
            "tuple" => AnswerKind::Tuple,
            "text" => AnswerKind::Text,
            "plot" => AnswerKind::Plot,
            other => return Err(DatasetError::UnknownAnswerKind(other.to_string())),
        })
    }
}

/// Expected answer of a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSpec {
    pub kind: AnswerKind,
    pub value: String,
    /// `(relative, absolute)`; only meaningful for `real`.
    #[serde(rename = "tolerance", default, skip_serializing_if = "Option::is_none")]
    pub tolerance_override: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variables: Option<Vec<String>>,
}

impl AnswerSpec {
    pub fn new(kind: AnswerKind, value: impl Into<String>) -> Self {
        Self { kind, value: value.into(), tolerance_override: None, variables: None }
    }

    /// Checks the kind-specific shape of `value`. Returns `(field, message)`.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let v = self.value.trim();
        match self.kind {
            AnswerKind::Integer => {
                BigInt::from_str(v.strip_prefix('+').unwrap_or(v))
                    .map_err(|_| ("answer.value", format!("{v:?} is not an integer")))?;
            }
            AnswerKind::Real => {
                let parsed: f64 = v.parse().map_err(|_| ("answer.value", format!("{v:?} is not a decimal")))?;
                if !parsed.is_finite() {
                    return Err(("answer.value", format!("{v:?} is not finite")));
                }
            }
            AnswerKind::Expression => {
                let expr = Expr::parse(v).map_err(|e| ("answer.value", e.to_string()))?;
                if let Some(allowed) = &self.variables {
                    if let Some(bad) = expr.variables().into_iter().find(|name| !allowed.contains(name)) {
                        return Err(("answer.variables", format!("expression uses undeclared variable {bad:?}")));
                    }
                }
            }
            AnswerKind::Plot => {
                if !v.is_empty() {
                    return Err(("answer.value", "plot answers carry no value".into()));
                }
            }
            AnswerKind::Tuple | AnswerKind::Text => {}
        }
        if let Some((rel, abs)) = self.tolerance_override {
            if self.kind != AnswerKind::Real {
                return Err(("answer.tolerance", "tolerance applies to real answers only".into()));
            }
            if !(rel >= 0.0 && abs >= 0.0) || (rel == 0.0 && abs == 0.0) || !rel.is_finite() || !abs.is_finite() {
                return Err(("answer.tolerance", format!("invalid tolerance ({rel}, {abs})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub source: Source,
    #[serde(rename = "question")]
    pub question_text: String,
    pub answer: AnswerSpec,
    #[serde(default)]
    pub requires_plot: bool,
    #[serde(default)]
    pub proof_based: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: PathBuf,
    pub loaded_at: DateTime<Utc>,
}

/// An ordered, validated, immutable set of problems with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    problems: Vec<Problem>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self, DatasetError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") | Some("ndjson") => Ok(Format::Jsonl),
            Some("csv") => Ok(Format::Csv),
            _ => Err(DatasetError::UnknownFormat(path.to_path_buf())),
        }
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    id: String,
    source: String,
    question: String,
    answer_kind: String,
    answer_value: String,
    requires_plot: String,
    proof_based: String,
}

fn validate_problem(p: &Problem, line: usize) -> Result<(), DatasetError> {
    let malformed = |field: &str, message: String| DatasetError::Malformed { line, field: field.into(), message };
    if p.id.trim().is_empty() {
        return Err(malformed("id", "empty id".into()));
    }
    if p.question_text.trim().is_empty() {
        return Err(malformed("question", "empty question".into()));
    }
    p.answer.validate().map_err(|(field, message)| malformed(field, message))
}

/// Maps serde errors on known enum fields to the dedicated error variants.
fn classify_json_error(raw: &serde_json::Value, line: usize, err: serde_json::Error) -> DatasetError {
    if let Some(src) = raw.get("source").and_then(|v| v.as_str()) {
        if src.parse::<Source>().is_err() {
            return DatasetError::UnknownSource(src.to_string());
        }
    }
    if let Some(kind) = raw.pointer("/answer/kind").and_then(|v| v.as_str()) {
        if kind.parse::<AnswerKind>().is_err() {
            return DatasetError::UnknownAnswerKind(kind.to_string());
        }
    }
    let message = err.to_string();
    let field = message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "record".to_string());
    DatasetError::Malformed { line, field, message }
}

fn parse_bool(raw: &str, line: usize, field: &str) -> Result<bool, DatasetError> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" | "" => Ok(false),
        other => Err(DatasetError::Malformed { line, field: field.into(), message: format!("{other:?} is not a boolean") }),
    }
}

impl Dataset {
    /// Builds a dataset, enforcing id uniqueness and per-problem invariants.
    pub fn from_problems(problems: Vec<Problem>, provenance: Provenance) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for (i, p) in problems.iter().enumerate() {
            validate_problem(p, i + 1)?;
            if !seen.insert(p.id.as_str()) {
                return Err(DatasetError::DuplicateId(p.id.clone()));
            }
        }
        Ok(Self { problems, provenance })
    }

    pub fn load(path: impl AsRef<Path>, format: Format) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let io = |source| DatasetError::Io { path: path.to_path_buf(), source };
        let file = fs::File::open(path).map_err(io)?;
        let problems = match format {
            Format::Jsonl => Self::read_jsonl(BufReader::new(file))?,
            Format::Csv => Self::read_csv(file)?,
        };
        if problems.is_empty() {
            return Err(DatasetError::Empty);
        }
        let provenance = Provenance { path: path.to_path_buf(), loaded_at: Utc::now() };
        Self::from_problems(problems, provenance)
    }

    /// Loads with the format inferred from the file extension.
    pub fn load_auto(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let format = Format::from_path(path.as_ref())?;
        Self::load(path, format)
    }

    fn read_jsonl(reader: impl BufRead) -> Result<Vec<Problem>, DatasetError> {
        let mut problems = Vec::new();
        let mut ids = HashSet::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|source| DatasetError::Io { path: PathBuf::from("<jsonl>"), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: serde_json::Value = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
                line: lineno,
                field: "record".into(),
                message: e.to_string(),
            })?;
            let problem: Problem =
                serde_json::from_value(raw.clone()).map_err(|e| classify_json_error(&raw, lineno, e))?;
            validate_problem(&problem, lineno)?;
            if !ids.insert(problem.id.clone()) {
                return Err(DatasetError::DuplicateId(problem.id));
            }
            problems.push(problem);
        }
        Ok(problems)
    }

    fn read_csv(reader: impl std::io::Read) -> Result<Vec<Problem>, DatasetError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut problems = Vec::new();
        let mut ids = HashSet::new();
        for (idx, row) in rdr.deserialize::<CsvRow>().enumerate() {
            // header is line 1
            let lineno = idx + 2;
            let row = row.map_err(|e| DatasetError::Malformed { line: lineno, field: "record".into(), message: e.to_string() })?;
            let problem = Problem {
                id: row.id,
                source: row.source.parse()?,
                question_text: row.question,
                answer: AnswerSpec::new(row.answer_kind.parse()?, row.answer_value),
                requires_plot: parse_bool(&row.requires_plot, lineno, "requires_plot")?,
                proof_based: parse_bool(&row.proof_based, lineno, "proof_based")?,
            };
            validate_problem(&problem, lineno)?;
            if !ids.insert(problem.id.clone()) {
                return Err(DatasetError::DuplicateId(problem.id));
            }
            problems.push(problem);
        }
        Ok(problems)
    }

    /// Writes the canonical JSON-lines form, one problem per line.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for p in &self.problems {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn problems(&self) -> &[Problem] {
        &self.problems
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Problem> {
        self.problems.iter().find(|p| p.id == id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.problems.iter().map(|p| p.id.as_str()).collect()
    }

    /// Draws `per_course` problems from every course label and `per_topic`
    /// from every MATH topic, without replacement. Selection is a seeded
    /// shuffle per group; the result keeps load order.
    pub fn sample_split(&self, per_course: usize, per_topic: usize, seed: u64) -> Result<Dataset, DatasetError> {
        let mut by_source: BTreeMap<Source, Vec<usize>> = BTreeMap::new();
        for (i, p) in self.problems.iter().enumerate() {
            by_source.entry(p.source).or_default().push(i);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = Vec::new();
        for source in Source::ALL {
            let requested = if source.is_course() { per_course } else { per_topic };
            let mut members = by_source.remove(&source).unwrap_or_default();
            if members.len() < requested {
                return Err(DatasetError::Insufficient {
                    group: source.label().to_string(),
                    available: members.len(),
                    requested,
                });
            }
            if requested == 0 {
                continue;
            }
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..requested]);
        }
        chosen.sort_unstable();

        Ok(Dataset {
            problems: chosen.into_iter().map(|i| self.problems[i].clone()).collect(),
            provenance: self.provenance.clone(),
        })
    }
}
