//! Per-group success tables in markdown, CSV and JSON.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{Progress, RunConfig, RunState, StoredRun};
use crate::stats::{self, round_half_away, Group, Grouping, StatsError, SuccessSummary, SummaryKind};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("run {run_id} is incomplete ({zero} zero-shot and {reasoning} reasoning attempts outstanding); resume it or pass --partial")]
    Incomplete { run_id: String, zero: usize, reasoning: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub run_id: String,
    pub dataset_sha256: String,
    pub problems: usize,
    pub alpha: f64,
    pub complete: bool,
    pub awaiting_review: usize,
    pub config: RunConfig,
}

/// Summary rows of one run: three per source group, then three for the
/// whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub format: ReportFormat,
    pub metadata: ReportMetadata,
    pub rows: Vec<SuccessSummary>,
}

/// `76.00%`: percent rounded half away from zero to two decimals.
pub fn format_percent(rate: f64) -> String {
    format!("{:.2}%", round_half_away(rate * 100.0, 2))
}

/// `(0.55-0.91)`.
pub fn format_interval(lo: f64, hi: f64) -> String {
    format!("({:.2}-{:.2})", round_half_away(lo, 2), round_half_away(hi, 2))
}

pub fn format_cell(s: &SuccessSummary) -> String {
    format!("{} {}", format_percent(s.rate), format_interval(s.ci_low, s.ci_high))
}

impl ReportDocument {
    pub fn build(
        stored: &StoredRun,
        state: &RunState,
        format: ReportFormat,
        alpha: f64,
        allow_partial: bool,
    ) -> Result<Self, ReportError> {
        let progress: Progress = state.progress(&stored.dataset);
        if !progress.is_complete() && !allow_partial {
            return Err(ReportError::Incomplete {
                run_id: stored.run_id.clone(),
                zero: progress.zero_shot_pending,
                reasoning: progress.reasoning_pending,
            });
        }
        let outcomes = state.outcomes(&stored.dataset);
        let mut rows = stats::summarize(&outcomes, Grouping::BySource, alpha)?;
        if !outcomes.is_empty() {
            rows.extend(stats::summarize(&outcomes, Grouping::Overall, alpha)?);
        }
        Ok(Self {
            format,
            metadata: ReportMetadata {
                run_id: stored.run_id.clone(),
                dataset_sha256: stored.dataset_sha256.clone(),
                problems: stored.dataset.len(),
                alpha,
                complete: progress.is_complete(),
                awaiting_review: progress.awaiting_review,
                config: stored.config.clone(),
            },
            rows,
        })
    }

    /// Groups in row order, each once.
    pub fn groups(&self) -> Vec<Group> {
        let mut out: Vec<Group> = Vec::new();
        for r in &self.rows {
            if out.last() != Some(&r.group) {
                out.push(r.group);
            }
        }
        out
    }

    pub fn row(&self, group: Group, kind: SummaryKind) -> Option<&SuccessSummary> {
        self.rows.iter().find(|r| r.group == group && r.kind == kind)
    }

    pub fn render(&self) -> String {
        match self.format {
            ReportFormat::Markdown => self.render_markdown(),
            ReportFormat::Csv => self.render_csv(),
            ReportFormat::Json => self.render_json(),
        }
    }

    pub fn render_markdown(&self) -> String {
        let m = &self.metadata;
        let mut out = String::new();
        writeln!(out, "# Run {}\n", m.run_id).unwrap();
        writeln!(out, "- dataset sha256: `{}`", m.dataset_sha256).unwrap();
        writeln!(out, "- problems: {}", m.problems).unwrap();
        writeln!(out, "- code model: {} via {}", m.config.code_model.model_id, m.config.code_backend).unwrap();
        writeln!(out, "- reasoning model: {} via {}", m.config.reason_model.model_id, m.config.reason_backend).unwrap();
        writeln!(out, "- max reasoning rounds: {}", m.config.max_reasoning_rounds).unwrap();
        writeln!(out, "- seed: {}", m.config.seed).unwrap();
        writeln!(out, "- interval: Clopper-Pearson, {:.0}% confidence", (1.0 - m.alpha) * 100.0).unwrap();
        if !m.complete {
            writeln!(out, "- partial run: outstanding attempts are not counted").unwrap();
        }
        if m.awaiting_review > 0 {
            writeln!(out, "- {} attempts awaiting review are counted as incorrect", m.awaiting_review).unwrap();
        }
        out.push('\n');
        let titles: Vec<&str> = SummaryKind::ALL.iter().map(|k| k.title()).collect();
        writeln!(out, "| Group | n | {} |", titles.join(" | ")).unwrap();
        writeln!(out, "|---|---:|{}", "---|".repeat(titles.len())).unwrap();
        for group in self.groups() {
            let cells: Vec<String> =
                SummaryKind::ALL.iter().filter_map(|k| self.row(group, *k)).map(format_cell).collect();
            let n = self.row(group, SummaryKind::ZeroShot).map(|r| r.n).unwrap_or(0);
            writeln!(out, "| {group} | {n} | {} |", cells.join(" | ")).unwrap();
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["group", "kind", "n", "x", "rate", "ci_low", "ci_high", "alpha"]).expect("in-memory write");
        for r in &self.rows {
            let kind = serde_json::to_value(r.kind).expect("kind serializes");
            w.write_record([
                r.group.to_string(),
                kind.as_str().unwrap_or_default().to_string(),
                r.n.to_string(),
                r.x.to_string(),
                format!("{:?}", r.rate),
                format!("{:?}", r.ci_low),
                format!("{:?}", r.ci_high),
                format!("{:?}", r.alpha),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn render_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            metadata: &'a ReportMetadata,
            rows: &'a [SuccessSummary],
        }
        serde_json::to_string_pretty(&Doc { metadata: &self.metadata, rows: &self.rows }).expect("report serializes") + "\n"
    }
}
