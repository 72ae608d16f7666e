use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::{Method, Verdict, VerdictValue};
use crate::pipeline::ReviewItem;

#[derive(Debug, Error)]
pub enum AdjudicationError {
    #[error("adjudication needs an interactive terminal; rerun the pipeline with --strict to score unreviewed answers as incorrect")]
    NonInteractive,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Correct,
    Incorrect,
    Skip,
}

impl Decision {
    fn parse(line: &str) -> Option<Self> {
        match line.trim().to_ascii_lowercase().as_str() {
            "correct" | "c" | "y" | "yes" => Some(Decision::Correct),
            "incorrect" | "i" | "n" | "no" => Some(Decision::Incorrect),
            "skip" | "s" | "" => Some(Decision::Skip),
            _ => None,
        }
    }
}

/// Operator console: where questions are shown and decisions read.
pub struct Console<R, W> {
    input: R,
    output: W,
    interactive: bool,
}

impl<R: BufRead, W: Write> Console<R, W> {
    pub fn new(input: R, output: W, interactive: bool) -> Self {
        Self { input, output, interactive }
    }

    fn ask(&mut self, item: &ReviewItem, index: usize, total: usize) -> io::Result<Decision> {
        let rec = &item.record;
        writeln!(self.output, "\n[{}/{}] problem {} ({})", index + 1, total, rec.problem_id, rec.stage)?;
        writeln!(self.output, "question: {}", item.question)?;
        writeln!(self.output, "expected ({:?}): {}", item.expected.kind, item.expected.value)?;
        let candidate = rec.execution.as_ref().and_then(|e| e.answer_text.as_deref()).unwrap_or("<none>");
        writeln!(self.output, "candidate: {candidate}")?;
        writeln!(self.output, "grader: {}", rec.verdict.detail)?;
        loop {
            write!(self.output, "correct / incorrect / skip? ")?;
            self.output.flush()?;
            let mut line = String::new();
            if self.input.read_line(&mut line)? == 0 {
                return Ok(Decision::Skip);
            }
            if let Some(d) = Decision::parse(&line) {
                return Ok(d);
            }
            writeln!(self.output, "please answer correct, incorrect or skip")?;
        }
    }
}

/// Walks the review queue. Decided items come back with `method = human`;
/// skipped items keep their `needs_review` verdict.
pub fn adjudicate<R: BufRead, W: Write>(
    queue: &[ReviewItem],
    console: &mut Console<R, W>,
) -> Result<Vec<Verdict>, AdjudicationError> {
    if queue.is_empty() {
        return Ok(Vec::new());
    }
    if !console.interactive {
        return Err(AdjudicationError::NonInteractive);
    }
    let mut out = Vec::with_capacity(queue.len());
    for (i, item) in queue.iter().enumerate() {
        let verdict = match console.ask(item, i, queue.len())? {
            Decision::Correct => Verdict::new(VerdictValue::Correct, Method::Human, "operator: correct"),
            Decision::Incorrect => Verdict::new(VerdictValue::Incorrect, Method::Human, "operator: incorrect"),
            Decision::Skip => item.record.verdict.clone(),
        };
        out.push(verdict);
    }
    Ok(out)
}
