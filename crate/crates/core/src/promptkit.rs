//! Prompt construction for the three model calls and extraction of the
//! candidate program from a model reply.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Problem;
use crate::modelclient::{Message, ModelRequest, ModelSettings};
use crate::pipeline::Stage;

pub const SYMBOLIC_PACKAGE: &str = "sympy";
pub const PLOTTING_PACKAGE: &str = "matplotlib";

const DEFAULT_ZERO_SHOT: &str = include_str!("../prompts/zero_shot_code.txt");
const DEFAULT_REASONING: &str = include_str!("../prompts/reasoning.txt");
const DEFAULT_CODE_WITH_REASONING: &str = include_str!("../prompts/code_with_reasoning.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template}: unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { template: &'static str, placeholder: String },
    #[error("template {template}: missing required placeholder {{{placeholder}}}")]
    MissingPlaceholder { template: &'static str, placeholder: &'static str },
    #[error("template {template}: unbalanced brace at byte {pos}")]
    UnbalancedBrace { template: &'static str, pos: usize },
    #[error("template {0}: must not contain code fences")]
    FenceInTemplate(&'static str),
    #[error("template {template}: no value for {{{placeholder}}}")]
    MissingValue { template: &'static str, placeholder: String },
    #[error("reasoning text is empty")]
    EmptyReasoning,
    #[error("model reply is empty")]
    EmptyReply,
    #[error("reading template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    ZeroShotCode,
    Reasoning,
    CodeWithReasoning,
}

impl TemplateName {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::ZeroShotCode => "zero_shot_code",
            TemplateName::Reasoning => "reasoning",
            TemplateName::CodeWithReasoning => "code_with_reasoning",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.as_str())
    }

    fn allowed(self) -> &'static [&'static str] {
        match self {
            TemplateName::ZeroShotCode => &["question", "imports"],
            TemplateName::Reasoning => &["question"],
            TemplateName::CodeWithReasoning => &["question", "imports", "reasoning"],
        }
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            TemplateName::ZeroShotCode => &["question"],
            TemplateName::Reasoning => &["question"],
            TemplateName::CodeWithReasoning => &["question", "reasoning"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

/// A parsed template. `{name}` is a placeholder; `{{` and `}}` are literal
/// braces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    pub fn parse(name: TemplateName, body: &str) -> Result<Self, PromptError> {
        let tname = name.as_str();
        let mut pieces = Vec::new();
        let mut text = String::new();
        let bytes = body.as_bytes();
        let mut i = 0;
        while i < body.len() {
            let ch = body[i..].chars().next().expect("in bounds");
            match ch {
                '{' if bytes.get(i + 1) == Some(&b'{') => {
                    text.push('{');
                    i += 2;
                }
                '}' if bytes.get(i + 1) == Some(&b'}') => {
                    text.push('}');
                    i += 2;
                }
                '{' => {
                    let close = body[i + 1..]
                        .find('}')
                        .ok_or(PromptError::UnbalancedBrace { template: tname, pos: i })?;
                    let slot = &body[i + 1..i + 1 + close];
                    if !name.allowed().contains(&slot) {
                        return Err(PromptError::UnknownPlaceholder { template: tname, placeholder: slot.to_string() });
                    }
                    if !text.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut text)));
                    }
                    pieces.push(Piece::Slot(slot.to_string()));
                    i += close + 2;
                }
                '}' => return Err(PromptError::UnbalancedBrace { template: tname, pos: i }),
                c => {
                    text.push(c);
                    i += c.len_utf8();
                }
            }
        }
        if !text.is_empty() {
            pieces.push(Piece::Text(text));
        }

        let used: BTreeSet<&str> = pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.as_str()),
                Piece::Text(_) => None,
            })
            .collect();
        if let Some(missing) = name.required().iter().find(|r| !used.contains(**r)) {
            return Err(PromptError::MissingPlaceholder { template: tname, placeholder: missing });
        }
        if name == TemplateName::Reasoning && body.contains("```") {
            return Err(PromptError::FenceInTemplate(tname));
        }
        Ok(Self { name, body: body.to_string(), pieces })
    }

    pub fn render(&self, values: &BTreeMap<&str, &str>) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len() + 256);
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => out.push_str(values.get(s.as_str()).ok_or_else(|| PromptError::MissingValue {
                    template: self.name.as_str(),
                    placeholder: s.clone(),
                })?),
            }
        }
        Ok(out)
    }
}

/// The three templates a run uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub zero_shot: PromptTemplate,
    pub reasoning: PromptTemplate,
    pub code_with_reasoning: PromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            zero_shot: PromptTemplate::parse(TemplateName::ZeroShotCode, DEFAULT_ZERO_SHOT).expect("shipped template"),
            reasoning: PromptTemplate::parse(TemplateName::Reasoning, DEFAULT_REASONING).expect("shipped template"),
            code_with_reasoning: PromptTemplate::parse(TemplateName::CodeWithReasoning, DEFAULT_CODE_WITH_REASONING)
                .expect("shipped template"),
        }
    }
}

impl PromptSet {
    /// Loads `<name>.txt` files from `dir`; missing files keep the defaults.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let mut set = Self::default();
        for name in [TemplateName::ZeroShotCode, TemplateName::Reasoning, TemplateName::CodeWithReasoning] {
            let path = dir.as_ref().join(name.file_name());
            let body = match fs::read_to_string(&path) {
                Ok(b) => b,
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(source) => return Err(PromptError::Io { path, source }),
            };
            let tpl = PromptTemplate::parse(name, &body)?;
            match name {
                TemplateName::ZeroShotCode => set.zero_shot = tpl,
                TemplateName::Reasoning => set.reasoning = tpl,
                TemplateName::CodeWithReasoning => set.code_with_reasoning = tpl,
            }
        }
        Ok(set)
    }

    pub fn build_zero_shot_prompt(&self, p: &Problem, settings: &ModelSettings) -> ModelRequest {
        let imports = import_hint(p);
        let values = BTreeMap::from([("question", p.question_text.as_str()), ("imports", imports.as_str())]);
        let text = self.zero_shot.render(&values).expect("placeholders checked at parse time");
        request(settings, text)
    }

    pub fn build_reasoning_prompt(&self, p: &Problem, settings: &ModelSettings) -> ModelRequest {
        let values = BTreeMap::from([("question", p.question_text.as_str())]);
        let text = self.reasoning.render(&values).expect("placeholders checked at parse time");
        request(settings, text)
    }

    pub fn build_code_with_reasoning_prompt(
        &self,
        p: &Problem,
        reasoning: &str,
        settings: &ModelSettings,
    ) -> Result<ModelRequest, PromptError> {
        if reasoning.trim().is_empty() {
            return Err(PromptError::EmptyReasoning);
        }
        let imports = import_hint(p);
        let values = BTreeMap::from([
            ("question", p.question_text.as_str()),
            ("imports", imports.as_str()),
            ("reasoning", reasoning),
        ]);
        Ok(request(settings, self.code_with_reasoning.render(&values)?))
    }
}

fn request(settings: &ModelSettings, text: String) -> ModelRequest {
    ModelRequest {
        model_id: settings.model_id.clone(),
        messages: vec![Message::user(text)],
        temperature: settings.temperature,
        max_tokens: settings.max_tokens,
        stop: None,
    }
}

/// Package hint: the symbolic package always, the plotting package only
/// when the problem asks for a figure.
pub fn import_hint(p: &Problem) -> String {
    let mut hint = format!("You may import `{SYMBOLIC_PACKAGE}` for symbolic mathematics.");
    if p.requires_plot {
        hint.push_str(&format!(
            " The problem asks for a plot: draw it with `{PLOTTING_PACKAGE}` and save the figure to a PNG file in the current directory, for example `plt.savefig(\"plot.png\")`."
        ));
    }
    hint
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionNote {
    FencedBlock,
    WholeText,
}

/// An executable program pulled out of a model reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateProgram {
    pub source: String,
    pub origin_stage: Stage,
    pub extraction_note: ExtractionNote,
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

fn lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l))
}

fn trim_blank_lines(lines: &[&str]) -> String {
    let start = lines.iter().position(|l| !l.trim().is_empty());
    let end = lines.iter().rposition(|l| !l.trim().is_empty());
    match (start, end) {
        (Some(s), Some(e)) => lines[s..=e].join("\n"),
        _ => String::new(),
    }
}

/// All fenced blocks, concatenated in order; the whole reply if there are
/// none or they are all empty. An unterminated fence runs to the end of the
/// reply. Fence lines never appear in the result.
pub fn extract_program(model_text: &str, origin: Stage) -> Result<CandidateProgram, PromptError> {
    if model_text.trim().is_empty() {
        return Err(PromptError::EmptyReply);
    }
    let mut fenced: Vec<&str> = Vec::new();
    let mut inside = false;
    let mut saw_fence = false;
    for line in lines(model_text) {
        if is_fence(line) {
            inside = !inside;
            saw_fence = true;
            continue;
        }
        if inside {
            fenced.push(line);
        }
    }

    if saw_fence {
        let source = trim_blank_lines(&fenced);
        if !source.is_empty() {
            return Ok(CandidateProgram { source, origin_stage: origin, extraction_note: ExtractionNote::FencedBlock });
        }
    }
    let all: Vec<&str> = lines(model_text).filter(|l| !is_fence(l)).collect();
    let source = trim_blank_lines(&all);
    if source.is_empty() {
        return Err(PromptError::EmptyReply);
    }
    Ok(CandidateProgram { source, origin_stage: origin, extraction_note: ExtractionNote::WholeText })
}
