//! Answer grading: exact, numeric, expression-sampling and artifact checks,
//! with a three-valued verdict. Anything the comparator cannot decide is
//! `needs_review` and goes to the adjudication queue.

mod adjudicate;
pub mod expr;

pub use adjudicate::{adjudicate, AdjudicationError, Console, Decision};

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnswerKind, AnswerSpec};
use crate::sandbox::{ExecutionResult, ExecutionStatus};
use expr::Expr;

pub const DEFAULT_SAMPLES: usize = 64;
/// Fixed seed for expression sampling inside [`grade`].
pub const GRADER_SEED: u64 = 0x5eed_2024;
const SAMPLE_LO: f64 = -3.0;
const SAMPLE_HI: f64 = 3.0;
const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictValue {
    Correct,
    Incorrect,
    NeedsReview,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Numeric,
    ExpressionSampling,
    Artifact,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: VerdictValue,
    pub method: Method,
    pub detail: String,
}

impl Verdict {
    pub fn new(value: VerdictValue, method: Method, detail: impl Into<String>) -> Self {
        Self { value, method, detail: detail.into() }
    }

    pub fn correct(method: Method, detail: impl Into<String>) -> Self {
        Self::new(VerdictValue::Correct, method, detail)
    }

    pub fn incorrect(method: Method, detail: impl Into<String>) -> Self {
        Self::new(VerdictValue::Incorrect, method, detail)
    }

    pub fn review(method: Method, detail: impl Into<String>) -> Self {
        Self::new(VerdictValue::NeedsReview, method, detail)
    }

    pub fn is_correct(&self) -> bool {
        self.value == VerdictValue::Correct
    }
}

/// `|a - b| <= absolute + relative * |b|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub relative: f64,
    pub absolute: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self { relative: 1e-4, absolute: 1e-6 }
    }
}

impl TolerancePolicy {
    pub fn new(relative: f64, absolute: f64) -> Result<Self, String> {
        if !(relative >= 0.0 && absolute >= 0.0) || !relative.is_finite() || !absolute.is_finite() {
            return Err(format!("tolerances must be finite and non-negative, got ({relative}, {absolute})"));
        }
        if relative == 0.0 && absolute == 0.0 {
            return Err("relative and absolute tolerance cannot both be zero".into());
        }
        Ok(Self { relative, absolute })
    }

    /// Candidate against a reference value.
    pub fn matches(&self, candidate: f64, expected: f64) -> bool {
        (candidate - expected).abs() <= self.absolute + self.relative * expected.abs()
    }

    /// Order-independent variant used when neither side is the reference.
    pub fn matches_symmetric(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.absolute + self.relative * a.abs().max(b.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Equivalence {
    Equivalent,
    NotEquivalent,
    /// Too few points where both sides are finite.
    Undecided,
}

/// Randomized equivalence test: both expressions are evaluated at
/// `n_samples` points drawn uniformly from `[-3, 3]` per variable. A point
/// where either side is non-finite is redrawn, at most ten times.
pub fn expr_equiv(a: &Expr, b: &Expr, n_samples: usize, tol: TolerancePolicy, seed: u64) -> Equivalence {
    let vars: BTreeSet<String> = a.variables().union(&b.variables()).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = BTreeMap::new();
    let mut valid = 0;

    for _ in 0..n_samples.max(1) {
        for _ in 0..MAX_RESAMPLES {
            for v in &vars {
                env.insert(v.clone(), rng.gen_range(SAMPLE_LO..=SAMPLE_HI));
            }
            let (va, vb) = (a.eval(&env), b.eval(&env));
            if !va.is_finite() || !vb.is_finite() {
                continue;
            }
            if !tol.matches_symmetric(va, vb) {
                return Equivalence::NotEquivalent;
            }
            valid += 1;
            break;
        }
    }
    if valid < n_samples.max(1) {
        Equivalence::Undecided
    } else {
        Equivalence::Equivalent
    }
}

/// Drops `Eq(lhs, rhs)` wrappers and `lhs = ` prefixes, keeping the
/// right-hand side.
fn strip_equation(text: &str) -> &str {
    let t = text.trim();
    if let Some(inner) = t.strip_prefix("Eq(").and_then(|s| s.strip_suffix(')')) {
        let mut depth = 0i32;
        for (i, ch) in inner.char_indices() {
            match ch {
                '(' | '[' | '{' => depth += 1,
                ')' | ']' | '}' => depth -= 1,
                ',' if depth == 0 => return inner[i + 1..].trim(),
                _ => {}
            }
        }
    }
    match t.rfind('=') {
        Some(i) => t[i + 1..].trim(),
        None => t,
    }
}

fn parse_integer(text: &str) -> Option<BigInt> {
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let compact = compact.strip_prefix('+').unwrap_or(&compact);
    BigInt::from_str(compact).ok()
}

fn parse_number(text: &str) -> Option<f64> {
    let t = text.trim();
    if let Ok(v) = t.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    Expr::parse(t).ok()?.eval_const()
}

fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn grade_integer(candidate: &str, expected: &str) -> Verdict {
    let Some(want) = parse_integer(expected) else {
        return Verdict::review(Method::Exact, format!("expected value {expected:?} is not an integer"));
    };
    let candidate = strip_equation(candidate);
    if let Some(got) = parse_integer(candidate) {
        return if got == want {
            Verdict::correct(Method::Exact, format!("{got} == {want}"))
        } else {
            Verdict::incorrect(Method::Exact, format!("{got} != {want}"))
        };
    }
    // coercion: 24.0, 2**11 - 1, 14/1
    match parse_number(candidate) {
        Some(v) if v.fract() == 0.0 && v.abs() < 9.007_199_254_740_992e15 => {
            let got = BigInt::from(v as i64);
            if got == want {
                Verdict::correct(Method::Numeric, format!("{candidate} coerced to {got}"))
            } else {
                Verdict::incorrect(Method::Numeric, format!("{candidate} coerced to {got} != {want}"))
            }
        }
        Some(v) => Verdict::incorrect(Method::Numeric, format!("{v} is not an integer, expected {want}")),
        None => Verdict::review(Method::Exact, format!("cannot read {candidate:?} as an integer")),
    }
}

fn grade_real(candidate: &str, expected: &str, tol: TolerancePolicy) -> Verdict {
    let Some(want) = parse_number(expected) else {
        return Verdict::review(Method::Numeric, format!("expected value {expected:?} is not numeric"));
    };
    let candidate = strip_equation(candidate);
    match parse_number(candidate) {
        Some(got) if tol.matches(got, want) => Verdict::correct(Method::Numeric, format!("{got} ~= {want}")),
        Some(got) => Verdict::incorrect(Method::Numeric, format!("{got} vs {want}")),
        None => Verdict::review(Method::Numeric, format!("cannot read {candidate:?} as a number")),
    }
}

fn grade_expression(candidate: &str, spec: &AnswerSpec, tol: TolerancePolicy) -> Verdict {
    let expected = match Expr::parse(&spec.value) {
        Ok(e) => e,
        Err(err) => return Verdict::review(Method::ExpressionSampling, format!("expected expression: {err}")),
    };
    let candidate = strip_equation(candidate);
    let got = match Expr::parse(candidate) {
        Ok(e) => e,
        Err(err) => return Verdict::review(Method::ExpressionSampling, format!("candidate {candidate:?}: {err}")),
    };
    let allowed: BTreeSet<String> = match &spec.variables {
        Some(vs) => vs.iter().cloned().collect(),
        None => expected.variables(),
    };
    if let Some(extra) = got.variables().difference(&allowed).next() {
        return Verdict::review(Method::ExpressionSampling, format!("candidate uses unexpected symbol {extra:?}"));
    }
    match expr_equiv(&got, &expected, DEFAULT_SAMPLES, tol, GRADER_SEED) {
        Equivalence::Equivalent => Verdict::correct(Method::ExpressionSampling, format!("{candidate} == {}", spec.value)),
        Equivalence::NotEquivalent => Verdict::incorrect(Method::ExpressionSampling, format!("{candidate} != {}", spec.value)),
        Equivalence::Undecided => Verdict::review(Method::ExpressionSampling, "too few finite sample points"),
    }
}

/// Splits a tuple-ish rendering into elements. Brackets and common
/// container wrappers are dropped; `x_1 = 1` style labels are removed.
fn tuple_elements(text: &str) -> Vec<String> {
    let mut cleaned = text.to_string();
    for wrapper in ["Matrix", "array", "tuple", "vector"] {
        cleaned = cleaned.replace(wrapper, " ");
    }
    let cleaned: String = cleaned
        .chars()
        .map(|c| if matches!(c, '(' | ')' | '[' | ']' | '{' | '}') { ' ' } else { c })
        .collect();
    // glue `lhs = rhs` so whitespace splitting keeps the pair together
    let mut glued = cleaned.clone();
    while glued.contains(" =") || glued.contains("= ") {
        glued = glued.replace(" =", "=").replace("= ", "=");
    }
    glued
        .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.rsplit('=').next().unwrap_or(s).to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn grade_element(candidate: &str, expected: &str, tol: TolerancePolicy) -> Verdict {
    if let (Some(a), Some(b)) = (parse_integer(candidate), parse_integer(expected)) {
        return if a == b {
            Verdict::correct(Method::Exact, "")
        } else {
            Verdict::incorrect(Method::Exact, format!("{a} != {b}"))
        };
    }
    if let (Some(a), Some(b)) = (parse_number(candidate), parse_number(expected)) {
        return if tol.matches(a, b) {
            Verdict::correct(Method::Numeric, "")
        } else {
            Verdict::incorrect(Method::Numeric, format!("{a} vs {b}"))
        };
    }
    if let (Ok(a), Ok(b)) = (Expr::parse(candidate), Expr::parse(expected)) {
        return match expr_equiv(&a, &b, DEFAULT_SAMPLES, tol, GRADER_SEED) {
            Equivalence::Equivalent => Verdict::correct(Method::ExpressionSampling, ""),
            Equivalence::NotEquivalent => Verdict::incorrect(Method::ExpressionSampling, format!("{candidate} != {expected}")),
            Equivalence::Undecided => Verdict::review(Method::ExpressionSampling, format!("cannot compare {candidate}")),
        };
    }
    if normalize_text(candidate) == normalize_text(expected) {
        Verdict::correct(Method::Exact, "")
    } else {
        Verdict::incorrect(Method::Exact, format!("{candidate:?} != {expected:?}"))
    }
}

fn grade_tuple(candidate: &str, expected: &str, tol: TolerancePolicy) -> Verdict {
    let want = tuple_elements(expected);
    let got = tuple_elements(candidate);
    if want.is_empty() {
        return Verdict::review(Method::Exact, "expected tuple is empty");
    }
    if got.len() != want.len() {
        return Verdict::incorrect(Method::Exact, format!("{} elements, expected {}", got.len(), want.len()));
    }
    let mut method = Method::Exact;
    for (i, (g, w)) in got.iter().zip(&want).enumerate() {
        let v = grade_element(g, w, tol);
        if v.method != Method::Exact {
            method = v.method;
        }
        match v.value {
            VerdictValue::Correct => {}
            _ => return Verdict::new(v.value, v.method, format!("element {i}: {}", v.detail)),
        }
    }
    Verdict::correct(method, format!("{} elements match", want.len()))
}

/// Grades one execution against the expected answer. Never fails: shapes
/// that cannot be compared come back as `needs_review`.
pub fn grade(answer_text: &str, result: &ExecutionResult, spec: &AnswerSpec, tol: TolerancePolicy) -> Verdict {
    if spec.kind == AnswerKind::Plot {
        return if result.artifacts.is_empty() {
            Verdict::incorrect(Method::Artifact, "no artifact written")
        } else {
            Verdict::correct(Method::Artifact, format!("{} artifact(s)", result.artifacts.len()))
        };
    }
    if result.status != ExecutionStatus::Ok {
        return Verdict::incorrect(Method::Exact, format!("execution status {}", result.status.as_str()));
    }
    if answer_text.trim().is_empty() {
        return Verdict::incorrect(Method::Exact, "no answer produced");
    }

    let tol = match spec.tolerance_override {
        Some((relative, absolute)) => TolerancePolicy { relative, absolute },
        None => tol,
    };
    match spec.kind {
        AnswerKind::Integer => grade_integer(answer_text, &spec.value),
        AnswerKind::Real => grade_real(answer_text, &spec.value, tol),
        AnswerKind::Expression => grade_expression(answer_text, spec, tol),
        AnswerKind::Tuple => grade_tuple(answer_text, &spec.value, tol),
        AnswerKind::Text => {
            if normalize_text(answer_text) == normalize_text(&spec.value) {
                Verdict::correct(Method::Exact, "text match")
            } else {
                Verdict::incorrect(Method::Exact, "text differs")
            }
        }
        AnswerKind::Plot => unreachable!("handled above"),
    }
}
