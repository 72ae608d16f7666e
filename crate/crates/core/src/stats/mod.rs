//! Success-rate arithmetic and exact (Clopper–Pearson) binomial intervals.

mod special;

pub use special::{beta_inv, gamma, ln_beta, ln_gamma, reg_inc_beta, BETA_INV_MAX_ITER, BETA_INV_TOL};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Source;

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("non-finite input")]
    NonFinite,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
    #[error("group {0} has no problems")]
    EmptyGroup(String),
}

/// `x / n`.
pub fn accuracy(x: u64, n: u64) -> Result<f64, StatsError> {
    if n == 0 {
        return Err(StatsError::Domain("accuracy needs at least one trial".into()));
    }
    if x > n {
        return Err(StatsError::Domain(format!("{x} successes out of {n} trials")));
    }
    Ok(x as f64 / n as f64)
}

/// Exact two-sided `1 - alpha` interval for a binomial proportion.
pub fn clopper_pearson(x: u64, n: u64, alpha: f64) -> Result<(f64, f64), StatsError> {
    if n == 0 || x > n {
        return Err(StatsError::Domain(format!("need 0 <= x <= n and n >= 1, got x={x}, n={n}")));
    }
    if !alpha.is_finite() {
        return Err(StatsError::NonFinite);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (xf, nf) = (x as f64, n as f64);
    let lower = if x == 0 {
        0.0
    } else {
        beta_inv(alpha / 2.0, xf, nf - xf + 1.0)?
    };
    let upper = if x == n {
        1.0
    } else {
        beta_inv(1.0 - alpha / 2.0, xf + 1.0, nf - xf)?
    };
    Ok((lower, upper))
}

/// A row label: one source group or the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Source(Source),
    Overall,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Source(s) => f.write_str(s.label()),
            Group::Overall => f.write_str("overall"),
        }
    }
}

impl Serialize for Group {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Group {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        if raw == "overall" {
            return Ok(Group::Overall);
        }
        raw.parse().map(Group::Source).map_err(serde::de::Error::custom)
    }
}

/// Which success vector a summary counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryKind {
    /// `Σ s_zero / n`
    ZeroShot,
    /// `Σ s_reason / n` with `n` the whole group, as in the reasoning success rate.
    ReasoningOnly,
    /// `Σ (s_zero ∨ s_reason) / n`, the headline figure.
    Combined,
}

impl SummaryKind {
    pub const ALL: [SummaryKind; 3] = [SummaryKind::ZeroShot, SummaryKind::ReasoningOnly, SummaryKind::Combined];

    pub fn title(self) -> &'static str {
        match self {
            SummaryKind::ZeroShot => "Zero-Shot",
            SummaryKind::ReasoningOnly => "Reasoning-Only",
            SummaryKind::Combined => "Zero-Shot+Reasoning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessSummary {
    pub group: Group,
    pub kind: SummaryKind,
    pub n: u64,
    pub x: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
}

impl SuccessSummary {
    pub fn new(group: Group, kind: SummaryKind, x: u64, n: u64, alpha: f64) -> Result<Self, StatsError> {
        let rate = accuracy(x, n)?;
        let (ci_low, ci_high) = clopper_pearson(x, n, alpha)?;
        Ok(Self { group, kind, n, x, rate, ci_low, ci_high, alpha })
    }
}

/// Per-problem success indicators, as folded from a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemOutcome {
    pub problem_id: String,
    pub source: Source,
    pub s_zero: bool,
    /// `None` when the problem never entered the reasoning stage.
    pub s_reason: Option<bool>,
}

impl ProblemOutcome {
    pub fn combined(&self) -> bool {
        self.s_zero || self.s_reason.unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    BySource,
    Overall,
}

/// Three summaries (zero-shot, reasoning-only, combined) per group.
///
/// `BySource` emits groups in the canonical source order and skips labels
/// with no problems; `Overall` fails on an empty run.
pub fn summarize(
    outcomes: &[ProblemOutcome],
    grouping: Grouping,
    alpha: f64,
) -> Result<Vec<SuccessSummary>, StatsError> {
    let mut groups: BTreeMap<Group, Vec<&ProblemOutcome>> = BTreeMap::new();
    match grouping {
        Grouping::Overall => {
            if outcomes.is_empty() {
                return Err(StatsError::EmptyGroup(Group::Overall.to_string()));
            }
            groups.insert(Group::Overall, outcomes.iter().collect());
        }
        Grouping::BySource => {
            for o in outcomes {
                groups.entry(Group::Source(o.source)).or_default().push(o);
            }
        }
    }

    let mut rows = Vec::with_capacity(groups.len() * 3);
    for (group, members) in groups {
        let n = members.len() as u64;
        let zero = members.iter().filter(|o| o.s_zero).count() as u64;
        let reason = members.iter().filter(|o| o.s_reason == Some(true)).count() as u64;
        let combined = members.iter().filter(|o| o.combined()).count() as u64;
        for (kind, x) in SummaryKind::ALL.into_iter().zip([zero, reason, combined]) {
            rows.push(SuccessSummary::new(group, kind, x, n, alpha)?);
        }
    }
    Ok(rows)
}

/// Round half away from zero to `places` decimals.
pub fn round_half_away(v: f64, places: i32) -> f64 {
    let scale = 10f64.powi(places);
    (v * scale).round() / scale
}
