//! The shipped transcript and canned executions must match the plan in
//! `common`. Run with `REAMS_BLESS=1` to rewrite them after a prompt change.

mod common;

use std::collections::BTreeMap;
use std::fs;

use common::*;
use reams_core::sandbox::ExecutionResult;

fn check_or_bless<T: serde::Serialize + serde::de::DeserializeOwned + PartialEq + std::fmt::Debug>(
    path: &std::path::Path,
    want: &T,
) {
    if std::env::var_os("REAMS_BLESS").is_some() {
        fs::write(path, serde_json::to_string_pretty(want).unwrap() + "\n").unwrap();
        return;
    }
    let raw = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}; run with REAMS_BLESS=1", path.display()));
    let have: T = serde_json::from_str(&raw).unwrap();
    assert_eq!(&have, want, "{} is stale; run with REAMS_BLESS=1", path.display());
}

#[test]
fn transcript_matches_plan() {
    let plan = sample_plan();
    let transcript = build_transcript(&sample13(), &plan);
    let rounds = plan.iter().filter(|r| r.round.is_some()).count();
    assert_eq!(transcript.len(), plan.len() + 2 * rounds);
    check_or_bless(&transcript_path(), &transcript);
}

#[test]
fn executions_match_plan() {
    let plan = sample_plan();
    let executions: BTreeMap<String, ExecutionResult> = build_executions(&plan);
    assert_eq!(executions.len(), 18);
    check_or_bless(&executions_path(), &executions);
}

#[test]
fn plan_covers_every_fixture_problem_once() {
    let ds = sample13();
    let plan = sample_plan();
    let ids: Vec<&str> = plan.iter().map(|r| r.id).collect();
    assert_eq!(ids, ds.ids());
    let failures: Vec<&str> = plan.iter().filter(|r| r.round.is_some()).map(|r| r.id).collect();
    let expected_failures: Vec<&str> =
        EXPECTED_S_ZERO.iter().filter(|(_, s)| !s).map(|(id, _)| *id).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let mut sorted = failures.clone();
    sorted.sort();
    assert_eq!(sorted, expected_failures);
}
