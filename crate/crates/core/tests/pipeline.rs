mod common;

use std::fs;

use common::*;
use reams_core::dataset::{AnswerKind, Source};
use reams_core::grader::{Method, Verdict, VerdictValue};
use reams_core::modelclient::ScriptedBackend;
use reams_core::pipeline::{
    resume_run, Engine, GradingPolicy, JournalEntry, PipelineError, RunState, RunStore, Stage, PROOF_SKIP_DETAIL,
};
use reams_core::promptkit::PromptSet;
use reams_core::sandbox::{ExecutionStatus, StubExecutor};

fn three() -> Scenario {
    let [a, b, c] = sources();
    let mut s = Scenario::new(vec![int_problem("1", a, "4"), int_problem("2", b, "9"), int_problem("3", c, "16")]);
    s.zero_shot("1", "4").zero_shot("2", "9").zero_shot("3", "15").reasoning("3", "16");
    s
}

#[test]
fn three_problem_run_solves_third_with_reasoning() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let s = three();
    let model = Counting::new(s.model.clone());
    let (state, _) = s.run(&store, "r1", &scripted_config(), &model).unwrap();
    assert_eq!(state.s_zero, map(&[("1", true), ("2", true), ("3", false)]));
    assert_eq!(state.s_reason, map(&[("3", true)]));
    let outcomes = state.outcomes(&s.dataset);
    assert_eq!(outcomes.iter().filter(|o| o.combined()).count(), 3);
    assert_eq!(model.calls(), 5);

    let stored = store.load("r1").unwrap();
    assert_eq!(stored.journal.entries.len(), 4);
    assert!(stored.journal.corrupt.is_none());
    let r = state.rounds("3");
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].stage, Stage::Reasoning(1));
    assert!(r[0].reasoning_text.as_deref().unwrap().contains("step by step"));
    assert!(r[0].reasoning_request_digest.is_some());
    for rec in &state.attempts {
        assert_eq!(rec.reasoning_text.is_some(), rec.stage != Stage::ZeroShot);
        assert!(rec.finished_at >= rec.started_at);
    }
}

#[test]
fn run_store_layout() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let s = three();
    s.run(&store, "layout", &scripted_config(), &s.model).unwrap();
    let run = dir.path().join("layout");
    for f in ["journal.jsonl", "config.json", "dataset.jsonl"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["max_reasoning_rounds"], 1);
    assert_eq!(cfg["code_backend"]["api_key_env"], "REAMS_API_KEY");
    assert!(matches!(s.run(&store, "layout", &scripted_config(), &s.model), Err(PipelineError::RunExists(_))));
}

#[test]
fn empty_dataset_makes_no_calls() {
    let dir = tempfile::tempdir().unwrap();
    let s = Scenario::new(vec![]);
    let model = Counting::new(s.model.clone());
    let (state, _) = s.run(&RunStore::new(dir.path()), "empty", &scripted_config(), &model).unwrap();
    assert!(state.s_zero.is_empty() && state.s_reason.is_empty() && state.attempts.is_empty());
    assert_eq!(model.calls(), 0);
    let stored = RunStore::new(dir.path()).load("empty").unwrap();
    assert!(stored.dataset.is_empty());
}

#[test]
fn proof_problems_are_skipped_without_calls() {
    let dir = tempfile::tempdir().unwrap();
    let mut problems = vec![int_problem("1", Source::Calculus1801, "1"), int_problem("2", Source::Algebra, "2")];
    for p in &mut problems {
        p.proof_based = true;
    }
    let s = Scenario::new(problems);
    let model = Counting::new(s.model.clone());
    let (state, _) = s.run(&RunStore::new(dir.path()), "proofs", &scripted_config(), &model).unwrap();
    assert_eq!(state.s_zero, map(&[("1", false), ("2", false)]));
    assert!(state.s_reason.is_empty());
    assert_eq!(model.calls(), 0);
    for rec in &state.attempts {
        assert_eq!(rec.verdict.value, VerdictValue::Incorrect);
        assert_eq!(rec.verdict.detail, PROOF_SKIP_DETAIL);
        assert!(rec.request_digest.is_none());
    }
}

#[test]
fn zero_round_budget_skips_stage_two() {
    let dir = tempfile::tempdir().unwrap();
    let s = three();
    let mut cfg = scripted_config();
    cfg.max_reasoning_rounds = 0;
    let model = Counting::new(s.model.clone());
    let (state, _) = s.run(&RunStore::new(dir.path()), "r0", &cfg, &model).unwrap();
    assert!(state.s_reason.is_empty());
    assert_eq!(model.calls(), 3);
    assert!(state.progress(&s.dataset).is_complete());
}

#[test]
fn exhausted_rounds_leave_one_record_each() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Scenario::new(vec![int_problem("1", Source::Algebra, "7")]);
    s.zero_shot("1", "6").reasoning("1", "8");
    let mut cfg = scripted_config();
    cfg.max_reasoning_rounds = 3;
    let (state, _) = s.run(&RunStore::new(dir.path()), "ex", &cfg, &s.model).unwrap();
    assert_eq!(state.s_reason, map(&[("1", false)]));
    let stages: Vec<Stage> = state.rounds("1").iter().map(|r| r.stage).collect();
    assert_eq!(stages, vec![Stage::Reasoning(1), Stage::Reasoning(2), Stage::Reasoning(3)]);
}

#[test]
fn rounds_stop_at_first_success() {
    let dir = tempfile::tempdir().unwrap();
    let s = three();
    let mut cfg = scripted_config();
    cfg.max_reasoning_rounds = 5;
    let (state, _) = s.run(&RunStore::new(dir.path()), "stop", &cfg, &s.model).unwrap();
    assert_eq!(state.rounds("3").len(), 1);
    assert_eq!(state.s_reason, map(&[("3", true)]));
}

#[test]
fn backend_failure_is_recorded_and_run_continues() {
    let dir = tempfile::tempdir().unwrap();
    let s = three();
    let (state, _) = s.run(&RunStore::new(dir.path()), "down", &scripted_config(), &Down).unwrap();
    assert_eq!(state.s_zero, map(&[("1", false), ("2", false), ("3", false)]));
    assert_eq!(state.s_reason, map(&[("1", false), ("2", false), ("3", false)]));
    for rec in &state.attempts {
        assert_eq!(rec.execution.as_ref().unwrap().status, ExecutionStatus::ProtocolError);
        assert!(rec.program.is_none());
    }
}

#[test]
fn unscripted_program_counts_as_failure() {
    let dir = tempfile::tempdir().unwrap();
    let s = three();
    let bare = Scenario { exec: StubExecutor::default(), ..three() };
    let engine = Engine {
        dataset: &s.dataset,
        config: &scripted_config(),
        prompts: &s.prompts,
        code_model: &s.model,
        reason_model: &s.model,
        executor: &bare.exec,
    };
    let cfg = scripted_config();
    let handle = RunStore::new(dir.path()).create("noexec", &cfg, &s.dataset).unwrap();
    let state = engine.run(RunState::empty("noexec", cfg.clone()), &handle).unwrap();
    assert!(state.s_zero.values().all(|v| !v));
    assert!(state.attempts.iter().filter(|r| r.stage == Stage::ZeroShot).all(|r| r.program.is_some()));
}

#[test]
fn store_failure_aborts_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let s = three();
    let cfg = scripted_config();
    let handle = store.create("blocked", &cfg, &s.dataset).unwrap();
    fs::write(dir.path().join("blocked").join("work"), "not a directory").unwrap();
    let err = s.engine(&cfg, &s.model).run(RunState::empty("blocked", cfg.clone()), &handle).unwrap_err();
    assert!(matches!(err, PipelineError::Store { .. }), "{err}");
}

#[test]
fn worker_count_does_not_change_outcomes() {
    let plan = sample_plan();
    let ds = sample13();
    let model = ScriptedBackend::new(hashmap(build_transcript(&ds, &plan)));
    let exec = StubExecutor::new(hashmap(build_executions(&plan)));
    let prompts = PromptSet::default();
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    for workers in [1, 4, 16] {
        let mut cfg = scripted_config();
        cfg.workers = workers;
        let engine =
            Engine { dataset: &ds, config: &cfg, prompts: &prompts, code_model: &model, reason_model: &model, executor: &exec };
        let id = format!("w{workers}");
        let handle = store.create(&id, &cfg, &ds).unwrap();
        let state = engine.run(RunState::empty(id.clone(), cfg.clone()), &handle).unwrap();
        assert_eq!(state.s_zero, expected_s_zero(), "workers={workers}");
        assert_eq!(state.s_reason, expected_s_reason(), "workers={workers}");
        assert_eq!(RunState::from_stored(&store.load(&id).unwrap()).s_zero, state.s_zero);
    }
}

#[test]
fn every_model_call_has_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let s = three();
    let model = Counting::new(s.model.clone());
    let (state, _) = s.run(&RunStore::new(dir.path()), "calls", &scripted_config(), &model).unwrap();
    let digests: usize = state
        .attempts
        .iter()
        .map(|r| r.request_digest.is_some() as usize + r.reasoning_request_digest.is_some() as usize)
        .sum();
    assert_eq!(digests, model.calls());
    let mut seen = model.seen.lock().unwrap().clone();
    let mut recorded: Vec<String> = state
        .attempts
        .iter()
        .flat_map(|r| [r.request_digest.clone(), r.reasoning_request_digest.clone()])
        .flatten()
        .collect();
    seen.sort();
    recorded.sort();
    assert_eq!(seen, recorded);
}

#[test]
fn resume_after_interrupt_only_redoes_missing_attempts() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let s = three();
    let cfg = scripted_config();
    let (full, _) = s.run(&store, "r", &cfg, &s.model).unwrap();

    let journal = dir.path().join("r").join("journal.jsonl");
    let text = fs::read_to_string(&journal).unwrap();
    let zero_lines: Vec<&str> = text.lines().filter(|l| l.contains("\"stage\":\"zero_shot\"")).collect();
    let kept: Vec<&str> = zero_lines.iter().copied().filter(|l| !l.contains("\"problem_id\":\"3\"")).collect();
    assert_eq!(kept.len(), 2);
    let torn = &zero_lines.iter().find(|l| l.contains("\"problem_id\":\"3\"")).unwrap()[..40];
    fs::write(&journal, format!("{}\n{}\n{torn}", kept[0], kept[1])).unwrap();

    let (stored, handle) = store.open("r").unwrap();
    let corrupt = stored.journal.corrupt.clone().unwrap();
    assert_eq!(corrupt.offset as usize, kept[0].len() + kept[1].len() + 2);
    let model = Counting::new(s.model.clone());
    let resumed = resume_run(&s.engine(&cfg, &model), &stored, &handle).unwrap();
    assert_eq!(model.calls(), 3);
    assert_eq!(resumed.s_zero, full.s_zero);
    assert_eq!(resumed.s_reason, full.s_reason);
    let reloaded = store.load("r").unwrap();
    assert!(reloaded.journal.corrupt.is_none());
    assert_eq!(reloaded.journal.entries.len(), 4);
}

#[test]
fn resume_of_finished_run_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let s = three();
    let cfg = scripted_config();
    let (full, _) = s.run(&store, "done", &cfg, &s.model).unwrap();
    let before = fs::read(dir.path().join("done").join("journal.jsonl")).unwrap();
    let (stored, handle) = store.open("done").unwrap();
    let model = Counting::new(s.model.clone());
    let resumed = resume_run(&s.engine(&cfg, &model), &stored, &handle).unwrap();
    assert_eq!(model.calls(), 0);
    assert_eq!(resumed, full);
    assert_eq!(fs::read(dir.path().join("done").join("journal.jsonl")).unwrap(), before);
}

#[test]
fn unknown_run_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    assert!(matches!(store.load("nope"), Err(PipelineError::UnknownRun(_))));
    assert!(matches!(store.open("nope"), Err(PipelineError::UnknownRun(_))));
    assert!(matches!(store.load("../etc"), Err(PipelineError::InvalidRunId(_))));
}

fn review_scenario() -> Scenario {
    let [a, b, c] = sources();
    let mut problems = vec![int_problem("1", a, "5"), int_problem("2", b, "6"), int_problem("3", c, "7")];
    problems[1].answer.kind = AnswerKind::Integer;
    let mut s = Scenario::new(problems);
    s.zero_shot("1", "five").zero_shot("2", "six").zero_shot("3", "7");
    s.reasoning("1", "4").reasoning("2", "6");
    s
}

#[test]
fn review_policy_holds_unclear_answers_out_of_stage_two() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let s = review_scenario();
    let mut cfg = scripted_config();
    cfg.grading_policy = GradingPolicy::Review;
    let (mut state, handle) = s.run(&store, "rev", &cfg, &s.model).unwrap();
    assert_eq!(state.s_zero, map(&[("1", false), ("2", false), ("3", true)]));
    assert!(state.s_reason.is_empty());
    let queue = state.review_queue(&s.dataset);
    assert_eq!(queue.iter().map(|q| q.record.problem_id.as_str()).collect::<Vec<_>>(), ["1", "2"]);
    let progress = state.progress(&s.dataset);
    assert!(progress.is_complete());
    assert_eq!(progress.awaiting_review, 2);

    let verdicts = vec![
        Verdict::new(VerdictValue::Incorrect, Method::Human, "operator: incorrect"),
        Verdict::new(VerdictValue::Correct, Method::Human, "operator: correct"),
    ];
    assert_eq!(state.record_adjudications(&handle, &queue, &verdicts, "tester").unwrap(), 2);
    assert_eq!(state.s_zero, map(&[("1", false), ("2", true), ("3", true)]));
    assert!(state.review_queue(&s.dataset).is_empty());
    assert_eq!(state.progress(&s.dataset).reasoning_pending, 1);

    let reloaded = RunState::from_stored(&store.load("rev").unwrap());
    assert_eq!(reloaded.s_zero, state.s_zero);
    let entries = store.load("rev").unwrap().journal.entries;
    let adj = entries.iter().filter(|e| matches!(e, JournalEntry::Adjudication(_))).count();
    assert_eq!(adj, 2);

    drop(handle);
    let (stored, handle) = store.open("rev").unwrap();
    let resumed = resume_run(&s.engine(&cfg, &s.model), &stored, &handle).unwrap();
    assert_eq!(resumed.s_reason, map(&[("1", false)]));
    assert!(resumed.rounds("2").is_empty());
}

#[test]
fn strict_policy_scores_unclear_answers_as_failures() {
    let dir = tempfile::tempdir().unwrap();
    let s = review_scenario();
    let (state, _) = s.run(&RunStore::new(dir.path()), "strict", &scripted_config(), &s.model).unwrap();
    assert_eq!(state.s_zero, map(&[("1", false), ("2", false), ("3", true)]));
    assert_eq!(state.s_reason, map(&[("1", false), ("2", true)]));
    assert!(state.review_queue(&s.dataset).is_empty());
    let unclear = state.attempts.iter().filter(|r| r.verdict.value == VerdictValue::NeedsReview).count();
    assert_eq!(unclear, 2);
}
