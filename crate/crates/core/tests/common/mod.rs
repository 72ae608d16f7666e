#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use reams_core::dataset::{Dataset, Format};
use reams_core::modelclient::{request_digest, ChatModel, ModelError, ModelRequest, ModelResponse, ModelSettings};
use reams_core::pipeline::Stage;
use reams_core::promptkit::{extract_program, PromptSet};
use reams_core::sandbox::{ExecutionResult, ExecutionStatus};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn sample13() -> Dataset {
    Dataset::load(fixtures_dir().join("sample13.jsonl"), Format::Jsonl).unwrap()
}

/// The outcome vectors the transcript was written to produce, worked out by
/// hand from the replies and canned executions below.
pub const EXPECTED_S_ZERO: [(&str, bool); 13] = [
    ("1", true),
    ("10", false),
    ("11", true),
    ("12", false),
    ("13", true),
    ("2", false),
    ("3", true),
    ("4", false),
    ("5", true),
    ("6", true),
    ("7", false),
    ("8", true),
    ("9", true),
];

pub const EXPECTED_S_REASON: [(&str, bool); 5] = [("10", false), ("12", true), ("2", true), ("4", true), ("7", true)];

pub fn expected_s_zero() -> BTreeMap<String, bool> {
    EXPECTED_S_ZERO.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn expected_s_reason() -> BTreeMap<String, bool> {
    EXPECTED_S_REASON.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn ok(answer: &str) -> ExecutionResult {
    ExecutionResult {
        status: ExecutionStatus::Ok,
        answer_text: Some(answer.to_string()),
        stdout: format!("{answer}\n"),
        stderr: String::new(),
        artifacts: Vec::new(),
        wall_time: Duration::from_millis(40),
    }
}

pub fn plotted(answer: &str, file: &str) -> ExecutionResult {
    ExecutionResult { artifacts: vec![file.to_string()], ..ok(answer) }
}

pub fn failed(status: ExecutionStatus, stderr: &str) -> ExecutionResult {
    ExecutionResult { wall_time: Duration::from_millis(40), ..ExecutionResult::failed(status, stderr) }
}

pub struct Round {
    pub reasoning: &'static str,
    pub reply: String,
    pub execution: ExecutionResult,
}

pub struct PlanRow {
    pub id: &'static str,
    pub zero_reply: String,
    pub zero_execution: ExecutionResult,
    pub round: Option<Round>,
}

fn fenced(code: &str) -> String {
    format!("Here is a program that solves the problem.\n\n```python\n{code}\n```\n")
}

/// Scripted replies and canned executions for the 13 sample problems.
pub fn sample_plan() -> Vec<PlanRow> {
    use ExecutionStatus::*;
    vec![
        PlanRow {
            id: "1",
            zero_reply: fenced(
                "import numpy as np\nimport matplotlib.pyplot as plt\nx = np.linspace(-3, 3, 400)\nplt.plot(x, x + np.abs(x))\nplt.savefig(\"plot.png\")\nprint(\"plot.png\")",
            ),
            zero_execution: plotted("plot.png", "plot.png"),
            round: None,
        },
        PlanRow {
            id: "2",
            zero_reply: fenced("print(\"a downward cone with apex at (0, 0, 10)\")"),
            zero_execution: ok("a downward cone with apex at (0, 0, 10)"),
            round: Some(Round {
                reasoning: "The surface z = 10 - r is a cone opening downward with its vertex at height 10; level curves are circles. Draw it as a 3D surface and save the figure.",
                reply: fenced(
                    "import numpy as np\nimport matplotlib.pyplot as plt\nx, y = np.meshgrid(np.linspace(-5, 5, 60), np.linspace(-5, 5, 60))\nax = plt.figure().add_subplot(projection=\"3d\")\nax.plot_surface(x, y, 10 - np.sqrt(x**2 + y**2))\nplt.savefig(\"cone.png\")\nprint(\"cone.png\")",
                ),
                execution: plotted("cone.png", "cone.png"),
            }),
        },
        PlanRow {
            id: "3",
            zero_reply: fenced(
                "import sympy as sp\nx = sp.symbols(\"x\")\ny = sp.Function(\"y\")\nsol = sp.dsolve(y(x).diff(x) + y(x) - 2, y(x), ics={y(0): 0})\nprint(sol.rhs)",
            ),
            zero_execution: ok("2 - 2*exp(-x)"),
            round: None,
        },
        PlanRow {
            id: "4",
            zero_reply: fenced(
                "from sympy import symbols, integrate\nx, y = symbols(\"x y\")\nprint(float(integrate(x**2 + x*y, (x, 0, 1), (y, 0, 1))))",
            ),
            zero_execution: ok("0.5833333333333334"),
            round: Some(Round {
                reasoning: "The density must integrate to one over the unit square. The integral of x^2 + xy is 1/3 + 1/4 = 7/12, so c is the reciprocal, 12/7.",
                reply: fenced(
                    "from sympy import symbols, integrate, Rational\nx, y = symbols(\"x y\")\ntotal = integrate(x**2 + x*y, (x, 0, 1), (y, 0, 1))\nprint(float(1 / total))",
                ),
                execution: ok("1.7142857142857142"),
            }),
        },
        PlanRow {
            id: "5",
            zero_reply: fenced(
                "from sympy import Matrix\nW = Matrix([[1, 4, 7], [2, 5, 8], [3, 6, 9]])\nv = W.nullspace()[0]\nv = v / v[0]\nprint(tuple(v))",
            ),
            zero_execution: ok("(1, -2, 1)"),
            round: None,
        },
        PlanRow {
            id: "6",
            zero_reply: fenced("print(pow(11, -1, 113))"),
            zero_execution: ok("72"),
            round: None,
        },
        PlanRow {
            id: "7",
            zero_reply: fenced("import numpy as np\nv = np.random.rand(d)\nprint(np.linalg.matrix_rank(np.outer(v, v)))"),
            zero_execution: failed(RuntimeError, "NameError: name 'd' is not defined"),
            round: Some(Round {
                reasoning: "Every column of v v^T is a multiple of v, and v is non-zero, so the column space is the line spanned by v. The rank is 1 for any dimension d.",
                reply: fenced(
                    "import numpy as np\nv = np.arange(1, 6, dtype=float)\nprint(np.linalg.matrix_rank(np.outer(v, v)))",
                ),
                execution: ok("1"),
            }),
        },
        PlanRow {
            id: "8",
            zero_reply: fenced("from math import gcd\nprint(gcd(gcd(84, 112), 210))"),
            zero_execution: ok("14"),
            round: None,
        },
        PlanRow {
            id: "9",
            zero_reply: fenced(
                "import math\nN = lambda x: 2 * math.sqrt(x)\nO = lambda x: x ** 2\nprint(N(O(N(O(N(O(3)))))))",
            ),
            zero_execution: ok("24.0"),
            round: None,
        },
        PlanRow {
            id: "10",
            zero_reply: fenced(
                "count = 0\nn = 1000\nwhile True:\n    if sum(map(int, str(n))) == 9 and n % 11 == 0:\n        count += 1\n    n += 1\nprint(count)",
            ),
            zero_execution: failed(Timeout, "killed after 30 s"),
            round: Some(Round {
                reasoning: "A number divisible by 11 has alternating digit sum divisible by 11. With digit sum 9 the two alternating sums add to 9, so they differ by an odd number; count the candidates.",
                reply: fenced(
                    "count = sum(1 for n in range(1000, 10000) if sum(map(int, str(n))) == 9 and (n // 10) % 11 == 0)\nprint(count)",
                ),
                execution: ok("8"),
            }),
        },
        PlanRow {
            id: "11",
            zero_reply: fenced(
                "from itertools import product\nfrom fractions import Fraction\nfrom math import isqrt\nhits = sum(1 for r in product(range(1, 7), repeat=4) if isqrt(r[0]*r[1]*r[2]*r[3]) ** 2 == r[0]*r[1]*r[2]*r[3])\np = Fraction(hits, 6 ** 4)\nprint(p.numerator + p.denominator)",
            ),
            zero_execution: ok("187"),
            round: None,
        },
        PlanRow {
            id: "12",
            zero_reply: fenced("x, y = 7, 3\nprint(3 * x + 4 * y + 40)"),
            zero_execution: ok("73.5"),
            round: Some(Round {
                reasoning: "Complete the squares: (x - 7)^2 + (y - 3)^2 = 64, a circle of radius 8 about (7, 3). The maximum of 3x + 4y is 3*7 + 4*3 + 8*5 = 73.",
                reply: fenced("cx, cy, r = 7, 3, 8\nprint(3 * cx + 4 * cy + r * 5)"),
                execution: ok("73"),
            }),
        },
        PlanRow {
            id: "13",
            zero_reply: fenced(
                "import cmath\nw = cmath.exp(2j * cmath.pi / 11)\nprod = 1\nfor k in range(1, 11):\n    prod *= 2 - w ** k\nprint(round(prod.real, 6))",
            ),
            zero_execution: ok("2047.0"),
            round: None,
        },
    ]
}

/// Digest → reply text for every model call the plan makes, with shipped
/// prompts and default model settings.
pub fn build_transcript(ds: &Dataset, plan: &[PlanRow]) -> BTreeMap<String, String> {
    let prompts = PromptSet::default();
    let code = ModelSettings::code_default();
    let reason = ModelSettings::reasoning_default();
    let mut out = BTreeMap::new();
    for row in plan {
        let p = ds.get(row.id).unwrap();
        out.insert(request_digest(&prompts.build_zero_shot_prompt(p, &code)), row.zero_reply.clone());
        if let Some(r) = &row.round {
            out.insert(request_digest(&prompts.build_reasoning_prompt(p, &reason)), r.reasoning.to_string());
            let req = prompts.build_code_with_reasoning_prompt(p, r.reasoning, &code).unwrap();
            out.insert(request_digest(&req), r.reply.clone());
        }
    }
    out
}

/// Program source → canned execution, keyed the way the stub executor
/// looks them up.
pub fn build_executions(plan: &[PlanRow]) -> BTreeMap<String, ExecutionResult> {
    let mut out = BTreeMap::new();
    for row in plan {
        let src = extract_program(&row.zero_reply, Stage::ZeroShot).unwrap().source;
        out.insert(src, row.zero_execution.clone());
        if let Some(r) = &row.round {
            let src = extract_program(&r.reply, Stage::Reasoning(1)).unwrap().source;
            out.insert(src, r.execution.clone());
        }
    }
    out
}

pub fn transcript_path() -> PathBuf {
    fixtures_dir().join("transcript.json")
}

pub fn executions_path() -> PathBuf {
    fixtures_dir().join("executions.json")
}

/// Wraps a model and counts calls.
pub struct Counting<M> {
    pub inner: M,
    pub calls: AtomicUsize,
    pub seen: std::sync::Mutex<Vec<String>>,
}

impl<M> Counting<M> {
    pub fn new(inner: M) -> Self {
        Self { inner, calls: AtomicUsize::new(0), seen: std::sync::Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<M: ChatModel> ChatModel for Counting<M> {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().unwrap().push(request_digest(req));
        self.inner.complete(req)
    }
}

/// A chat model that fails every call.
pub struct Down;

impl ChatModel for Down {
    fn complete(&self, _req: &ModelRequest) -> Result<ModelResponse, ModelError> {
        Err(ModelError::Transport("connection refused".into()))
    }
}

pub fn hashmap<K: std::hash::Hash + Eq, V>(m: BTreeMap<K, V>) -> HashMap<K, V> {
    m.into_iter().collect()
}

use reams_core::dataset::{AnswerKind, AnswerSpec, Problem, Provenance, Source};
use reams_core::modelclient::ScriptedBackend;
use reams_core::pipeline::{Engine, PipelineError, RunConfig, RunHandle, RunState, RunStore};
use reams_core::sandbox::StubExecutor;

pub fn int_problem(id: &str, source: Source, answer: &str) -> Problem {
    Problem {
        id: id.to_string(),
        source,
        question_text: format!("Problem {id}: compute the value."),
        answer: AnswerSpec::new(AnswerKind::Integer, answer),
        requires_plot: false,
        proof_based: false,
    }
}

pub fn dataset(problems: Vec<Problem>) -> Dataset {
    Dataset::from_problems(problems, Provenance { path: "memory".into(), loaded_at: chrono::Utc::now() }).unwrap()
}

/// Scripted model plus canned executions for hand-built datasets. Every
/// reply is a distinct one-line program that prints the given answer.
pub struct Scenario {
    pub dataset: Dataset,
    pub model: ScriptedBackend,
    pub exec: StubExecutor,
    pub prompts: PromptSet,
}

impl Scenario {
    pub fn new(problems: Vec<Problem>) -> Self {
        Self {
            dataset: dataset(problems),
            model: ScriptedBackend::default(),
            exec: StubExecutor::default(),
            prompts: PromptSet::default(),
        }
    }

    pub fn zero_shot(&mut self, id: &str, answer: &str) -> &mut Self {
        let p = self.dataset.get(id).unwrap().clone();
        let program = format!("# {id} zero-shot\nprint({answer:?})");
        self.model.insert(&self.prompts.build_zero_shot_prompt(&p, &ModelSettings::code_default()), format!("```\n{program}\n```"));
        self.exec.insert(&program, ok(answer));
        self
    }

    pub fn reasoning(&mut self, id: &str, answer: &str) -> &mut Self {
        let p = self.dataset.get(id).unwrap().clone();
        let reasoning = format!("Work through problem {id} step by step.");
        self.model.insert(&self.prompts.build_reasoning_prompt(&p, &ModelSettings::reasoning_default()), reasoning.clone());
        let req = self.prompts.build_code_with_reasoning_prompt(&p, &reasoning, &ModelSettings::code_default()).unwrap();
        let program = format!("# {id} with reasoning\nprint({answer:?})");
        self.model.insert(&req, format!("```python\n{program}\n```"));
        self.exec.insert(&program, ok(answer));
        self
    }

    pub fn engine<'a>(&'a self, config: &'a RunConfig, model: &'a dyn ChatModel) -> Engine<'a> {
        Engine { dataset: &self.dataset, config, prompts: &self.prompts, code_model: model, reason_model: model, executor: &self.exec }
    }

    /// Creates `run_id` in `store` and runs both stages.
    pub fn run(&self, store: &RunStore, run_id: &str, config: &RunConfig, model: &dyn ChatModel) -> Result<(RunState, RunHandle), PipelineError> {
        let handle = store.create(run_id, config, &self.dataset)?;
        let state = self.engine(config, model).run(RunState::empty(run_id, config.clone()), &handle)?;
        Ok((state, handle))
    }
}

pub fn scripted_config() -> RunConfig {
    RunConfig::new(reams_core::modelclient::BackendConfig::scripted("in-memory.json"))
}

pub fn map(pairs: &[(&str, bool)]) -> BTreeMap<String, bool> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn sources() -> [Source; 3] {
    [Source::Calculus1801, Source::Algebra, Source::NumberTheory]
}
