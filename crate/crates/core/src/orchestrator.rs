//! Problems, sessions and the agent-facing API surface.
//!
//! A [`Problem`] is a resolved scenario plus the API catalog offered to the
//! agent. A [`Session`] owns one engine; every agent action is validated,
//! charged simulated time and recorded before the session returns its
//! observation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{ClusterState, Millis};
use crate::engine::{affected_set, Engine, EngineConfig, EngineError};
use crate::evaluation::{self, EvaluationReport};
use crate::fault::ClearedPredicate;
use crate::scenario::{Scenario, ScenarioError, TaskKind};
use crate::shell;
use crate::telemetry::{MetricName, TraceView, Window};
use crate::workload::generate_plan;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("cannot start engine: {0}")]
    Engine(#[from] EngineError),
    #[error("problem {0:?} not found")]
    UnknownProblem(String),
    #[error("session is closed")]
    SessionClosed,
    #[error("session is still open")]
    SessionOpen,
    #[error("cache I/O on {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgType {
    Str,
    Int,
    List,
    Dict,
}

impl ArgType {
    fn label(self) -> &'static str {
        match self {
            ArgType::Str => "str",
            ArgType::Int => "int",
            ArgType::List => "list[str]",
            ArgType::Dict => "dict",
        }
    }

    fn admits(self, v: &Value) -> bool {
        match self {
            ArgType::Str => v.is_string(),
            ArgType::Int => v.as_u64().is_some(),
            ArgType::List => v
                .as_array()
                .is_some_and(|a| a.iter().all(Value::is_string)),
            ArgType::Dict => v.is_object(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ArgType,
    pub required: bool,
    pub doc: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiDoc {
    pub name: String,
    pub doc: String,
    pub args: Vec<ArgSpec>,
}

fn arg(name: &str, ty: ArgType, required: bool, doc: &str) -> ArgSpec {
    ArgSpec {
        name: name.into(),
        ty,
        required,
        doc: doc.into(),
    }
}

/// The standard five-call catalog.
pub fn standard_api_docs() -> Vec<ApiDoc> {
    let service = || arg("service", ArgType::Str, true, "The name of the service.");
    let namespace = || arg("namespace", ArgType::Str, true, "The namespace of the service.");
    let from = || arg("from_ms", ArgType::Int, false, "Start of the time window in simulated ms (inclusive).");
    let to = || arg("to_ms", ArgType::Int, false, "End of the time window in simulated ms (exclusive).");
    vec![
        ApiDoc {
            name: "get_logs".into(),
            doc: "get Kubectl logs for a service.".into(),
            args: vec![
                service(),
                namespace(),
                from(),
                to(),
                arg("limit", ArgType::Int, false, "Maximum number of most recent lines (default 100)."),
            ],
        },
        ApiDoc {
            name: "get_metrics".into(),
            doc: "get Prometheus metrics for a service.".into(),
            args: vec![
                service(),
                namespace(),
                arg(
                    "names",
                    ArgType::List,
                    false,
                    "Metric names; any of requests_total, success_total, errors_total, latency_ms_p50, latency_ms_p95, cpu_millicores, memory_mb (default all).",
                ),
                from(),
                to(),
            ],
        },
        ApiDoc {
            name: "get_traces".into(),
            doc: "get Jaeger traces for a service.".into(),
            args: vec![
                service(),
                namespace(),
                from(),
                to(),
                arg("limit", ArgType::Int, false, "Maximum number of newest traces (default 100)."),
            ],
        },
        ApiDoc {
            name: "exec_shell".into(),
            doc: "Execute any command in a predefined shell.".into(),
            args: vec![arg(
                "command",
                ArgType::Str,
                true,
                "The command to run. Supported: kubectl get pods|svc, kubectl describe svc, kubectl logs, kubectl patch service --type=json, kubectl delete pod, kubectl rollout restart, helm list.",
            )],
        },
        ApiDoc {
            name: "submit".into(),
            doc: "Submit your solution and end the session.".into(),
            args: vec![arg("solution", ArgType::Dict, true, "The solution object described in the instructions.")],
        },
    ]
}

/// Scoring ground truth. Never rendered into anything an agent sees.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub anomalous: bool,
    pub fault_ids: Vec<String>,
    /// Services a fault is injected into.
    pub root_services: BTreeSet<String>,
    pub affected: BTreeSet<String>,
    pub predicates: Vec<ClearedPredicate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub task: TaskKind,
    pub app: String,
    pub namespace: String,
    pub focus_service: String,
    pub api_docs: Vec<ApiDoc>,
    pub scenario: Scenario,
}

/// What `GET /problems` and `list` show.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub id: String,
    pub task: TaskKind,
    pub app: String,
    pub namespace: String,
    pub name: String,
}

/// Content address of a scenario.
pub fn problem_id(scenario: &Scenario) -> String {
    let digest = Sha256::digest(scenario.canonical_json().as_bytes());
    format!("p-{}", &hex::encode(digest)[..16])
}

impl Problem {
    pub fn from_scenario(scenario: Scenario) -> Result<Problem, ScenarioError> {
        scenario.validate()?;
        Ok(Problem {
            id: problem_id(&scenario),
            task: scenario.task,
            app: scenario.topology.app.clone(),
            namespace: scenario.topology.namespace.clone(),
            focus_service: scenario.focus_service.clone(),
            api_docs: standard_api_docs(),
            scenario,
        })
    }

    pub fn summary(&self) -> ProblemSummary {
        ProblemSummary {
            id: self.id.clone(),
            task: self.task,
            app: self.app.clone(),
            namespace: self.namespace.clone(),
            name: self.scenario.name.clone(),
        }
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let topo = self.scenario.topology();
        let mut gt = GroundTruth {
            anomalous: !self.scenario.faults.is_empty(),
            fault_ids: Vec::new(),
            root_services: BTreeSet::new(),
            affected: BTreeSet::new(),
            predicates: Vec::new(),
        };
        for f in &self.scenario.faults {
            gt.fault_ids.push(f.id.clone());
            gt.root_services
                .extend(f.target.services().into_iter().map(str::to_string));
            gt.affected.extend(affected_set(&topo, f));
            gt.predicates.push(f.cleared_predicate());
        }
        gt
    }
}

fn task_text(problem: &Problem) -> (String, String) {
    let focus = &problem.focus_service;
    match problem.task {
        TaskKind::Detect => (
            format!("Inspect the state and telemetry of `{focus}` and its neighbours and decide whether the application is currently misbehaving."),
            r#"When done, call submit with solution {"anomalous": <true|false>, "services": [<names of the services you believe are faulty>]}."#.to_string(),
        ),
        TaskKind::Localize => (
            format!("Something is wrong in the application. Starting from `{focus}`, find the service where the problem originates."),
            r#"When done, call submit with solution {"services": [<names of the faulty services>]}."#.to_string(),
        ),
        TaskKind::Mitigate => (
            format!("Starting from `{focus}`, investigate the application's state and telemetry and bring it back to normal operation by fixing any anomaly you find."),
            r#"Apply your fix with the available APIs, then call submit with solution {} (an optional "summary" string is accepted)."#.to_string(),
        ),
    }
}

/// Renders the agent briefing. Deterministic in the problem.
pub fn render_problem(problem: &Problem) -> Result<String, String> {
    if problem.api_docs.is_empty() {
        return Err("problem has no APIs to offer".into());
    }
    let (description, instructions) = task_text(problem);
    let mut out = String::new();
    out.push_str("You are operating the following deployment:\n");
    out.push_str(&format!("  App: {}\n", problem.app));
    out.push_str(&format!("  Namespace: {}\n", problem.namespace));
    out.push_str(&format!("  Problem: {}\n", problem.id));
    out.push_str(&format!("  Task: {}\n", problem.task));
    out.push_str(&format!("  Focus service: {}\n\n", problem.focus_service));
    out.push_str(&format!("Problem Description. {description}\n\n"));
    out.push_str("Available APIs:\n");
    for api in &problem.api_docs {
        out.push_str(&format!("\n{}: {}\n", api.name, api.doc));
        if !api.args.is_empty() {
            out.push_str("  Args:\n");
            for a in &api.args {
                let optional = if a.required { "" } else { ", optional" };
                out.push_str(&format!("    {} ({}{optional}): {}\n", a.name, a.ty.label(), a.doc));
            }
        }
    }
    out.push_str("\nInstructions:\n");
    out.push_str(&format!("  {instructions}\n"));
    out.push_str("  Respond with exactly one API call per step, as {\"api\": <name>, \"args\": {...}}.\n");
    out.push_str(&format!(
        "  Every call advances simulated time by {} ms.\n",
        problem.scenario.action_latency_ms
    ));
    Ok(out)
}

/// One agent request. `args` is an object of named arguments, or an array
/// of positional ones in documented order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub api: String,
    #[serde(default)]
    pub args: Value,
}

impl Action {
    pub fn new(api: &str, args: Value) -> Self {
        Action {
            api: api.to_string(),
            args,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub output: String,
    pub error: bool,
}

impl Observation {
    fn ok(output: String) -> Self {
        Observation { output, error: false }
    }

    fn err(output: String) -> Self {
        Observation { output, error: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    pub action: Action,
    pub observation: Observation,
    pub sim_time_ms: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Open,
    Solved,
    Failed,
    Abandoned,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marks {
    pub first_correct_detection: Option<Millis>,
    pub mitigation_verified: Option<Millis>,
}

/// Agent-submitted solution, parsed according to the task.
#[derive(Debug, Clone, PartialEq)]
pub enum Solution {
    Detection { anomalous: bool, services: Vec<String> },
    Localization { services: Vec<String> },
    Mitigation,
}

impl Solution {
    pub fn services(&self) -> &[String] {
        match self {
            Solution::Detection { services, .. } | Solution::Localization { services } => services,
            Solution::Mitigation => &[],
        }
    }
}

fn parse_solution(task: TaskKind, v: &Map<String, Value>) -> Result<Solution, String> {
    let services = |required: bool| -> Result<Vec<String>, String> {
        match v.get("services") {
            None if !required => Ok(Vec::new()),
            None => Err("solution needs \"services\"".into()),
            Some(Value::Array(a)) => a
                .iter()
                .map(|x| x.as_str().map(str::to_string).ok_or_else(|| "\"services\" must be a list of strings".to_string()))
                .collect(),
            Some(_) => Err("\"services\" must be a list of strings".into()),
        }
    };
    match task {
        TaskKind::Detect => {
            let anomalous = v
                .get("anomalous")
                .and_then(Value::as_bool)
                .ok_or("solution needs boolean \"anomalous\"")?;
            Ok(Solution::Detection {
                anomalous,
                services: services(false)?,
            })
        }
        TaskKind::Localize => Ok(Solution::Localization { services: services(true)? }),
        TaskKind::Mitigate => Ok(Solution::Mitigation),
    }
}

enum Call {
    Logs { service: String, namespace: String, window: Window, limit: Option<usize> },
    Metrics { service: String, namespace: String, names: Option<Vec<MetricName>>, window: Window },
    Traces { service: String, namespace: String, window: Window, limit: Option<usize> },
    Shell { command: String },
    Submit { solution: Solution },
}

fn validate(docs: &[ApiDoc], task: TaskKind, action: &Action) -> Result<Call, String> {
    let Some(doc) = docs.iter().find(|d| d.name == action.api) else {
        let names: Vec<&str> = docs.iter().map(|d| d.name.as_str()).collect();
        return Err(format!("unknown API \"{}\"; available: {}", action.api, names.join(", ")));
    };
    let bad = |why: String| format!("invalid arguments for {}: {why}", doc.name);
    let args: Map<String, Value> = match &action.args {
        Value::Null => Map::new(),
        Value::Object(m) => m.clone(),
        Value::Array(list) => {
            if list.len() > doc.args.len() {
                return Err(bad(format!("expected at most {} positional arguments, got {}", doc.args.len(), list.len())));
            }
            doc.args
                .iter()
                .zip(list)
                .map(|(spec, v)| (spec.name.clone(), v.clone()))
                .collect()
        }
        _ => return Err(bad("args must be an object or a list".into())),
    };
    for key in args.keys() {
        if !doc.args.iter().any(|a| &a.name == key) {
            return Err(bad(format!("unexpected argument \"{key}\"")));
        }
    }
    for spec in &doc.args {
        match args.get(&spec.name) {
            None if spec.required => return Err(bad(format!("missing required argument \"{}\"", spec.name))),
            Some(v) if !spec.ty.admits(v) => {
                return Err(bad(format!("argument \"{}\" must be of type {}", spec.name, spec.ty.label())))
            }
            _ => {}
        }
    }
    let s = |k: &str| args.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
    let n = |k: &str| args.get(k).and_then(Value::as_u64);
    let window = Window { from: n("from_ms"), to: n("to_ms") };
    let limit = n("limit").map(|l| l as usize);
    Ok(match doc.name.as_str() {
        "get_logs" => Call::Logs { service: s("service"), namespace: s("namespace"), window, limit },
        "get_traces" => Call::Traces { service: s("service"), namespace: s("namespace"), window, limit },
        "get_metrics" => {
            let names = match args.get("names").and_then(Value::as_array) {
                None => None,
                Some(list) => Some(
                    list.iter()
                        .map(|v| v.as_str().unwrap_or_default().parse::<MetricName>().map_err(|e| bad(e.to_string())))
                        .collect::<Result<Vec<_>, _>>()?,
                ),
            };
            Call::Metrics { service: s("service"), namespace: s("namespace"), names, window }
        }
        "exec_shell" => Call::Shell { command: s("command") },
        "submit" => {
            let obj = args.get("solution").and_then(Value::as_object).expect("type-checked");
            Call::Submit { solution: parse_solution(task, obj).map_err(bad)? }
        }
        other => return Err(format!("API \"{other}\" is documented but not implemented")),
    })
}

/// One agent's episode against one problem.
#[derive(Debug, Clone)]
pub struct Session {
    problem: Arc<Problem>,
    ground_truth: GroundTruth,
    seed: u64,
    engine: Engine,
    briefing: String,
    transcript: Vec<ActionRecord>,
    status: SessionStatus,
    marks: Marks,
    solution: Option<Solution>,
    report: Option<EvaluationReport>,
}

impl Session {
    /// Instantiates a fresh environment for the problem. `seed` defaults to
    /// the scenario's.
    pub fn start(problem: Arc<Problem>, seed: Option<u64>) -> Result<Session, OrchestratorError> {
        let topology = Arc::new(problem.scenario.validate()?);
        let seed = seed.unwrap_or(problem.scenario.seed);
        let plan = generate_plan(&problem.scenario.workload.with_seed(seed));
        let mut engine = Engine::new(
            ClusterState::new(topology),
            plan,
            &problem.scenario.faults,
            seed,
            EngineConfig::default(),
        )?;
        engine.run(0);
        let briefing = render_problem(&problem).map_err(ScenarioError::Parse)?;
        Ok(Session {
            ground_truth: problem.ground_truth(),
            problem,
            seed,
            engine,
            briefing,
            transcript: Vec::new(),
            status: SessionStatus::Open,
            marks: Marks::default(),
            solution: None,
            report: None,
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.ground_truth
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn briefing(&self) -> &str {
        &self.briefing
    }

    pub fn transcript(&self) -> &[ActionRecord] {
        &self.transcript
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn marks(&self) -> Marks {
        self.marks
    }

    pub fn solution(&self) -> Option<&Solution> {
        self.solution.as_ref()
    }

    pub fn report(&self) -> Option<&EvaluationReport> {
        self.report.as_ref()
    }

    pub fn clock(&self) -> Millis {
        self.engine.clock()
    }

    /// Time the primary fault manifested: its first attributable failed
    /// request, else its injection.
    pub fn fault_onset(&self) -> Option<Millis> {
        let id = self.ground_truth.fault_ids.first()?;
        self.engine
            .fault_onset(id)
            .or_else(|| self.engine.fault_activation(id))
    }

    pub fn abandon(&mut self) {
        if self.status == SessionStatus::Open {
            self.status = SessionStatus::Abandoned;
        }
    }

    /// Validates, times and executes one action. Only fails when the session
    /// is already closed; everything else is reported in the observation.
    pub fn submit_action(&mut self, action: Action, thought: Option<String>) -> Result<Observation, OrchestratorError> {
        if self.status != SessionStatus::Open {
            return Err(OrchestratorError::SessionClosed);
        }
        let call = match validate(&self.problem.api_docs, self.problem.task, &action) {
            Ok(call) => call,
            Err(message) => {
                let observation = Observation::err(message);
                self.record(thought, action, observation.clone());
                return Ok(observation);
            }
        };
        let now = self.engine.clock() + self.problem.scenario.action_latency_ms;
        self.engine.run(now);
        let observation = match call {
            Call::Submit { solution } => {
                self.solution = Some(solution);
                Observation::ok("Solution submitted.".into())
            }
            other => self.execute(other),
        };
        self.update_marks(&action);
        self.record(thought, action, observation.clone());
        if self.solution.is_some() {
            let report = evaluation::judge(self)?;
            self.status = if report.success {
                SessionStatus::Solved
            } else {
                SessionStatus::Failed
            };
            self.report = Some(report);
        }
        Ok(observation)
    }

    fn record(&mut self, thought: Option<String>, action: Action, observation: Observation) {
        self.transcript.push(ActionRecord {
            thought,
            action,
            observation,
            sim_time_ms: self.engine.clock(),
        });
    }

    fn lookup(&self, service: &str, namespace: &str) -> Result<(), Observation> {
        let topo = self.engine.state().topology();
        if !topo.namespaces().contains(namespace) {
            return Err(Observation::err(format!("Error: namespaces \"{namespace}\" not found")));
        }
        topo.lookup(service, namespace)
            .map(|_| ())
            .map_err(|e| Observation::err(e.to_string()))
    }

    fn execute(&mut self, call: Call) -> Observation {
        match call {
            Call::Logs { service, namespace, window, limit } => {
                if let Err(o) = self.lookup(&service, &namespace) {
                    return o;
                }
                let lines: Vec<String> = self
                    .engine
                    .store()
                    .logs(&service, &namespace, window, limit)
                    .into_iter()
                    .map(|l| l.text)
                    .collect();
                if lines.is_empty() {
                    Observation::ok(format!("No logs found for {service} in the requested window."))
                } else {
                    Observation::ok(lines.join("\n"))
                }
            }
            Call::Metrics { service, namespace, names, window } => {
                if let Err(o) = self.lookup(&service, &namespace) {
                    return o;
                }
                let series = self.engine.store().metrics(&service, &namespace, names.as_deref(), window);
                let rendered: BTreeMap<&str, Vec<(Millis, f64)>> = series
                    .iter()
                    .map(|(k, v)| (k.as_str(), v.iter().map(|p| (p.ts, p.value)).collect()))
                    .collect();
                Observation::ok(serde_json::to_string(&rendered).expect("metrics serialize"))
            }
            Call::Traces { service, namespace, window, limit } => {
                if let Err(o) = self.lookup(&service, &namespace) {
                    return o;
                }
                let views: Vec<TraceView> = self
                    .engine
                    .store()
                    .traces(&service, window, limit)
                    .into_iter()
                    .filter_map(|t| {
                        t.tree().map(|root| TraceView {
                            trace_id: t.trace_id.clone(),
                            root,
                        })
                    })
                    .collect();
                Observation::ok(serde_json::to_string(&views).expect("traces serialize"))
            }
            Call::Shell { command } => {
                let out = shell::exec(&mut self.engine, &command);
                Observation {
                    output: out.text,
                    error: out.error,
                }
            }
            Call::Submit { .. } => unreachable!("handled by submit_action"),
        }
    }

    fn update_marks(&mut self, action: &Action) {
        let now = self.engine.clock();
        let gt = &self.ground_truth;
        if !gt.anomalous {
            return;
        }
        let onset = self.fault_onset();
        match self.problem.task {
            TaskKind::Detect | TaskKind::Localize => {
                if let Some(solution) = &self.solution {
                    let correct = evaluation::solution_correct(self.problem.task, gt, solution);
                    if correct && self.marks.first_correct_detection.is_none() {
                        self.marks.first_correct_detection = Some(now);
                    }
                }
            }
            TaskKind::Mitigate => {
                let names_root = || {
                    let text = action.args.to_string();
                    gt.root_services.iter().any(|s| text.contains(s.as_str()))
                };
                if self.marks.first_correct_detection.is_none()
                    && action.api != "submit"
                    && onset.is_some_and(|o| now >= o)
                    && names_root()
                {
                    self.marks.first_correct_detection = Some(now);
                }
                let all_armed = gt
                    .fault_ids
                    .iter()
                    .all(|id| self.engine.fault_activation(id).is_some());
                let state = self.engine.state();
                if self.marks.mitigation_verified.is_none()
                    && all_armed
                    && gt.predicates.iter().all(|p| p.holds(state))
                {
                    self.marks.mitigation_verified = Some(now);
                    self.marks.first_correct_detection.get_or_insert(now);
                }
            }
        }
    }
}

/// Directory of `<id>.json` problem documents.
#[derive(Debug, Clone)]
pub struct ProblemCache {
    dir: PathBuf,
}

impl ProblemCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<ProblemCache, OrchestratorError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| OrchestratorError::Cache {
            path: dir.clone(),
            message: e.to_string(),
        })?;
        Ok(ProblemCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    /// Stores the problem under its content address and returns the id.
    pub fn put(&self, problem: &Problem) -> Result<String, OrchestratorError> {
        let path = self.path(&problem.id);
        let text = serde_json::to_string_pretty(problem).expect("problem serializes");
        fs::write(&path, text + "\n").map_err(|e| OrchestratorError::Cache {
            path,
            message: e.to_string(),
        })?;
        Ok(problem.id.clone())
    }

    pub fn get(&self, id: &str) -> Result<Problem, OrchestratorError> {
        let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        let path = self.path(id);
        if !valid || !path.is_file() {
            return Err(OrchestratorError::UnknownProblem(id.to_string()));
        }
        let text = fs::read_to_string(&path).map_err(|e| OrchestratorError::Cache {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let problem: Problem = serde_json::from_str(&text).map_err(|e| OrchestratorError::Cache {
            path,
            message: e.to_string(),
        })?;
        Ok(problem)
    }

    /// Cached problems sorted by id.
    pub fn list(&self) -> Result<Vec<ProblemSummary>, OrchestratorError> {
        let entries = fs::read_dir(&self.dir).map_err(|e| OrchestratorError::Cache {
            path: self.dir.clone(),
            message: e.to_string(),
        })?;
        let mut ids: Vec<String> = entries
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_suffix(".json").map(str::to_string)
            })
            .collect();
        ids.sort();
        ids.iter().map(|id| self.get(id).map(|p| p.summary())).collect()
    }
}
