//! Agents and the in-process harness that polls them.
//!
//! [`BaselineAgent`] is a deterministic rule-based ReAct-style policy: it
//! reads the focus service's logs, follows the first failing downstream
//! host, inspects its service definition and either reports or repairs what
//! it finds. It keeps no state of its own; every decision is recomputed
//! from the briefing and the history.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cluster::Millis;
use crate::evaluation::EvaluationReport;
use crate::orchestrator::{Action, ActionRecord, Session, SessionStatus};

/// One thought/action pair produced by an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub thought: String,
    pub action: Action,
}

pub trait Agent {
    /// Picks the next action given the briefing and everything so far.
    fn next_step(&mut self, briefing: &str, history: &[ActionRecord]) -> AgentStep;

    /// Set once the agent can no longer produce steps (e.g. its transport
    /// failed); the harness then abandons the session.
    fn failure(&self) -> Option<String> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed(EvaluationReport),
    Abandoned { reason: String },
}

/// Polls `agent` until it submits. At most `budget` non-submit actions are
/// executed; the session is abandoned when the agent wants more.
pub fn run_agent(session: &mut Session, agent: &mut dyn Agent, budget: usize) -> RunOutcome {
    loop {
        match session.status() {
            SessionStatus::Open => {}
            SessionStatus::Abandoned => {
                return RunOutcome::Abandoned {
                    reason: "session abandoned".into(),
                }
            }
            _ => {
                return RunOutcome::Completed(session.report().cloned().expect("closed sessions carry a report"))
            }
        }
        let step = agent.next_step(session.briefing(), session.transcript());
        if let Some(reason) = agent.failure() {
            session.abandon();
            return RunOutcome::Abandoned { reason };
        }
        let used = session.transcript().len();
        if used > budget || (used == budget && step.action.api != "submit") {
            session.abandon();
            return RunOutcome::Abandoned {
                reason: format!("step budget of {budget} exhausted"),
            };
        }
        session
            .submit_action(step.action, Some(step.thought))
            .expect("session checked open");
    }
}

/// Replays a fixed list of steps, then submits an empty solution.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    steps: Vec<AgentStep>,
}

impl ScriptedAgent {
    pub fn new(steps: Vec<AgentStep>) -> Self {
        ScriptedAgent { steps }
    }
}

impl Agent for ScriptedAgent {
    fn next_step(&mut self, _briefing: &str, history: &[ActionRecord]) -> AgentStep {
        self.steps.get(history.len()).cloned().unwrap_or_else(|| AgentStep {
            thought: "Script finished.".into(),
            action: Action::new("submit", json!({"solution": {}})),
        })
    }
}

pub const BASELINE_STEP_BUDGET: usize = 15;

#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineAgent;

#[derive(Debug, Clone, Default)]
struct Briefing {
    namespace: String,
    task: String,
    focus: String,
}

fn parse_briefing(text: &str) -> Briefing {
    let mut b = Briefing::default();
    for line in text.lines() {
        let line = line.trim();
        if let Some(v) = line.strip_prefix("Namespace: ") {
            b.namespace = v.to_string();
        } else if let Some(v) = line.strip_prefix("Task: ") {
            b.task = v.to_string();
        } else if let Some(v) = line.strip_prefix("Focus service: ") {
            b.focus = v.to_string();
        }
    }
    b
}

/// `(host, port)` from the first downstream-failure log line.
fn failing_host(logs: &str) -> Option<(String, String)> {
    logs.lines()
        .filter(|l| {
            l.contains("Connection refused") || l.contains("timed out") || l.contains("Connection reset")
        })
        .find_map(|l| {
            let rest = &l[l.find("<Host: ")? + 7..];
            let (host, rest) = rest.split_once(" Port: ")?;
            let (port, _) = rest.split_once('>')?;
            Some((host.to_string(), port.to_string()))
        })
}

/// `(Port, TargetPort)` from `kubectl describe svc` output.
fn describe_ports(text: &str) -> Option<(String, String)> {
    let field = |key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(key))
            .and_then(|v| v.split_whitespace().next())
            .map(|v| v.trim_end_matches("/TCP").to_string())
    };
    Some((field("Port:")?, field("TargetPort:")?))
}

fn shell(command: String) -> Action {
    Action::new("exec_shell", json!({ "command": command }))
}

fn submit(solution: Value) -> Action {
    Action::new("submit", json!({ "solution": solution }))
}

fn step(thought: impl Into<String>, action: Action) -> AgentStep {
    AgentStep {
        thought: thought.into(),
        action,
    }
}

fn command_of(r: &ActionRecord) -> Option<&str> {
    (r.action.api == "exec_shell")
        .then(|| r.action.args.get("command").and_then(Value::as_str))
        .flatten()
}

impl BaselineAgent {
    fn repair(&self, b: &Briefing, history: &[ActionRecord]) -> Option<AgentStep> {
        let last = history.last()?;
        let out = &last.observation.output;
        if !last.observation.error || !out.starts_with("Error: namespaces \"") {
            return None;
        }
        let bad = out.split('"').nth(1)?;
        if bad == b.namespace {
            return None;
        }
        let args = serde_json::to_string(&last.action.args)
            .ok()?
            .replace(bad, &b.namespace);
        let retry = Action {
            api: last.action.api.clone(),
            args: serde_json::from_str(&args).ok()?,
        };
        if history.iter().any(|r| r.action == retry) {
            return None;
        }
        Some(step(
            format!("Namespace \"{bad}\" does not exist; the deployment lives in \"{}\". Retrying with the right namespace.", b.namespace),
            retry,
        ))
    }
}

impl Agent for BaselineAgent {
    fn next_step(&mut self, briefing: &str, history: &[ActionRecord]) -> AgentStep {
        let b = parse_briefing(briefing);
        let (ns, focus) = (b.namespace.as_str(), b.focus.as_str());
        let fallback = || {
            step(
                "I have used my step budget without a conclusive finding; submitting a negative result.",
                submit(json!({"anomalous": false, "services": []})),
            )
        };
        if history.len() >= BASELINE_STEP_BUDGET {
            return fallback();
        }
        if let Some(s) = self.repair(&b, history) {
            return s;
        }

        let Some(first_logs) = history
            .iter()
            .find(|r| r.action.api == "get_logs" && !r.observation.error)
        else {
            return step(
                format!("Start by reviewing the recent logs of {focus} for errors, warnings or anything else out of the ordinary."),
                Action::new("get_logs", json!({"service": focus, "namespace": ns})),
            );
        };

        let Some((host, port)) = failing_host(&first_logs.observation.output) else {
            return match b.task.as_str() {
                "mitigate" => step(
                    "The logs show no failing downstream calls, so there is nothing to fix.",
                    submit(json!({})),
                ),
                "localize" => fallback(),
                _ => step(
                    "The logs show no errors; nothing points to an anomaly.",
                    submit(json!({"anomalous": false, "services": []})),
                ),
            };
        };

        let describe_cmd = format!("kubectl describe svc {host} -n {ns}");
        let Some(described) = history
            .iter()
            .find(|r| command_of(r) == Some(describe_cmd.as_str()))
        else {
            return step(
                format!("{focus} cannot complete calls to {host} on port {port}. {host} may be down or its service may be misconfigured; inspect its service definition."),
                shell(describe_cmd),
            );
        };
        if described.observation.error {
            return fallback();
        }
        let mismatch = describe_ports(&described.observation.output).filter(|(p, t)| p != t);
        let mut suspects = vec![host.clone()];
        if focus != host {
            suspects.push(focus.to_string());
        }

        match b.task.as_str() {
            "detect" => {
                let why = match &mismatch {
                    Some((p, t)) => format!("{host} exposes port {p} but forwards to targetPort {t}, which explains the failed calls from {focus}."),
                    None => format!("Calls from {focus} to {host} are failing."),
                };
                return step(
                    format!("{why} Reporting an anomaly rooted at {host}."),
                    submit(json!({"anomalous": true, "services": suspects})),
                );
            }
            "localize" => {
                return step(
                    format!("The failures originate at {host}; reporting it as the faulty service."),
                    submit(json!({"services": [host]})),
                );
            }
            _ => {}
        }

        // mitigate: fix, then verify from the moment of the fix
        let fix = match &mismatch {
            Some((p, t)) => {
                let patch = format!(
                    "kubectl patch service {host} -n {ns} --type='json' -p='[{{\"op\":\"replace\",\"path\":\"/spec/ports/0/targetPort\",\"value\":{p}}}]'"
                );
                (
                    format!("{host} listens on port {p} but its targetPort is {t}, so traffic goes to the wrong port. Point targetPort back at {p}."),
                    patch,
                )
            }
            None => (
                format!("The service definition of {host} looks consistent, so the pods themselves are the likely problem. Restart the deployment."),
                format!("kubectl rollout restart deployment/{host} -n {ns}"),
            ),
        };
        let Some(fixed_at) = history
            .iter()
            .find(|r| command_of(r) == Some(fix.1.as_str()) && !r.observation.error)
            .map(|r| r.sim_time_ms)
        else {
            if mismatch.is_none() && !history.iter().any(|r| command_of(r).is_some_and(|c| c.starts_with("kubectl get pods"))) {
                return step(
                    format!("Check the pods of {host} before acting."),
                    shell(format!("kubectl get pods -n {ns}")),
                );
            }
            return step(fix.0, shell(fix.1));
        };
        // requests at the instant of the fix were served before it
        let from: Millis = fixed_at + 1;
        let verify = history.iter().find(|r| {
            r.action.api == "get_logs" && r.action.args.get("from_ms").and_then(Value::as_u64) == Some(from)
        });
        match verify {
            None => step(
                format!("Confirm that {focus} stopped logging failed calls since the change."),
                Action::new("get_logs", json!({"service": focus, "namespace": ns, "from_ms": from})),
            ),
            Some(r) if failing_host(&r.observation.output).is_none() => step(
                "No new failed calls since the fix; submitting.",
                submit(json!({})),
            ),
            Some(_) => step(
                "Failures continue after the fix; submitting what I have.",
                submit(json!({})),
            ),
        }
    }
}
