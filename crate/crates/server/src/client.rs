//! Blocking client for the session protocol and adapters for remote agents.

use std::time::Duration;

use faultbench_core::{Action, ActionRecord, Agent, AgentStep, EvaluationReport, Observation, SessionStatus};
use faultbench_core::orchestrator::ProblemSummary;
use reqwest::blocking::{Client as Http, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::wire::{
    ActionRequest, ActionResponse, CreateSession, ErrorBody, PollRequest, PollResponse, SessionCreated, SubmitRequest,
};

const TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server answered {status}: {message}")]
    Server { status: u16, message: String },
}

fn http() -> Http {
    Http::builder().timeout(TIMEOUT).build().expect("http client builds")
}

fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp.json()?);
    }
    let text = resp.text()?;
    let message = serde_json::from_str::<ErrorBody>(&text).map(|e| e.error).unwrap_or(text);
    Err(ClientError::Server {
        status: status.as_u16(),
        message,
    })
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: Http,
}

impl Client {
    /// `base` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Self {
        Client {
            base: base.trim_end_matches('/').to_string(),
            http: http(),
        }
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        decode(self.http.post(format!("{}{path}", self.base)).json(body).send()?)
    }

    pub fn problems(&self) -> Result<Vec<ProblemSummary>, ClientError> {
        decode(self.http.get(format!("{}/problems", self.base)).send()?)
    }

    pub fn create_session(&self, problem_id: &str, seed: Option<u64>) -> Result<SessionCreated, ClientError> {
        self.post(
            "/sessions",
            &CreateSession {
                problem_id: problem_id.to_string(),
                seed,
            },
        )
    }

    pub fn act(&self, session: &str, req: &ActionRequest) -> Result<ActionResponse, ClientError> {
        self.post(&format!("/sessions/{session}/actions"), req)
    }

    pub fn submit(&self, session: &str, req: &SubmitRequest) -> Result<EvaluationReport, ClientError> {
        self.post(&format!("/sessions/{session}/submit"), req)
    }

    pub fn transcript(&self, session: &str) -> Result<String, ClientError> {
        let resp = self.http.get(format!("{}/sessions/{session}/transcript", self.base)).send()?;
        if resp.status().is_success() {
            return Ok(resp.text()?);
        }
        decode::<String>(resp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExternalOutcome {
    Completed { session_id: String, report: EvaluationReport },
    Abandoned { session_id: Option<String>, reason: String },
}

/// The solution carried by a submit action, if it has the expected shape.
fn solution_of(args: &Value) -> Option<Value> {
    match args {
        Value::Object(m) if m.len() == 1 => m.get("solution").cloned(),
        Value::Array(a) if a.len() == 1 => Some(a[0].clone()),
        _ => None,
    }
}

/// Drives `agent` against a remote session with the same budget rules as
/// the in-process harness. Any transport or protocol failure abandons.
pub fn run_external(
    endpoint: &str,
    problem_id: &str,
    seed: Option<u64>,
    agent: &mut dyn Agent,
    budget: usize,
) -> ExternalOutcome {
    let client = Client::new(endpoint);
    let created = match client.create_session(problem_id, seed) {
        Ok(c) => c,
        Err(e) => {
            return ExternalOutcome::Abandoned {
                session_id: None,
                reason: e.to_string(),
            }
        }
    };
    let sid = created.session_id;
    let abandon = |reason: String| ExternalOutcome::Abandoned {
        session_id: Some(sid.clone()),
        reason,
    };
    let mut history: Vec<ActionRecord> = Vec::new();
    let mut clock = 0;
    loop {
        let step = agent.next_step(&created.briefing, &history);
        if let Some(reason) = agent.failure() {
            return abandon(reason);
        }
        let used = history.len();
        if used > budget || (used == budget && step.action.api != "submit") {
            return abandon(format!("step budget of {budget} exhausted"));
        }
        let thought = Some(step.thought);
        let submitted = (step.action.api == "submit").then(|| solution_of(&step.action.args)).flatten();
        let observation = match submitted {
            Some(solution) => {
                let req = SubmitRequest {
                    solution: solution.clone(),
                    thought: thought.clone(),
                };
                match client.submit(&sid, &req) {
                    Ok(report) => {
                        return ExternalOutcome::Completed {
                            session_id: sid.clone(),
                            report,
                        }
                    }
                    Err(ClientError::Server { status: 400, message }) => Observation { output: message, error: true },
                    Err(e) => return abandon(e.to_string()),
                }
            }
            None => {
                let req = ActionRequest {
                    api: step.action.api.clone(),
                    args: step.action.args.clone(),
                    thought: thought.clone(),
                };
                match client.act(&sid, &req) {
                    Ok(resp) if resp.status == SessionStatus::Open => {
                        clock = resp.sim_time_ms;
                        Observation {
                            output: resp.observation,
                            error: resp.error,
                        }
                    }
                    Ok(resp) => return abandon(format!("session closed unexpectedly ({:?})", resp.status)),
                    Err(e) => return abandon(e.to_string()),
                }
            }
        };
        history.push(ActionRecord {
            thought,
            action: step.action,
            observation,
            sim_time_ms: clock,
        });
    }
}

/// Poll adapter for an agent living behind HTTP: every step POSTs the
/// briefing and history to `url` and expects `{thought, api, args}` back.
#[derive(Debug)]
pub struct HttpAgent {
    url: String,
    http: Http,
    failure: Option<String>,
}

impl HttpAgent {
    pub fn new(url: &str) -> Self {
        HttpAgent {
            url: url.to_string(),
            http: http(),
            failure: None,
        }
    }

    fn poll(&self, briefing: &str, history: &[ActionRecord]) -> Result<PollResponse, ClientError> {
        let body = PollRequest {
            briefing: briefing.to_string(),
            history: history.to_vec(),
        };
        decode(self.http.post(&self.url).json(&body).send()?)
    }
}

impl Agent for HttpAgent {
    fn next_step(&mut self, briefing: &str, history: &[ActionRecord]) -> AgentStep {
        match self.poll(briefing, history) {
            Ok(r) => AgentStep {
                thought: r.thought,
                action: Action::new(&r.api, r.args),
            },
            Err(e) => {
                self.failure = Some(format!("agent endpoint {}: {e}", self.url));
                AgentStep {
                    thought: String::new(),
                    action: Action::new("submit", json!({})),
                }
            }
        }
    }

    fn failure(&self) -> Option<String> {
        self.failure.clone()
    }
}
