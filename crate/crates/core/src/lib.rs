//! Simulated microservice cloud for benchmarking operations agents.
//!
//! The pieces, bottom up: [`cluster`] holds topology and mutable config,
//! [`workload`] and [`fault`] generate what happens to it, [`engine`] runs
//! it and writes [`telemetry`], [`orchestrator`] exposes it to agents,
//! [`evaluation`] scores sessions and [`agents`] ships a baseline.

pub mod agents;
pub mod cluster;
pub mod engine;
pub mod evaluation;
pub mod fault;
pub mod orchestrator;
pub mod scenario;
pub mod shell;
pub mod telemetry;
pub mod workload;

pub use agents::{run_agent, Agent, AgentStep, BaselineAgent, RunOutcome, ScriptedAgent};
pub use evaluation::{judge, EvaluationReport, Transcript};
pub use orchestrator::{Action, ActionRecord, Observation, Problem, ProblemCache, Session, SessionStatus};
pub use scenario::{Scenario, TaskKind};
