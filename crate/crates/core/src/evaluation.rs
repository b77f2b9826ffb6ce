//! Scoring: success per task, TTD/TTM, efficiency, and transcript export.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::Millis;
use crate::engine::Engine;
use crate::orchestrator::{
    ActionRecord, GroundTruth, OrchestratorError, Problem, Session, Solution,
};
use crate::scenario::{OracleConfig, TaskKind};
use crate::workload::{generate_plan, WorkloadSpec};

/// Per-service health over the post-mitigation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostCheck {
    pub window_ms: Millis,
    pub threshold: f64,
    /// Highest per-service error rate seen in the window.
    pub max_error_rate: f64,
    pub worst_service: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub problem_id: String,
    pub task: TaskKind,
    pub seed: u64,
    pub success: bool,
    pub ttd_ms: Option<Millis>,
    pub ttm_ms: Option<Millis>,
    pub interactions: usize,
    pub cost_proxy: usize,
    pub detected: bool,
    pub localized: bool,
    pub mitigated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_check: Option<PostCheck>,
    /// SHA-256 of the exported transcript this report was judged from.
    pub transcript_sha256: String,
}

fn names_root(gt: &GroundTruth, services: &[String]) -> bool {
    services.iter().any(|s| gt.root_services.contains(s))
}

/// Whether a detect/localize solution is right. Mitigation solutions carry
/// no claim and are judged on cluster state instead.
pub fn solution_correct(task: TaskKind, gt: &GroundTruth, solution: &Solution) -> bool {
    match (task, solution) {
        (TaskKind::Detect, Solution::Detection { anomalous, services }) => {
            if *anomalous != gt.anomalous {
                return false;
            }
            !gt.anomalous
                || (services.iter().all(|s| gt.affected.contains(s)) && names_root(gt, services))
        }
        (TaskKind::Localize, Solution::Localization { services }) => gt.anomalous && names_root(gt, services),
        _ => false,
    }
}

/// Interaction count and character-count cost proxy.
pub fn efficiency(briefing: &str, transcript: &[ActionRecord]) -> (usize, usize) {
    let chars: usize = transcript
        .iter()
        .map(|r| {
            r.observation.output.chars().count() + r.thought.as_deref().map_or(0, |t| t.chars().count())
        })
        .sum();
    (transcript.len(), briefing.chars().count() + chars)
}

/// Re-runs the environment from `engine`'s current state under a continued
/// workload for one oracle window, without touching `engine`.
pub fn post_check(engine: &Engine, workload: &WorkloadSpec, seed: u64, oracle: &OracleConfig) -> PostCheck {
    let now = engine.clock();
    let continued = WorkloadSpec {
        duration_ms: oracle.post_window_ms,
        seed: seed ^ 0x5bd1_e995_9e37_79b9,
        ..workload.clone()
    };
    let mut fork = engine.fork(generate_plan(&continued).shifted(now));
    fork.run(now + oracle.post_window_ms);
    let mut counts: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in fork.store().request_samples() {
        let c = counts.entry(r.service.as_str()).or_default();
        c.0 += 1;
        c.1 += u64::from(!r.ok);
    }
    let mut worst: Option<(&str, f64)> = None;
    for (svc, (total, errors)) in &counts {
        let rate = *errors as f64 / *total as f64;
        if worst.is_none_or(|(_, w)| rate > w) {
            worst = Some((svc, rate));
        }
    }
    let max_error_rate = worst.map_or(0.0, |(_, r)| r);
    PostCheck {
        window_ms: oracle.post_window_ms,
        threshold: oracle.max_error_rate,
        max_error_rate,
        worst_service: worst.filter(|(_, r)| *r > 0.0).map(|(s, _)| s.to_string()),
        passed: max_error_rate < oracle.max_error_rate,
    }
}

/// Scores a session that has received its submission.
pub fn judge(session: &Session) -> Result<EvaluationReport, OrchestratorError> {
    let Some(solution) = session.solution() else {
        return Err(OrchestratorError::SessionOpen);
    };
    let problem = session.problem();
    let gt = session.ground_truth();
    let marks = session.marks();
    let onset = session.fault_onset();
    let since_onset = |t: Option<Millis>| Some(t?.saturating_sub(onset?));

    let (success, detected, localized, mitigated, post) = match problem.task {
        TaskKind::Detect | TaskKind::Localize => {
            let ok = solution_correct(problem.task, gt, solution);
            let localized = gt.anomalous && names_root(gt, solution.services());
            let detected = problem.task == TaskKind::Detect && ok;
            (ok, detected, localized, false, None)
        }
        TaskKind::Mitigate => {
            let state = session.engine().state();
            let cleared = gt.predicates.iter().all(|p| p.holds(state));
            let check = post_check(
                session.engine(),
                &problem.scenario.workload,
                session.seed(),
                &problem.scenario.oracle,
            );
            let mitigated = gt.anomalous && cleared && check.passed;
            let detected = marks.first_correct_detection.is_some();
            (mitigated, detected, detected, mitigated, Some(check))
        }
    };
    let ttm_ms = if mitigated { since_onset(marks.mitigation_verified) } else { None };
    let (interactions, cost_proxy) = efficiency(session.briefing(), session.transcript());
    Ok(EvaluationReport {
        problem_id: problem.id.clone(),
        task: problem.task,
        seed: session.seed(),
        success,
        ttd_ms: if detected || success { since_onset(marks.first_correct_detection) } else { None },
        ttm_ms,
        interactions,
        cost_proxy,
        detected,
        localized,
        mitigated,
        post_check: post,
        transcript_sha256: hex::encode(Sha256::digest(export_transcript(session).as_bytes())),
    })
}

/// First line of an exported transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub problem_id: String,
    pub task: TaskKind,
    pub seed: u64,
    pub briefing: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum TranscriptLine {
    Briefing(TranscriptHeader),
    Action(ActionRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub records: Vec<ActionRecord>,
}

impl Transcript {
    pub fn of(session: &Session) -> Transcript {
        Transcript {
            header: TranscriptHeader {
                problem_id: session.problem().id.clone(),
                task: session.problem().task,
                seed: session.seed(),
                briefing: session.briefing().to_string(),
            },
            records: session.transcript().to_vec(),
        }
    }

    /// JSON Lines: a briefing header, then one line per action.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&TranscriptLine::Briefing(self.header.clone())).expect("serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(&TranscriptLine::Action(r.clone())).expect("serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Transcript, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty()).enumerate();
        let header = match lines.next() {
            Some((_, l)) => match serde_json::from_str(l).map_err(|e| format!("line 1: {e}"))? {
                TranscriptLine::Briefing(h) => h,
                TranscriptLine::Action(_) => return Err("line 1: expected the briefing header".into()),
            },
            None => return Err("empty transcript".into()),
        };
        let mut records = Vec::new();
        for (i, l) in lines {
            match serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1))? {
                TranscriptLine::Action(r) => records.push(r),
                TranscriptLine::Briefing(_) => return Err(format!("line {}: duplicate header", i + 1)),
            }
        }
        Ok(Transcript { header, records })
    }
}

pub fn export_transcript(session: &Session) -> String {
    Transcript::of(session).to_jsonl()
}

/// Re-executes a transcript's actions against a fresh session. Because the
/// environment is deterministic this reproduces the original session and
/// its report.
pub fn replay(problem: Arc<Problem>, transcript: &Transcript) -> Result<Session, OrchestratorError> {
    if transcript.header.problem_id != problem.id {
        return Err(OrchestratorError::UnknownProblem(transcript.header.problem_id.clone()));
    }
    let mut session = Session::start(problem, Some(transcript.header.seed))?;
    for r in &transcript.records {
        if session.status() != crate::orchestrator::SessionStatus::Open {
            break;
        }
        session.submit_action(r.action.clone(), r.thought.clone())?;
    }
    Ok(session)
}
