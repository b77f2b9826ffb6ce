//! Scenario files: topology, workload, fault schedule and task, resolved
//! into a self-contained document that problems and caches are built from.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Millis, Topology, TopologyDocument, TopologyError};
use crate::fault::{FaultError, FaultInstance};
use crate::workload::{WorkloadError, WorkloadSpec};

pub const DEFAULT_ACTION_LATENCY_MS: Millis = 1000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Parse(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error("workload mix names {0:?}, which is not an entrypoint")]
    NotAnEntrypoint(String),
    #[error("focus service {0:?} is not in the topology")]
    UnknownFocus(String),
    #[error("duplicate fault id {0:?}")]
    DuplicateFault(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Detect,
    Localize,
    Mitigate,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Detect => "detect",
            TaskKind::Localize => "localize",
            TaskKind::Mitigate => "mitigate",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Thresholds for the post-mitigation health check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_post_window")]
    pub post_window_ms: Millis,
    #[serde(default = "default_max_error_rate")]
    pub max_error_rate: f64,
}

fn default_post_window() -> Millis {
    30_000
}
fn default_max_error_rate() -> f64 {
    0.01
}
fn default_action_latency() -> Millis {
    DEFAULT_ACTION_LATENCY_MS
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            post_window_ms: default_post_window(),
            max_error_rate: default_max_error_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologyRef {
    Path(String),
    Inline(TopologyDocument),
}

/// Scenario as written on disk. The topology may be a path relative to the
/// scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    pub task: TaskKind,
    #[serde(default)]
    pub focus_service: Option<String>,
    pub topology: TopologyRef,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub faults: Vec<FaultInstance>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_action_latency")]
    pub action_latency_ms: Millis,
    #[serde(default)]
    pub oracle: OracleConfig,
}

/// Fully resolved and validated scenario. Its JSON form is canonical and is
/// what problem ids hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub task: TaskKind,
    pub focus_service: String,
    pub topology: TopologyDocument,
    pub workload: WorkloadSpec,
    pub faults: Vec<FaultInstance>,
    pub seed: u64,
    pub action_latency_ms: Millis,
    pub oracle: OracleConfig,
}

fn parse_text<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ScenarioError> {
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    } else {
        serde_yaml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }
}

impl Scenario {
    /// Loads a scenario file, resolving a topology path against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: ScenarioFile = parse_text(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fallback = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Scenario::resolve(file, base, &fallback)
    }

    /// Parses a scenario from text; topology paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Scenario, ScenarioError> {
        Scenario::resolve(parse_text(text)?, base, "scenario")
    }

    pub fn resolve(file: ScenarioFile, base: &Path, fallback_name: &str) -> Result<Scenario, ScenarioError> {
        let topology = match file.topology {
            TopologyRef::Inline(doc) => doc,
            TopologyRef::Path(p) => {
                let path = base.join(p);
                let text = fs::read_to_string(&path).map_err(|source| ScenarioError::Io { path, source })?;
                parse_text(&text)?
            }
        };
        let topo = Topology::from_document(&topology)?;
        let focus_service = match file.focus_service {
            Some(s) => s,
            None => topo
                .entry_services()
                .first()
                .map(|s| s.to_string())
                .ok_or(TopologyError::NoEntrypoint)?,
        };
        let scenario = Scenario {
            name: file.name.unwrap_or_else(|| fallback_name.to_string()),
            task: file.task,
            focus_service,
            topology,
            workload: file.workload,
            faults: file.faults,
            seed: file.seed,
            action_latency_ms: file.action_latency_ms,
            oracle: file.oracle,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<Topology, ScenarioError> {
        let topo = Topology::from_document(&self.topology)?;
        if !topo.contains(&self.focus_service) {
            return Err(ScenarioError::UnknownFocus(self.focus_service.clone()));
        }
        self.workload.validate()?;
        for name in self.workload.mix.keys() {
            if !topo.service(name).is_some_and(|s| s.entrypoint) {
                return Err(ScenarioError::NotAnEntrypoint(name.clone()));
            }
        }
        let mut ids = BTreeSet::new();
        for f in &self.faults {
            f.validate(&topo)?;
            if !ids.insert(f.id.as_str()) {
                return Err(ScenarioError::DuplicateFault(f.id.clone()));
            }
        }
        Ok(topo)
    }

    pub fn topology(&self) -> Topology {
        Topology::from_document(&self.topology).expect("validated on construction")
    }

    /// Canonical JSON bytes.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    /// Copy with the fault schedule replaced.
    pub fn with_faults(&self, faults: Vec<FaultInstance>) -> Result<Scenario, ScenarioError> {
        let s = Scenario {
            faults,
            ..self.clone()
        };
        s.validate()?;
        Ok(s)
    }
}
