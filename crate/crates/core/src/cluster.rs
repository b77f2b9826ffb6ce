//! Simulated microservice application and the configuration surface that
//! faults corrupt and agents patch.
//!
//! A [`Topology`] is the static shape of the application. A [`ClusterState`]
//! is a value: every transition (`apply_patch`, `rollout_restart`, ...)
//! returns a new state and leaves its input untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fault::ActiveFault;

/// Simulated milliseconds.
pub type Millis = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("invalid topology document: {0}")]
    Parse(String),
    #[error("dependency cycle detected: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("duplicate service {name:?} in namespace {namespace:?}")]
    DuplicateService { name: String, namespace: String },
    #[error("service {service:?}: port {port} outside 1-65535")]
    PortOutOfRange { service: String, port: i64 },
    #[error("service {service:?} depends on unknown service {dependency:?}")]
    UnknownDependency { service: String, dependency: String },
    #[error("topology has no entrypoint service")]
    NoEntrypoint,
}

/// Errors surfaced to agents. The display strings mimic kubectl output.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClusterError {
    #[error("Error: namespaces \"{0}\" not found")]
    NamespaceNotFound(String),
    #[error("Error from server (NotFound): services \"{0}\" not found")]
    ServiceNotFound(String),
    #[error("Error from server (NotFound): pods \"{0}\" not found")]
    PodNotFound(String),
    #[error("Error from server: jsonpatch {op} operation does not apply: doc is missing path: \"{path}\"")]
    PathNotFound { op: String, path: String },
    #[error("The Service \"{service}\" is invalid: {field}: Invalid value: {value}: {reason}")]
    InvalidValue {
        service: String,
        field: String,
        value: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub name: String,
    pub namespace: String,
    pub listen_port: u16,
    /// Port the service config forwards traffic to.
    pub target_port: u16,
    pub dependencies: Vec<String>,
    pub replicas: u32,
    pub cpu_limit_millicores: u32,
    pub mem_limit_mb: u32,
    pub base_latency_ms: u64,
    pub entrypoint: bool,
}

/// On-disk topology schema (YAML or JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TopologyDocument {
    pub app: String,
    pub namespace: String,
    pub services: Vec<ServiceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ServiceEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub namespace: Option<String>,
    pub port: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_port: Option<i64>,
    #[serde(default)]
    pub dependencies: Vec<String>,
    #[serde(default = "default_replicas")]
    pub replicas: u32,
    #[serde(default = "default_cpu_limit")]
    pub cpu_limit: u32,
    #[serde(default = "default_mem_limit")]
    pub mem_limit_mb: u32,
    #[serde(default = "default_base_latency")]
    pub base_latency_ms: u64,
    #[serde(default)]
    pub entrypoint: bool,
}

fn default_replicas() -> u32 {
    1
}
fn default_cpu_limit() -> u32 {
    1000
}
fn default_mem_limit() -> u32 {
    512
}
fn default_base_latency() -> u64 {
    5
}

impl TopologyDocument {
    pub fn from_yaml(text: &str) -> Result<Self, TopologyError> {
        serde_yaml::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        serde_json::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))
    }
}

/// A validated application: unique services, a dependency DAG and at least
/// one entrypoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Topology {
    app_name: String,
    namespace: String,
    /// Declaration order.
    services: Vec<ServiceSpec>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

/// Parses and validates a topology document (YAML is a superset of JSON, so
/// both are accepted).
pub fn load_topology(text: &str) -> Result<Topology, TopologyError> {
    Topology::from_document(&TopologyDocument::from_yaml(text)?)
}

fn check_port(service: &str, port: i64) -> Result<u16, TopologyError> {
    if (1..=65535).contains(&port) {
        Ok(port as u16)
    } else {
        Err(TopologyError::PortOutOfRange {
            service: service.to_string(),
            port,
        })
    }
}

impl Topology {
    pub fn from_document(doc: &TopologyDocument) -> Result<Self, TopologyError> {
        let mut services = Vec::with_capacity(doc.services.len());
        let mut index = BTreeMap::new();
        for entry in &doc.services {
            let namespace = entry
                .namespace
                .clone()
                .unwrap_or_else(|| doc.namespace.clone());
            if index.contains_key(&entry.name) {
                return Err(TopologyError::DuplicateService {
                    name: entry.name.clone(),
                    namespace,
                });
            }
            let listen_port = check_port(&entry.name, entry.port)?;
            let target_port = check_port(&entry.name, entry.target_port.unwrap_or(entry.port))?;
            index.insert(entry.name.clone(), services.len());
            services.push(ServiceSpec {
                name: entry.name.clone(),
                namespace,
                listen_port,
                target_port,
                dependencies: entry.dependencies.clone(),
                replicas: entry.replicas,
                cpu_limit_millicores: entry.cpu_limit,
                mem_limit_mb: entry.mem_limit_mb,
                base_latency_ms: entry.base_latency_ms,
                entrypoint: entry.entrypoint,
            });
        }
        for svc in &services {
            for dep in &svc.dependencies {
                if !index.contains_key(dep) {
                    return Err(TopologyError::UnknownDependency {
                        service: svc.name.clone(),
                        dependency: dep.clone(),
                    });
                }
            }
        }
        let topology = Topology {
            app_name: doc.app.clone(),
            namespace: doc.namespace.clone(),
            services,
            index,
        };
        if let Some(cycle) = topology.find_cycle() {
            return Err(TopologyError::Cycle(cycle));
        }
        if !topology.services.iter().any(|s| s.entrypoint) {
            return Err(TopologyError::NoEntrypoint);
        }
        Ok(topology)
    }

    pub fn to_document(&self) -> TopologyDocument {
        TopologyDocument {
            app: self.app_name.clone(),
            namespace: self.namespace.clone(),
            services: self
                .services
                .iter()
                .map(|s| ServiceEntry {
                    name: s.name.clone(),
                    namespace: (s.namespace != self.namespace).then(|| s.namespace.clone()),
                    port: s.listen_port.into(),
                    target_port: (s.target_port != s.listen_port).then(|| s.target_port.into()),
                    dependencies: s.dependencies.clone(),
                    replicas: s.replicas,
                    cpu_limit: s.cpu_limit_millicores,
                    mem_limit_mb: s.mem_limit_mb,
                    base_latency_ms: s.base_latency_ms,
                    entrypoint: s.entrypoint,
                })
                .collect(),
        }
    }

    /// Depth-first three-colour search; returns the first cycle found.
    fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        fn visit(
            topo: &Topology,
            at: usize,
            marks: &mut [Mark],
            stack: &mut Vec<usize>,
        ) -> Option<Vec<String>> {
            marks[at] = Mark::Grey;
            stack.push(at);
            for dep in &topo.services[at].dependencies {
                let next = topo.index[dep];
                match marks[next] {
                    Mark::Grey => {
                        let from = stack.iter().position(|&i| i == next).unwrap_or(0);
                        let mut cycle: Vec<String> = stack[from..]
                            .iter()
                            .map(|&i| topo.services[i].name.clone())
                            .collect();
                        cycle.push(topo.services[next].name.clone());
                        return Some(cycle);
                    }
                    Mark::White => {
                        if let Some(c) = visit(topo, next, marks, stack) {
                            return Some(c);
                        }
                    }
                    Mark::Black => {}
                }
            }
            stack.pop();
            marks[at] = Mark::Black;
            None
        }
        let mut marks = vec![Mark::White; self.services.len()];
        let mut stack = Vec::new();
        for i in 0..self.services.len() {
            if marks[i] == Mark::White {
                if let Some(c) = visit(self, i, &mut marks, &mut stack) {
                    return Some(c);
                }
            }
        }
        None
    }

    pub fn app_name(&self) -> &str {
        &self.app_name
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    /// Helm release name derived from the app name (`SocialNetwork` ->
    /// `social-network`).
    pub fn release_name(&self) -> String {
        let mut out = String::new();
        for (i, ch) in self.app_name.chars().enumerate() {
            if ch.is_uppercase() {
                if i > 0 && !out.ends_with('-') {
                    out.push('-');
                }
                out.extend(ch.to_lowercase());
            } else if ch.is_alphanumeric() {
                out.push(ch);
            } else if !out.ends_with('-') {
                out.push('-');
            }
        }
        out
    }

    pub fn services(&self) -> &[ServiceSpec] {
        &self.services
    }

    pub fn service(&self, name: &str) -> Option<&ServiceSpec> {
        self.index.get(name).map(|&i| &self.services[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn service_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn entry_services(&self) -> Vec<&str> {
        self.services
            .iter()
            .filter(|s| s.entrypoint)
            .map(|s| s.name.as_str())
            .collect()
    }

    pub fn namespaces(&self) -> BTreeSet<&str> {
        let mut set: BTreeSet<&str> = self.services.iter().map(|s| s.namespace.as_str()).collect();
        set.insert(&self.namespace);
        set
    }

    /// Services that list `name` as a direct dependency.
    pub fn callers_of(&self, name: &str) -> Vec<&str> {
        self.services
            .iter()
            .filter(|s| s.dependencies.iter().any(|d| d == name))
            .map(|s| s.name.as_str())
            .collect()
    }

    /// Resolves a service by name within a namespace, with kubectl-style errors.
    pub fn lookup(&self, name: &str, namespace: &str) -> Result<&ServiceSpec, ClusterError> {
        if !self.namespaces().contains(namespace) {
            return Err(ClusterError::NamespaceNotFound(namespace.to_string()));
        }
        match self.service(name) {
            Some(s) if s.namespace == namespace => Ok(s),
            _ => Err(ClusterError::ServiceNotFound(name.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchOp {
    Replace,
    Add,
    Remove,
}

impl PatchOp {
    fn as_str(self) -> &'static str {
        match self {
            PatchOp::Replace => "replace",
            PatchOp::Add => "add",
            PatchOp::Remove => "remove",
        }
    }
}

/// One JSON-patch style operation against a service config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigPatch {
    pub op: PatchOp,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
}

impl ConfigPatch {
    pub fn replace(path: impl Into<String>, value: impl Into<Value>) -> Self {
        ConfigPatch {
            op: PatchOp::Replace,
            path: path.into(),
            value: Some(value.into()),
        }
    }
}

/// Where a config overlay came from. Fault overlays are removed again when
/// the fault is cleared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum OverlayOrigin {
    Agent,
    Fault(String),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Overlay {
    pub(crate) origin: OverlayOrigin,
    pub(crate) patch: ConfigPatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplicaStatus {
    Running,
    CrashLoop,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replica {
    pub status: ReplicaStatus,
    pub restarts: u32,
    /// Bumped whenever the pod is replaced; feeds the pod name.
    pub generation: u32,
    /// End of a restart back-off, if any.
    pub backoff_until: Option<Millis>,
    pub started_at: Millis,
}

impl Replica {
    fn fresh(generation: u32, now: Millis) -> Self {
        Replica {
            status: ReplicaStatus::Running,
            restarts: 0,
            generation,
            backoff_until: None,
            started_at: now,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResourceUsage {
    pub cpu_millicores: f64,
    pub memory_mb: f64,
}

/// Effective view of a service config document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectiveConfig {
    pub port: u16,
    pub target_port: u16,
    pub replicas: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    topology: Arc<Topology>,
    base_configs: BTreeMap<String, Value>,
    configs: BTreeMap<String, Value>,
    pub(crate) overlays: BTreeMap<String, Vec<Overlay>>,
    pub(crate) replicas: BTreeMap<String, Vec<Replica>>,
    pub(crate) partitions: BTreeSet<(String, String)>,
    pub(crate) usage: BTreeMap<String, ResourceUsage>,
    pub(crate) faults: BTreeMap<String, ActiveFault>,
    clock: Millis,
}

fn base_config(spec: &ServiceSpec, release: &str) -> Value {
    json!({
        "metadata": {
            "name": spec.name,
            "namespace": spec.namespace,
            "labels": { "app.kubernetes.io/managed-by": "Helm" },
            "annotations": {
                "meta.helm.sh/release-name": release,
                "meta.helm.sh/release-namespace": spec.namespace,
            },
        },
        "spec": {
            "ports": [{
                "name": spec.listen_port.to_string(),
                "port": spec.listen_port,
                "targetPort": spec.target_port,
                "protocol": "TCP",
            }],
            "replicas": spec.replicas,
            "selector": { "service": spec.name },
        },
    })
}

/// Baseline memory footprint of a healthy replica set.
pub(crate) fn baseline_memory(spec: &ServiceSpec) -> f64 {
    f64::from(spec.mem_limit_mb) * 0.25
}

pub(crate) fn baseline_cpu(spec: &ServiceSpec) -> f64 {
    f64::from(spec.cpu_limit_millicores) * 0.05
}

fn split_path(path: &str) -> Option<Vec<String>> {
    let rest = path.strip_prefix('/')?;
    if rest.is_empty() {
        return None;
    }
    Some(
        rest.split('/')
            .map(|seg| seg.replace("~1", "/").replace("~0", "~"))
            .collect(),
    )
}

fn child_mut<'a>(node: &'a mut Value, seg: &str) -> Option<&'a mut Value> {
    match node {
        Value::Object(map) => map.get_mut(seg),
        Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
        _ => None,
    }
}

/// Applies one patch to a config document in place.
fn patch_document(doc: &mut Value, patch: &ConfigPatch) -> Result<(), ClusterError> {
    let missing = || ClusterError::PathNotFound {
        op: patch.op.as_str().to_string(),
        path: patch.path.clone(),
    };
    let segments = split_path(&patch.path).ok_or_else(missing)?;
    let (last, parents) = segments.split_last().ok_or_else(missing)?;
    let mut node = doc;
    for seg in parents {
        node = child_mut(node, seg).ok_or_else(missing)?;
    }
    match patch.op {
        PatchOp::Replace => {
            let slot = child_mut(node, last).ok_or_else(missing)?;
            *slot = patch.value.clone().unwrap_or(Value::Null);
        }
        PatchOp::Add => {
            // Object members only: array insertion would make overlays
            // non-idempotent.
            let map = node.as_object_mut().ok_or_else(missing)?;
            map.insert(last.clone(), patch.value.clone().unwrap_or(Value::Null));
        }
        PatchOp::Remove => match node {
            Value::Object(map) => {
                map.remove(last).ok_or_else(missing)?;
            }
            _ => return Err(missing()),
        },
    }
    Ok(())
}

fn read_config(service: &str, doc: &Value) -> Result<EffectiveConfig, ClusterError> {
    let invalid = |field: &str, value: Option<&Value>, reason: &str| ClusterError::InvalidValue {
        service: service.to_string(),
        field: field.to_string(),
        value: value.map_or_else(|| "null".to_string(), Value::to_string),
        reason: reason.to_string(),
    };
    let port_at = |field: &str, pointer: &str| {
        let v = doc.pointer(pointer);
        match v.and_then(Value::as_i64) {
            Some(p) if (1..=65535).contains(&p) => Ok(p as u16),
            _ => Err(invalid(field, v, "must be between 1 and 65535, inclusive")),
        }
    };
    let port = port_at("spec.ports[0].port", "/spec/ports/0/port")?;
    let target_port = port_at("spec.ports[0].targetPort", "/spec/ports/0/targetPort")?;
    let replicas_value = doc.pointer("/spec/replicas");
    let replicas = match replicas_value.and_then(Value::as_u64) {
        Some(r) if r <= u64::from(u32::MAX) => r as u32,
        _ => {
            return Err(invalid(
                "spec.replicas",
                replicas_value,
                "must be greater than or equal to 0",
            ))
        }
    };
    Ok(EffectiveConfig {
        port,
        target_port,
        replicas,
    })
}

/// Stable pseudo pod name: `<service>-<10 hex>`.
pub fn pod_name(service: &str, generation: u32, index: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(service.as_bytes());
    hasher.update(generation.to_le_bytes());
    hasher.update((index as u64).to_le_bytes());
    let digest = hasher.finalize();
    format!("{service}-{}", &hex::encode(digest)[..10])
}

impl ClusterState {
    pub fn new(topology: Arc<Topology>) -> Self {
        let release = topology.release_name();
        let mut base_configs = BTreeMap::new();
        let mut replicas = BTreeMap::new();
        let mut usage = BTreeMap::new();
        for spec in topology.services() {
            base_configs.insert(spec.name.clone(), base_config(spec, &release));
            replicas.insert(
                spec.name.clone(),
                (0..spec.replicas).map(|_| Replica::fresh(0, 0)).collect(),
            );
            usage.insert(
                spec.name.clone(),
                ResourceUsage {
                    cpu_millicores: baseline_cpu(spec),
                    memory_mb: baseline_memory(spec),
                },
            );
        }
        ClusterState {
            configs: base_configs.clone(),
            base_configs,
            overlays: BTreeMap::new(),
            replicas,
            partitions: BTreeSet::new(),
            usage,
            faults: BTreeMap::new(),
            topology,
            clock: 0,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn topology_arc(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn clock(&self) -> Millis {
        self.clock
    }

    /// Moves the clock forward; earlier times are ignored.
    pub fn advance_clock(&mut self, to: Millis) {
        self.clock = self.clock.max(to);
    }

    pub fn config_document(&self, service: &str) -> Option<&Value> {
        self.configs.get(service)
    }

    pub fn effective_config(&self, service: &str) -> Option<EffectiveConfig> {
        let doc = self.configs.get(service)?;
        read_config(service, doc).ok()
    }

    pub fn replicas(&self, service: &str) -> &[Replica] {
        self.replicas.get(service).map_or(&[], Vec::as_slice)
    }

    pub fn replica_status(&self, service: &str, index: usize) -> Option<ReplicaStatus> {
        self.replicas.get(service)?.get(index).map(|r| r.status)
    }

    pub fn has_running_replica(&self, service: &str) -> bool {
        self.replicas(service)
            .iter()
            .any(|r| r.status == ReplicaStatus::Running)
    }

    pub fn is_partitioned(&self, from: &str, to: &str) -> bool {
        self.partitions
            .contains(&(from.to_string(), to.to_string()))
    }

    pub fn partitions(&self) -> impl Iterator<Item = (&str, &str)> {
        self.partitions.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn usage(&self, service: &str) -> Option<ResourceUsage> {
        self.usage.get(service).copied()
    }

    /// Number of overlays recorded for a service (agent and fault origin).
    pub fn overlay_count(&self, service: &str) -> usize {
        self.overlays.get(service).map_or(0, Vec::len)
    }

    /// Snapshot of everything an agent can change through configuration:
    /// effective configs, partitions and replica statuses.
    pub fn config_snapshot(&self) -> ConfigSnapshot {
        ConfigSnapshot {
            configs: self.configs.clone(),
            partitions: self.partitions.clone(),
            statuses: self
                .replicas
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|r| r.status).collect()))
                .collect(),
        }
    }

    /// Pure transition: returns a new state with `patch` appended to the
    /// service's overlays.
    pub fn apply_patch(
        &self,
        service: &str,
        namespace: &str,
        patch: &ConfigPatch,
    ) -> Result<ClusterState, ClusterError> {
        self.apply_patches(service, namespace, std::slice::from_ref(patch))
    }

    /// Applies several patches atomically.
    pub fn apply_patches(
        &self,
        service: &str,
        namespace: &str,
        patches: &[ConfigPatch],
    ) -> Result<ClusterState, ClusterError> {
        self.topology.lookup(service, namespace)?;
        self.with_overlays(service, patches, OverlayOrigin::Agent)
    }

    pub(crate) fn with_overlays(
        &self,
        service: &str,
        patches: &[ConfigPatch],
        origin: OverlayOrigin,
    ) -> Result<ClusterState, ClusterError> {
        let mut doc = self.configs[service].clone();
        for patch in patches {
            if matches!(patch.value, Some(Value::Array(_) | Value::Object(_))) {
                return Err(ClusterError::InvalidValue {
                    service: service.to_string(),
                    field: patch.path.clone(),
                    value: patch.value.as_ref().map_or_else(String::new, Value::to_string),
                    reason: "only scalar values are supported".to_string(),
                });
            }
            patch_document(&mut doc, patch)?;
        }
        read_config(service, &doc)?;
        let mut next = self.clone();
        if origin == OverlayOrigin::Agent && doc == self.configs[service] {
            // no-op patches leave no overlay behind
            return Ok(next);
        }
        next.configs.insert(service.to_string(), doc);
        next.overlays
            .entry(service.to_string())
            .or_default()
            .extend(patches.iter().map(|p| Overlay {
                origin: origin.clone(),
                patch: p.clone(),
            }));
        next.sync_replica_count(service);
        Ok(next)
    }

    /// Drops overlays of a given origin and recomputes the effective config
    /// from the base document. Overlays that no longer apply are skipped.
    pub(crate) fn remove_overlays(&mut self, service: &str, origin: &OverlayOrigin) {
        let Some(list) = self.overlays.get_mut(service) else {
            return;
        };
        list.retain(|o| &o.origin != origin);
        let mut doc = self.base_configs[service].clone();
        for overlay in list.iter() {
            let mut candidate = doc.clone();
            if patch_document(&mut candidate, &overlay.patch).is_ok()
                && read_config(service, &candidate).is_ok()
            {
                doc = candidate;
            }
        }
        self.configs.insert(service.to_string(), doc);
        self.sync_replica_count(service);
    }

    fn sync_replica_count(&mut self, service: &str) {
        let Some(want) = self.effective_config(service).map(|c| c.replicas as usize) else {
            return;
        };
        let now = self.clock;
        let list = self.replicas.entry(service.to_string()).or_default();
        if list.len() > want {
            list.truncate(want);
        }
        while list.len() < want {
            list.push(Replica::fresh(0, now));
        }
    }

    /// Replaces every pod of a deployment (`kubectl rollout restart`).
    pub fn rollout_restart(&self, service: &str, namespace: &str) -> Result<ClusterState, ClusterError> {
        let spec = self.topology.lookup(service, namespace)?;
        let mut next = self.clone();
        let now = next.clock;
        for replica in next.replicas.get_mut(service).into_iter().flatten() {
            *replica = Replica::fresh(replica.generation + 1, now);
        }
        if let Some(u) = next.usage.get_mut(service) {
            u.memory_mb = baseline_memory(spec);
        }
        crate::fault::on_pods_replaced(&mut next, service, None);
        Ok(next)
    }

    /// Replaces a single pod (`kubectl delete pod`).
    pub fn delete_pod(&self, pod: &str, namespace: &str) -> Result<ClusterState, ClusterError> {
        if !self.topology.namespaces().contains(namespace) {
            return Err(ClusterError::NamespaceNotFound(namespace.to_string()));
        }
        let (service, index) = self
            .find_pod(pod)
            .filter(|(svc, _)| {
                self.topology
                    .service(svc)
                    .is_some_and(|s| s.namespace == namespace)
            })
            .ok_or_else(|| ClusterError::PodNotFound(pod.to_string()))?;
        let mut next = self.clone();
        let now = next.clock;
        let replica = &mut next.replicas.get_mut(&service).expect("pod resolved")[index];
        *replica = Replica::fresh(replica.generation + 1, now);
        crate::fault::on_pods_replaced(&mut next, &service, Some(index));
        Ok(next)
    }

    pub fn find_pod(&self, pod: &str) -> Option<(String, usize)> {
        self.replicas.iter().find_map(|(svc, list)| {
            list.iter()
                .enumerate()
                .find(|(i, r)| pod_name(svc, r.generation, *i) == pod)
                .map(|(i, _)| (svc.clone(), i))
        })
    }

    pub fn pods(&self, service: &str) -> Vec<(String, &Replica)> {
        self.replicas(service)
            .iter()
            .enumerate()
            .map(|(i, r)| (pod_name(service, r.generation, i), r))
            .collect()
    }

    pub(crate) fn set_usage(&mut self, service: &str, usage: ResourceUsage) {
        self.usage.insert(service.to_string(), usage);
    }

    pub(crate) fn replicas_mut(&mut self, service: &str) -> &mut Vec<Replica> {
        self.replicas.entry(service.to_string()).or_default()
    }

    /// Deterministic cluster IP for a service.
    pub fn cluster_ip(&self, service: &str) -> String {
        let idx = self.topology.service_index(service).unwrap_or(0);
        format!("10.96.{}.{}", idx / 200, 10 + idx % 200)
    }

    fn pod_ip(&self, service: &str, replica: usize) -> String {
        let idx = self.topology.service_index(service).unwrap_or(0);
        format!("10.244.{}.{}", idx, 2 + replica)
    }

    /// `kubectl describe svc` rendering of the effective config.
    pub fn describe_service(&self, name: &str, namespace: &str) -> Result<String, ClusterError> {
        let spec = self.topology.lookup(name, namespace)?;
        let doc = &self.configs[name];
        let cfg = read_config(name, doc)?;
        let labels = doc
            .pointer("/metadata/labels")
            .and_then(Value::as_object)
            .map(|m| {
                m.iter()
                    .map(|(k, v)| format!("{k}={}", v.as_str().map_or_else(|| v.to_string(), str::to_string)))
                    .collect::<Vec<_>>()
            })
            .unwrap_or_default();
        let annotations = doc
            .pointer("/metadata/annotations")
            .and_then(Value::as_object)
            .map(|m| {
                m.iter()
                    .map(|(k, v)| format!("{k}: {}", v.as_str().unwrap_or_default()))
                    .collect::<Vec<_>>()
            })
            .unwrap_or_default();
        let selector = doc
            .pointer("/spec/selector")
            .and_then(Value::as_object)
            .map(|m| {
                m.iter()
                    .map(|(k, v)| format!("{k}={}", v.as_str().unwrap_or_default()))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .unwrap_or_default();
        let endpoints: Vec<String> = self
            .replicas(name)
            .iter()
            .enumerate()
            .filter(|(_, r)| r.status == ReplicaStatus::Running)
            .map(|(i, _)| format!("{}:{}", self.pod_ip(name, i), cfg.target_port))
            .collect();

        let mut out = String::new();
        field(&mut out, "Name", std::slice::from_ref(&spec.name));
        field(&mut out, "Namespace", std::slice::from_ref(&spec.namespace));
        field(&mut out, "Labels", &labels);
        field(&mut out, "Annotations", &annotations);
        field(&mut out, "Selector", &[selector]);
        field(&mut out, "Type", &["ClusterIP".into()]);
        field(&mut out, "IP Family Policy", &["SingleStack".into()]);
        field(&mut out, "IP Families", &["IPv4".into()]);
        field(&mut out, "IP", &[self.cluster_ip(name)]);
        field(&mut out, "IPs", &[self.cluster_ip(name)]);
        field(&mut out, "Port", &[format!("{}  {}/TCP", cfg.port, cfg.port)]);
        field(&mut out, "TargetPort", &[format!("{}/TCP", cfg.target_port)]);
        field(&mut out, "Endpoints", &[endpoints.join(",")]);
        field(&mut out, "Session Affinity", &["None".into()]);
        field(&mut out, "Events", &[]);
        Ok(out)
    }
}

/// One `Key:  value` block in kubectl's 19-column layout; continuation
/// values are indented under the first.
fn field(out: &mut String, key: &str, values: &[String]) {
    let label = format!("{key}:");
    let values: Vec<&str> = values.iter().map(String::as_str).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        let _ = writeln!(out, "{label:<19}<none>");
        return;
    }
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{:<19}{v}", if i == 0 { label.as_str() } else { "" });
    }
}

/// Comparable projection of the agent-changeable parts of a state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSnapshot {
    pub configs: BTreeMap<String, Value>,
    pub partitions: BTreeSet<(String, String)>,
    pub statuses: BTreeMap<String, Vec<ReplicaStatus>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SOCIAL: &str = r#"
app: SocialNetwork
namespace: test-social-network
services:
  - name: compose-post-service
    port: 9090
    dependencies: [user-service]
    entrypoint: true
  - name: user-service
    port: 9090
"#;

    fn state() -> ClusterState {
        ClusterState::new(Arc::new(load_topology(SOCIAL).unwrap()))
    }

    fn port_lines(text: &str) -> (String, String) {
        let find = |key: &str| {
            text.lines()
                .find(|l| l.starts_with(key))
                .unwrap_or_default()
                .to_string()
        };
        (find("Port:"), find("TargetPort:"))
    }

    #[test]
    fn loads_social_network_fragment() {
        let topo = load_topology(SOCIAL).unwrap();
        assert!(topo.services().len() >= 2);
        assert_eq!(topo.service("user-service").unwrap().listen_port, 9090);
        assert_eq!(topo.callers_of("user-service"), vec!["compose-post-service"]);
        assert_eq!(topo.release_name(), "social-network");
    }

    #[test]
    fn rejects_cycles() {
        let doc = r#"
app: x
namespace: ns
services:
  - {name: a, port: 80, dependencies: [b], entrypoint: true}
  - {name: b, port: 80, dependencies: [a]}
"#;
        assert!(matches!(load_topology(doc), Err(TopologyError::Cycle(_))));
    }

    #[test]
    fn single_entry_service() {
        let topo = load_topology("app: x\nnamespace: ns\nservices:\n  - {name: solo, port: 80, entrypoint: true}\n").unwrap();
        assert_eq!(topo.entry_services(), vec!["solo"]);
    }

    #[test]
    fn rejects_bad_documents() {
        let dup = "app: x\nnamespace: ns\nservices:\n  - {name: a, port: 80, entrypoint: true}\n  - {name: a, port: 81}\n";
        assert!(matches!(load_topology(dup), Err(TopologyError::DuplicateService { .. })));
        let port = "app: x\nnamespace: ns\nservices:\n  - {name: a, port: 70000, entrypoint: true}\n";
        assert!(matches!(load_topology(port), Err(TopologyError::PortOutOfRange { port: 70000, .. })));
        let unknown = "app: x\nnamespace: ns\nservices:\n  - {name: a, port: 80, dependencies: [ghost], entrypoint: true}\n";
        assert!(matches!(load_topology(unknown), Err(TopologyError::UnknownDependency { .. })));
        let no_entry = "app: x\nnamespace: ns\nservices:\n  - {name: a, port: 80}\n";
        assert_eq!(load_topology(no_entry), Err(TopologyError::NoEntrypoint));
    }

    #[test]
    fn json_documents_load_too() {
        let doc = r#"{"app":"x","namespace":"ns","services":[{"name":"a","port":80,"entrypoint":true}]}"#;
        assert!(load_topology(doc).is_ok());
    }

    #[test]
    fn patch_target_port_and_describe() {
        let s0 = state();
        let broken = s0
            .apply_patch(
                "user-service",
                "test-social-network",
                &ConfigPatch::replace("/spec/ports/0/targetPort", 9999),
            )
            .unwrap();
        let text = broken.describe_service("user-service", "test-social-network").unwrap();
        assert!(text.contains("Port:              9090  9090/TCP"), "{text}");
        assert!(text.contains("TargetPort:        9999/TCP"), "{text}");

        let fixed = broken
            .apply_patch(
                "user-service",
                "test-social-network",
                &ConfigPatch::replace("/spec/ports/0/targetPort", 9090),
            )
            .unwrap();
        assert_eq!(fixed.effective_config("user-service").unwrap().target_port, 9090);
        let text = fixed.describe_service("user-service", "test-social-network").unwrap();
        assert!(text.contains("TargetPort:        9090/TCP"));
        // input untouched
        assert_eq!(broken.effective_config("user-service").unwrap().target_port, 9999);
    }

    #[test]
    fn typo_namespace_message_is_exact() {
        let err = state()
            .apply_patch(
                "user-service",
                "test-social-social-network",
                &ConfigPatch::replace("/spec/ports/0/targetPort", 9090),
            )
            .unwrap_err();
        assert_eq!(
            err.to_string(),
            "Error: namespaces \"test-social-social-network\" not found"
        );
        let err = state()
            .describe_service("user-service", "test-social-social-network")
            .unwrap_err();
        assert_eq!(
            err.to_string(),
            "Error: namespaces \"test-social-social-network\" not found"
        );
    }

    #[test]
    fn identity_patch_keeps_config() {
        let s0 = state();
        let s1 = s0
            .apply_patch(
                "user-service",
                "test-social-network",
                &ConfigPatch::replace("/spec/ports/0/targetPort", 9090),
            )
            .unwrap();
        assert_eq!(s0.config_snapshot(), s1.config_snapshot());
    }

    #[test]
    fn healthy_describe_has_equal_ports() {
        let text = state().describe_service("user-service", "test-social-network").unwrap();
        let (port, target) = port_lines(&text);
        assert!(port.ends_with("9090/TCP") && target.ends_with("9090/TCP"));
        assert!(text.contains("Selector:          service=user-service"));
        assert!(text.starts_with("Name:              user-service\n"));
    }

    #[test]
    fn patch_errors() {
        let s = state();
        let ns = "test-social-network";
        assert_eq!(
            s.apply_patch("nope", ns, &ConfigPatch::replace("/spec/replicas", 1)),
            Err(ClusterError::ServiceNotFound("nope".into()))
        );
        assert!(matches!(
            s.apply_patch("user-service", ns, &ConfigPatch::replace("/spec/ports/3/port", 1)),
            Err(ClusterError::PathNotFound { .. })
        ));
        assert!(matches!(
            s.apply_patch("user-service", ns, &ConfigPatch::replace("/spec/ports/0/targetPort", 0)),
            Err(ClusterError::InvalidValue { .. })
        ));
        let remove = ConfigPatch {
            op: PatchOp::Remove,
            path: "/metadata/labels/missing".into(),
            value: None,
        };
        assert!(matches!(
            s.apply_patch("user-service", ns, &remove),
            Err(ClusterError::PathNotFound { .. })
        ));
    }

    #[test]
    fn add_and_remove_labels() {
        let s = state();
        let ns = "test-social-network";
        let add = ConfigPatch {
            op: PatchOp::Add,
            path: "/metadata/labels/tier".into(),
            value: Some(json!("backend")),
        };
        let s1 = s.apply_patch("user-service", ns, &add).unwrap();
        assert!(s1.describe_service("user-service", ns).unwrap().contains("tier=backend"));
        let s2 = s1.apply_patch("user-service", ns, &add).unwrap();
        assert_eq!(s1.config_snapshot(), s2.config_snapshot());
        let rm = ConfigPatch {
            op: PatchOp::Remove,
            path: "/metadata/labels/tier".into(),
            value: None,
        };
        let s3 = s2.apply_patch("user-service", ns, &rm).unwrap();
        assert_eq!(s.config_snapshot(), s3.config_snapshot());
    }

    #[test]
    fn replica_patch_resizes_pods() {
        let s = state()
            .apply_patch("user-service", "test-social-network", &ConfigPatch::replace("/spec/replicas", 3))
            .unwrap();
        assert_eq!(s.replicas("user-service").len(), 3);
        let s = s
            .apply_patch("user-service", "test-social-network", &ConfigPatch::replace("/spec/replicas", 0))
            .unwrap();
        assert!(!s.has_running_replica("user-service"));
    }

    #[test]
    fn delete_pod_replaces_it() {
        let s = state();
        let (pod, _) = s.pods("user-service").remove(0);
        let s1 = s.delete_pod(&pod, "test-social-network").unwrap();
        assert!(s1.find_pod(&pod).is_none());
        assert_eq!(s1.pods("user-service").len(), 1);
        assert_eq!(
            s.delete_pod("ghost", "test-social-network"),
            Err(ClusterError::PodNotFound("ghost".into()))
        );
    }

    #[test]
    fn document_round_trip() {
        let topo = load_topology(SOCIAL).unwrap();
        let again = Topology::from_document(&topo.to_document()).unwrap();
        assert_eq!(topo, again);
    }
}
