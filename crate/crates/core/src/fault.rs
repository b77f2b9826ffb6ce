//! Push-button fault catalog: typed faults, injection and clearing as pure
//! state transitions, seeded sampling, and the declarative predicate that
//! says when a fault's effect is gone.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    baseline_cpu, baseline_memory, ClusterError, ClusterState, ConfigPatch, Millis, OverlayOrigin,
    ReplicaStatus, Topology,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FaultError {
    #[error("unknown fault target: {0}")]
    UnknownTarget(String),
    #[error("fault {id:?}: {reason}")]
    InvalidFault { id: String, reason: String },
    #[error("fault {0:?} is already active")]
    DuplicateFault(String),
    #[error("no active fault with id {0:?}")]
    UnknownFault(String),
    #[error("no fault satisfies the sampling constraints")]
    Unsatisfiable,
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Virtualization,
    Network,
    Application,
    Os,
}

/// Fault kind together with its kind-specific parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all_fields = "camelCase")]
pub enum FaultKind {
    TargetPortMisconfig { wrong_port: u16 },
    NetworkPartition,
    /// Affected pods alternate between `CrashLoop` and `Running` every
    /// `crash_period_ms`.
    PodCrashLoop { crash_period_ms: Millis },
    MemoryLeak { leak_rate_mb_per_s: f64 },
    /// Multiplies the service's per-hop latency while active.
    CpuExhaustion { latency_multiplier: f64 },
}

/// Parameter-free tag of a [`FaultKind`], used for catalogs and filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultKindTag {
    TargetPortMisconfig,
    NetworkPartition,
    PodCrashLoop,
    MemoryLeak,
    CpuExhaustion,
}

impl FaultKindTag {
    pub const ALL: [FaultKindTag; 5] = [
        FaultKindTag::TargetPortMisconfig,
        FaultKindTag::NetworkPartition,
        FaultKindTag::PodCrashLoop,
        FaultKindTag::MemoryLeak,
        FaultKindTag::CpuExhaustion,
    ];

    pub fn layer(self) -> Layer {
        match self {
            FaultKindTag::TargetPortMisconfig => Layer::Virtualization,
            FaultKindTag::NetworkPartition => Layer::Network,
            FaultKindTag::PodCrashLoop => Layer::Application,
            FaultKindTag::MemoryLeak | FaultKindTag::CpuExhaustion => Layer::Os,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultKindTag::TargetPortMisconfig => "TargetPortMisconfig",
            FaultKindTag::NetworkPartition => "NetworkPartition",
            FaultKindTag::PodCrashLoop => "PodCrashLoop",
            FaultKindTag::MemoryLeak => "MemoryLeak",
            FaultKindTag::CpuExhaustion => "CpuExhaustion",
        }
    }

    fn targets_pair(self) -> bool {
        self == FaultKindTag::NetworkPartition
    }
}

impl FaultKind {
    pub fn tag(&self) -> FaultKindTag {
        match self {
            FaultKind::TargetPortMisconfig { .. } => FaultKindTag::TargetPortMisconfig,
            FaultKind::NetworkPartition => FaultKindTag::NetworkPartition,
            FaultKind::PodCrashLoop { .. } => FaultKindTag::PodCrashLoop,
            FaultKind::MemoryLeak { .. } => FaultKindTag::MemoryLeak,
            FaultKind::CpuExhaustion { .. } => FaultKindTag::CpuExhaustion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FaultTarget {
    /// Directed `from -> to` service pair.
    Pair {
        from: String,
        to: String,
        namespace: String,
    },
    Service { service: String, namespace: String },
}

impl FaultTarget {
    pub fn service(service: impl Into<String>, namespace: impl Into<String>) -> Self {
        FaultTarget::Service {
            service: service.into(),
            namespace: namespace.into(),
        }
    }

    pub fn pair(from: impl Into<String>, to: impl Into<String>, namespace: impl Into<String>) -> Self {
        FaultTarget::Pair {
            from: from.into(),
            to: to.into(),
            namespace: namespace.into(),
        }
    }

    /// Services the fault is rooted at.
    pub fn services(&self) -> Vec<&str> {
        match self {
            FaultTarget::Service { service, .. } => vec![service],
            FaultTarget::Pair { from, to, .. } => vec![from, to],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FaultInstance {
    pub id: String,
    #[serde(flatten)]
    pub kind: FaultKind,
    pub target: FaultTarget,
    #[serde(default)]
    pub start_ms: Millis,
    /// `None` means persistent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<Millis>,
}

/// Mechanical ground-truth check that a fault's effect is gone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum ClearedPredicate {
    TargetPortMatchesListenPort { service: String },
    PairConnected { from: String, to: String },
    NoCrashingPods { service: String },
    NoMemoryLeak { service: String },
    NoCpuHog { service: String },
}

impl ClearedPredicate {
    pub fn holds(&self, state: &ClusterState) -> bool {
        match self {
            ClearedPredicate::TargetPortMatchesListenPort { service } => {
                let listen = state.topology().service(service).map(|s| s.listen_port);
                let target = state.effective_config(service).map(|c| c.target_port);
                listen.is_some() && listen == target
            }
            ClearedPredicate::PairConnected { from, to } => !state.is_partitioned(from, to),
            ClearedPredicate::NoCrashingPods { service } => !state
                .faults
                .values()
                .any(|f| f.on_service(service) && f.crash.as_ref().is_some_and(|c| !c.affected.is_empty())),
            ClearedPredicate::NoMemoryLeak { service } => !state
                .faults
                .values()
                .any(|f| f.on_service(service) && f.leak_rate().is_some()),
            ClearedPredicate::NoCpuHog { service } => !state
                .faults
                .values()
                .any(|f| f.on_service(service) && f.latency_multiplier().is_some()),
        }
    }
}

impl FaultInstance {
    pub fn layer(&self) -> Layer {
        self.kind.tag().layer()
    }

    pub fn cleared_predicate(&self) -> ClearedPredicate {
        let service = self.target.services()[0].to_string();
        match (&self.kind, &self.target) {
            (FaultKind::NetworkPartition, FaultTarget::Pair { from, to, .. }) => {
                ClearedPredicate::PairConnected {
                    from: from.clone(),
                    to: to.clone(),
                }
            }
            (FaultKind::TargetPortMisconfig { .. }, _) => {
                ClearedPredicate::TargetPortMatchesListenPort { service }
            }
            (FaultKind::PodCrashLoop { .. }, _) => ClearedPredicate::NoCrashingPods { service },
            (FaultKind::MemoryLeak { .. }, _) => ClearedPredicate::NoMemoryLeak { service },
            (FaultKind::CpuExhaustion { .. }, _) | (FaultKind::NetworkPartition, _) => {
                ClearedPredicate::NoCpuHog { service }
            }
        }
    }

    /// Checks parameters and target against a topology.
    pub fn validate(&self, topology: &Topology) -> Result<(), FaultError> {
        let invalid = |reason: &str| FaultError::InvalidFault {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        let check_service = |name: &str, namespace: &str| {
            topology
                .lookup(name, namespace)
                .map(|_| ())
                .map_err(|_| FaultError::UnknownTarget(format!("{namespace}/{name}")))
        };
        match (&self.target, self.kind.tag().targets_pair()) {
            (FaultTarget::Pair { from, to, namespace }, true) => {
                check_service(from, namespace)?;
                check_service(to, namespace)?;
                if from == to {
                    return Err(invalid("partition endpoints must differ"));
                }
            }
            (FaultTarget::Service { service, namespace }, false) => check_service(service, namespace)?,
            (_, true) => return Err(invalid("network partitions target a service pair")),
            (_, false) => return Err(invalid("this fault kind targets a single service")),
        }
        match self.kind {
            FaultKind::TargetPortMisconfig { wrong_port } => {
                let listen = topology
                    .service(self.target.services()[0])
                    .map(|s| s.listen_port);
                if wrong_port == 0 || Some(wrong_port) == listen {
                    return Err(invalid("wrongPort must be a valid port other than the listen port"));
                }
            }
            FaultKind::PodCrashLoop { crash_period_ms: 0 } => {
                return Err(invalid("crashPeriodMs must be > 0"));
            }
            FaultKind::MemoryLeak { leak_rate_mb_per_s } if !leak_rate_mb_per_s.is_finite() || leak_rate_mb_per_s <= 0.0 => {
                return Err(invalid("leakRateMbPerS must be > 0"));
            }
            FaultKind::CpuExhaustion { latency_multiplier } if !latency_multiplier.is_finite() || latency_multiplier < 1.0 => {
                return Err(invalid("latencyMultiplier must be >= 1"));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct CrashLoopState {
    /// Replica indices still running the faulty pod generation.
    pub(crate) affected: BTreeSet<usize>,
    pub(crate) phase_started: Millis,
    pub(crate) crashing: bool,
}

/// Internal record of an injected fault. Never rendered to agents.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ActiveFault {
    pub(crate) fault: FaultInstance,
    pub(crate) injected_at: Millis,
    pub(crate) crash: Option<CrashLoopState>,
}

impl ActiveFault {
    pub(crate) fn on_service(&self, service: &str) -> bool {
        matches!(&self.fault.target, FaultTarget::Service { service: s, .. } if s == service)
    }

    pub(crate) fn leak_rate(&self) -> Option<f64> {
        match self.fault.kind {
            FaultKind::MemoryLeak { leak_rate_mb_per_s } => Some(leak_rate_mb_per_s),
            _ => None,
        }
    }

    pub(crate) fn latency_multiplier(&self) -> Option<f64> {
        match self.fault.kind {
            FaultKind::CpuExhaustion { latency_multiplier } => Some(latency_multiplier),
            _ => None,
        }
    }

    pub(crate) fn target_service(&self) -> Option<&str> {
        match &self.fault.target {
            FaultTarget::Service { service, .. } => Some(service),
            FaultTarget::Pair { .. } => None,
        }
    }
}

/// Injects a fault. The result records the fault internally; nothing is
/// written to telemetry.
pub fn inject(state: &ClusterState, fault: &FaultInstance) -> Result<ClusterState, FaultError> {
    fault.validate(state.topology())?;
    if state.faults.contains_key(&fault.id) {
        return Err(FaultError::DuplicateFault(fault.id.clone()));
    }
    let now = state.clock();
    let mut next = match &fault.kind {
        FaultKind::TargetPortMisconfig { wrong_port } => state.with_overlays(
            fault.target.services()[0],
            &[ConfigPatch::replace("/spec/ports/0/targetPort", *wrong_port)],
            OverlayOrigin::Fault(fault.id.clone()),
        )?,
        _ => state.clone(),
    };
    let mut record = ActiveFault {
        fault: fault.clone(),
        injected_at: now,
        crash: None,
    };
    match &fault.kind {
        FaultKind::NetworkPartition => {
            if let FaultTarget::Pair { from, to, .. } = &fault.target {
                next.partitions.insert((from.clone(), to.clone()));
            }
        }
        FaultKind::PodCrashLoop { .. } => {
            let service = fault.target.services()[0];
            let replicas = next.replicas_mut(service);
            for r in replicas.iter_mut() {
                r.status = ReplicaStatus::CrashLoop;
                r.restarts += 1;
            }
            record.crash = Some(CrashLoopState {
                affected: (0..replicas.len()).collect(),
                phase_started: now,
                crashing: true,
            });
        }
        FaultKind::CpuExhaustion { .. } => {
            let service = fault.target.services()[0];
            let spec = next.topology().service(service).expect("validated");
            let mut usage = next.usage(service).expect("service usage");
            usage.cpu_millicores = f64::from(spec.cpu_limit_millicores);
            next.set_usage(service, usage);
        }
        FaultKind::MemoryLeak { .. } | FaultKind::TargetPortMisconfig { .. } => {}
    }
    next.faults.insert(fault.id.clone(), record);
    Ok(next)
}

/// Reverts a fault's effect.
pub fn clear(state: &ClusterState, fault_id: &str) -> Result<ClusterState, FaultError> {
    let record = state
        .faults
        .get(fault_id)
        .cloned()
        .ok_or_else(|| FaultError::UnknownFault(fault_id.to_string()))?;
    let mut next = state.clone();
    next.faults.remove(fault_id);
    let fault = &record.fault;
    match &fault.kind {
        FaultKind::TargetPortMisconfig { .. } => {
            next.remove_overlays(fault.target.services()[0], &OverlayOrigin::Fault(fault.id.clone()));
        }
        FaultKind::NetworkPartition => {
            if let FaultTarget::Pair { from, to, .. } = &fault.target {
                let still_blocked = next.faults.values().any(|f| {
                    matches!(&f.fault.target, FaultTarget::Pair { from: a, to: b, .. } if a == from && b == to)
                });
                if !still_blocked {
                    next.partitions.remove(&(from.clone(), to.clone()));
                }
            }
        }
        FaultKind::PodCrashLoop { .. } => {
            let service = fault.target.services()[0];
            if let Some(crash) = &record.crash {
                let replicas = next.replicas_mut(service);
                for &i in &crash.affected {
                    if let Some(r) = replicas.get_mut(i) {
                        r.status = ReplicaStatus::Running;
                        r.backoff_until = None;
                    }
                }
            }
        }
        FaultKind::MemoryLeak { .. } => {
            let service = fault.target.services()[0];
            let spec = next.topology().service(service).expect("validated").clone();
            let mut usage = next.usage(service).expect("service usage");
            usage.memory_mb = baseline_memory(&spec);
            next.set_usage(service, usage);
            for r in next.replicas_mut(service) {
                if r.backoff_until.is_some() {
                    r.status = ReplicaStatus::Running;
                    r.backoff_until = None;
                }
            }
        }
        FaultKind::CpuExhaustion { .. } => {
            let service = fault.target.services()[0];
            let spec = next.topology().service(service).expect("validated").clone();
            let mut usage = next.usage(service).expect("service usage");
            usage.cpu_millicores = baseline_cpu(&spec);
            next.set_usage(service, usage);
        }
    }
    Ok(next)
}

/// Replaced pods no longer carry a crash-loop fault. Replacing every pod of
/// a service (`index == None`) also ends leaks and CPU hogs running in it.
pub(crate) fn on_pods_replaced(state: &mut ClusterState, service: &str, index: Option<usize>) {
    if index.is_none() {
        let cured: Vec<String> = state
            .faults
            .iter()
            .filter(|(_, f)| f.on_service(service) && (f.leak_rate().is_some() || f.latency_multiplier().is_some()))
            .map(|(id, _)| id.clone())
            .collect();
        for id in cured {
            state.faults.remove(&id);
        }
        if let Some(spec) = state.topology().service(service).cloned() {
            let mut usage = state.usage(service).expect("usage for every service");
            usage.cpu_millicores = baseline_cpu(&spec);
            state.set_usage(service, usage);
        }
    }
    for record in state.faults.values_mut() {
        if !record.on_service(service) {
            continue;
        }
        if let Some(crash) = record.crash.as_mut() {
            match index {
                Some(i) => {
                    crash.affected.remove(&i);
                }
                None => crash.affected.clear(),
            }
        }
    }
}

/// Filters applied by [`sample_fault`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleConstraints {
    #[serde(default)]
    pub layer: Option<Layer>,
    #[serde(default)]
    pub kinds: Option<Vec<FaultKindTag>>,
    /// Service targets must be listed; partitions need both endpoints listed.
    #[serde(default)]
    pub services: Option<Vec<String>>,
}

impl SampleConstraints {
    fn admits_kind(&self, tag: FaultKindTag) -> bool {
        self.layer.is_none_or(|l| l == tag.layer())
            && self.kinds.as_ref().is_none_or(|k| k.contains(&tag))
    }

    fn admits_service(&self, name: &str) -> bool {
        self.services
            .as_ref()
            .is_none_or(|s| s.iter().any(|x| x == name))
    }
}

/// Every `(kind, target)` pair admitted by the catalog and constraints, in
/// catalog then declaration order.
pub fn candidate_targets(
    catalog: &[FaultKindTag],
    topology: &Topology,
    constraints: &SampleConstraints,
) -> Vec<(FaultKindTag, FaultTarget)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &tag in catalog {
        if !seen.insert(tag) || !constraints.admits_kind(tag) {
            continue;
        }
        for svc in topology.services() {
            if tag.targets_pair() {
                for dep in &svc.dependencies {
                    if constraints.admits_service(&svc.name) && constraints.admits_service(dep) {
                        out.push((tag, FaultTarget::pair(&svc.name, dep, &svc.namespace)));
                    }
                }
            } else if constraints.admits_service(&svc.name) {
                out.push((tag, FaultTarget::service(&svc.name, &svc.namespace)));
            }
        }
    }
    out
}

/// Samples a valid fault deterministically from `seed`.
pub fn sample_fault(
    catalog: &[FaultKindTag],
    topology: &Topology,
    seed: u64,
    constraints: &SampleConstraints,
) -> Result<FaultInstance, FaultError> {
    let candidates = candidate_targets(catalog, topology, constraints);
    if candidates.is_empty() {
        return Err(FaultError::Unsatisfiable);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tag, target) = candidates[rng.random_range(0..candidates.len())].clone();
    let kind = match tag {
        FaultKindTag::TargetPortMisconfig => {
            let listen = topology
                .service(target.services()[0])
                .map_or(0, |s| s.listen_port);
            // uniform over 1..=65535 minus the listen port
            let mut port: u16 = rng.random_range(1..=65534);
            if port >= listen {
                port += 1;
            }
            FaultKind::TargetPortMisconfig { wrong_port: port }
        }
        FaultKindTag::NetworkPartition => FaultKind::NetworkPartition,
        FaultKindTag::PodCrashLoop => FaultKind::PodCrashLoop {
            crash_period_ms: rng.random_range(5..=30u64) * 1000,
        },
        FaultKindTag::MemoryLeak => FaultKind::MemoryLeak {
            leak_rate_mb_per_s: f64::from(rng.random_range(1..=10u32)),
        },
        FaultKindTag::CpuExhaustion => FaultKind::CpuExhaustion {
            latency_multiplier: f64::from(rng.random_range(2..=20u32)),
        },
    };
    let id = format!("fault-{:016x}", rng.random::<u64>());
    Ok(FaultInstance {
        id,
        kind,
        target,
        start_ms: 0,
        duration_ms: None,
    })
}
