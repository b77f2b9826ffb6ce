//! Deterministic discrete-event core.
//!
//! The engine advances a [`ClusterState`] under a workload plan and a fault
//! schedule. Events are processed in `(time, sequence)` order: fault
//! schedule events first, then the 100 ms resource tick, then request
//! arrivals. Requests are routed instantaneously at their arrival time and
//! every processed request writes one trace, one metric sample per hop and
//! the log lines a real deployment would print.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    baseline_cpu, baseline_memory, pod_name, ClusterError, ClusterState, ConfigPatch, Millis,
    ReplicaStatus, Topology,
};
use crate::fault::{self, FaultError, FaultInstance, FaultKind, FaultTarget};
use crate::telemetry::{
    ErrorKind, LogLevel, LogRecord, RequestSample, ResourceSample, Span, SpanStatus,
    TelemetryStore, Trace,
};
use crate::workload::WorkloadPlan;

/// Caller name used for the external hop into an entrypoint.
pub const CLIENT: &str = "client";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("unknown entrypoint {0:?}")]
    UnknownEntrypoint(String),
    #[error("duplicate fault id {0:?} in schedule")]
    DuplicateScheduledFault(String),
    #[error(transparent)]
    Fault(#[from] FaultError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EngineConfig {
    pub tick_ms: Millis,
    /// A hop slower than this fails with `Timeout`.
    pub latency_ceiling_ms: f64,
    pub heartbeat_ms: Millis,
    /// Restart back-off after an out-of-memory kill.
    pub oom_backoff_ms: Millis,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            tick_ms: 100,
            latency_ceiling_ms: 1000.0,
            heartbeat_ms: 10_000,
            oom_backoff_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestStatus {
    Success,
    Error(ErrorKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HopStatus {
    Ok,
    /// This hop is where the request failed.
    Failed(ErrorKind),
    /// A descendant hop failed and the error was returned through this one.
    Propagated(ErrorKind),
}

/// Why a hop failed; used to attribute failures to faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureCause {
    Partitioned,
    PortMismatch,
    NoRunningReplica,
    OutOfMemory,
    Overloaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub caller: String,
    pub callee: String,
    pub status: HopStatus,
    /// Index of the enclosing hop; `None` for the client hop.
    pub parent: Option<usize>,
    pub start_ms: f64,
    pub duration_ms: f64,
    pub cause: Option<FailureCause>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub status: RequestStatus,
    pub latency_ms: f64,
    /// Call order (pre-order of the call tree).
    pub hops: Vec<Hop>,
}

impl RequestOutcome {
    /// The hop where the request failed, if it did.
    pub fn failing_hop(&self) -> Option<&Hop> {
        self.hops
            .iter()
            .find(|h| matches!(h.status, HopStatus::Failed(_)))
    }
}

fn hop_latency(state: &ClusterState, callee: &str) -> f64 {
    let base = state
        .topology()
        .service(callee)
        .map_or(0.0, |s| s.base_latency_ms as f64);
    let multiplier = state
        .faults
        .values()
        .filter(|f| f.target_service() == Some(callee))
        .filter_map(|f| f.latency_multiplier())
        .fold(1.0, f64::max);
    base * multiplier
}

fn hop_failure(
    state: &ClusterState,
    caller: &str,
    callee: &str,
    latency: f64,
    config: &EngineConfig,
) -> Option<(ErrorKind, FailureCause)> {
    let spec = state.topology().service(callee)?;
    if state.is_partitioned(caller, callee) {
        return Some((ErrorKind::ConnectionRefused, FailureCause::Partitioned));
    }
    let cfg = state.effective_config(callee)?;
    if cfg.port != spec.listen_port || cfg.target_port != spec.listen_port {
        return Some((ErrorKind::ConnectionRefused, FailureCause::PortMismatch));
    }
    if !state.has_running_replica(callee) {
        return Some((ErrorKind::ConnectionRefused, FailureCause::NoRunningReplica));
    }
    if state
        .usage(callee)
        .is_some_and(|u| u.memory_mb >= f64::from(spec.mem_limit_mb))
    {
        return Some((ErrorKind::Crash, FailureCause::OutOfMemory));
    }
    if latency > config.latency_ceiling_ms {
        return Some((ErrorKind::Timeout, FailureCause::Overloaded));
    }
    None
}

/// Calls `callee` from `caller` starting at `start`; returns the hop duration
/// and the error kind if the call failed.
fn visit(
    state: &ClusterState,
    caller: &str,
    callee: &str,
    parent: Option<usize>,
    start: f64,
    hops: &mut Vec<Hop>,
    config: &EngineConfig,
) -> (f64, Option<ErrorKind>) {
    let idx = hops.len();
    let own = hop_latency(state, callee);
    hops.push(Hop {
        caller: caller.to_string(),
        callee: callee.to_string(),
        status: HopStatus::Ok,
        parent,
        start_ms: start,
        duration_ms: own,
        cause: None,
    });
    if let Some((kind, cause)) = hop_failure(state, caller, callee, own, config) {
        let duration = if kind == ErrorKind::Timeout {
            config.latency_ceiling_ms
        } else {
            own
        };
        let hop = &mut hops[idx];
        hop.status = HopStatus::Failed(kind);
        hop.cause = Some(cause);
        hop.duration_ms = duration;
        return (duration, Some(kind));
    }
    let deps = state
        .topology()
        .service(callee)
        .map(|s| s.dependencies.clone())
        .unwrap_or_default();
    let mut elapsed = 0.0;
    for dep in &deps {
        let (d, err) = visit(state, callee, dep, Some(idx), start + elapsed, hops, config);
        elapsed += d;
        if let Some(kind) = err {
            let hop = &mut hops[idx];
            hop.status = HopStatus::Propagated(kind);
            hop.duration_ms = elapsed + own;
            return (elapsed + own, Some(kind));
        }
    }
    hops[idx].duration_ms = elapsed + own;
    (elapsed + own, None)
}

/// Routes one request depth-first through the entrypoint's dependency
/// closure, stopping at the first failing hop.
pub fn route_request(
    state: &ClusterState,
    entrypoint: &str,
    t: Millis,
    config: &EngineConfig,
) -> Result<RequestOutcome, EngineError> {
    if !state.topology().contains(entrypoint) {
        return Err(EngineError::UnknownEntrypoint(entrypoint.to_string()));
    }
    let mut hops = Vec::new();
    let (latency, err) = visit(state, CLIENT, entrypoint, None, t as f64, &mut hops, config);
    Ok(RequestOutcome {
        status: err.map_or(RequestStatus::Success, RequestStatus::Error),
        latency_ms: latency,
        hops,
    })
}

/// Services that can observe the fault: its root services plus every caller
/// that transitively depends on them. For a partition only the calling side
/// propagates.
pub fn affected_set(topology: &Topology, fault: &FaultInstance) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = fault
        .target
        .services()
        .into_iter()
        .map(str::to_string)
        .collect();
    let origin = match &fault.target {
        FaultTarget::Pair { from, .. } => from.as_str(),
        FaultTarget::Service { service, .. } => service.as_str(),
    };
    let mut queue = VecDeque::from([origin.to_string()]);
    while let Some(at) = queue.pop_front() {
        for caller in topology.callers_of(&at) {
            if out.insert(caller.to_string()) || caller == origin {
                queue.push_back(caller.to_string());
            }
        }
    }
    out
}

fn sim_epoch() -> DateTime<Utc> {
    NaiveDate::from_ymd_opt(2024, 7, 8)
        .and_then(|d| d.and_hms_opt(21, 16, 0))
        .expect("valid epoch")
        .and_utc()
}

/// `ctime`-style wall-clock rendering of a simulated time.
pub fn ctime(t: Millis) -> String {
    (sim_epoch() + Duration::milliseconds(t as i64))
        .format("%a %b %e %H:%M:%S %Y")
        .to_string()
}

fn log_stamp(t: Millis) -> String {
    (sim_epoch() + Duration::milliseconds(t as i64))
        .format("[%Y-%b-%d %H:%M:%S%.3f]")
        .to_string()
}

/// Log line a caller prints when a downstream call fails.
pub fn failure_log_line(kind: ErrorKind, t: Millis, host: &str, port: u16, ceiling_ms: f64) -> String {
    let ts = ctime(t);
    match kind {
        ErrorKind::ConnectionRefused => {
            format!("Thrift: {ts} TSocket::open() connect() <Host: {host} Port: {port}>: Connection refused")
        }
        ErrorKind::Timeout => format!(
            "Thrift: {ts} TSocket::read() THRIFT_EAGAIN (timed out) after {ceiling_ms}ms <Host: {host} Port: {port}>: Resource temporarily unavailable"
        ),
        ErrorKind::Crash => {
            format!("Thrift: {ts} TSocket::read() recv() <Host: {host} Port: {port}>: Connection reset by peer")
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, PartialEq)]
enum ScheduledAction {
    Stop(String),
    Start(Box<FaultInstance>),
}

#[derive(Debug, Clone, PartialEq)]
struct Scheduled {
    at: Millis,
    action: ScheduledAction,
}

type StatusView = BTreeMap<String, Vec<(u32, ReplicaStatus)>>;

#[derive(Debug, Clone)]
pub struct Engine {
    state: ClusterState,
    plan: WorkloadPlan,
    next_arrival: usize,
    schedule: Vec<Scheduled>,
    next_scheduled: usize,
    next_tick: Millis,
    last_tick: Option<Millis>,
    store: TelemetryStore,
    config: EngineConfig,
    seed: u64,
    traces_emitted: u64,
    onsets: BTreeMap<String, Millis>,
    activations: BTreeMap<String, Millis>,
    tick_counts: BTreeMap<String, u64>,
    heartbeat_counts: BTreeMap<String, u64>,
    statuses: StatusView,
}

impl Engine {
    pub fn new(
        state: ClusterState,
        plan: WorkloadPlan,
        faults: &[FaultInstance],
        seed: u64,
        config: EngineConfig,
    ) -> Result<Self, EngineError> {
        let mut ids = BTreeSet::new();
        let mut schedule = Vec::new();
        for f in faults {
            f.validate(state.topology())?;
            if !ids.insert(f.id.clone()) || state.faults.contains_key(&f.id) {
                return Err(EngineError::DuplicateScheduledFault(f.id.clone()));
            }
            schedule.push(Scheduled {
                at: f.start_ms,
                action: ScheduledAction::Start(Box::new(f.clone())),
            });
            if let Some(d) = f.duration_ms {
                schedule.push(Scheduled {
                    at: f.start_ms + d,
                    action: ScheduledAction::Stop(f.id.clone()),
                });
            }
        }
        // stable: equal times keep stops before starts, then declaration order
        schedule.sort_by_key(|s| (s.at, matches!(s.action, ScheduledAction::Start(_))));
        for a in &plan.arrivals {
            if !state.topology().contains(&a.entrypoint) {
                return Err(EngineError::UnknownEntrypoint(a.entrypoint.clone()));
            }
        }
        let tick = config.tick_ms.max(1);
        let next_tick = state.clock().div_ceil(tick) * tick;
        let next_arrival = plan.arrivals.partition_point(|a| a.at_ms < state.clock());
        let statuses = status_view(&state);
        Ok(Engine {
            state,
            plan,
            next_arrival,
            schedule,
            next_scheduled: 0,
            next_tick,
            last_tick: None,
            store: TelemetryStore::new(),
            config: EngineConfig { tick_ms: tick, ..config },
            seed,
            traces_emitted: 0,
            onsets: BTreeMap::new(),
            activations: BTreeMap::new(),
            tick_counts: BTreeMap::new(),
            heartbeat_counts: BTreeMap::new(),
            statuses,
        })
    }

    pub fn state(&self) -> &ClusterState {
        &self.state
    }

    pub fn store(&self) -> &TelemetryStore {
        &self.store
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn clock(&self) -> Millis {
        self.state.clock()
    }

    /// First time a request failed because of the fault.
    pub fn fault_onset(&self, fault_id: &str) -> Option<Millis> {
        self.onsets.get(fault_id).copied()
    }

    /// When the fault was injected by the schedule or [`Engine::inject`].
    pub fn fault_activation(&self, fault_id: &str) -> Option<Millis> {
        self.activations.get(fault_id).copied()
    }

    /// Processes every event with time `<= until` and moves the clock there.
    pub fn run(&mut self, until: Millis) {
        if until < self.state.clock() {
            return;
        }
        loop {
            let sched = self.schedule.get(self.next_scheduled).map(|s| s.at);
            let arrival = self.plan.arrivals.get(self.next_arrival).map(|a| a.at_ms);
            let t = [sched, Some(self.next_tick), arrival]
                .into_iter()
                .flatten()
                .min()
                .expect("tick always pending");
            if t > until {
                break;
            }
            self.state.advance_clock(t);
            if sched == Some(t) {
                let event = self.schedule[self.next_scheduled].clone();
                self.next_scheduled += 1;
                self.handle_scheduled(event);
            } else if self.next_tick == t {
                self.tick(t);
                self.next_tick += self.config.tick_ms;
            } else {
                let entry = self.plan.arrivals[self.next_arrival].entrypoint.clone();
                self.next_arrival += 1;
                self.process_request(&entry, t);
            }
        }
        self.state.advance_clock(until);
        self.store.set_watermark(until);
    }

    fn handle_scheduled(&mut self, event: Scheduled) {
        match event.action {
            ScheduledAction::Start(f) => {
                // schedule was validated up front; a fault the agent already
                // made impossible (e.g. scaled away) is skipped
                let _ = self.inject(&f);
            }
            ScheduledAction::Stop(id) => {
                let _ = self.clear(&id);
            }
        }
    }

    /// Injects a fault now. Writes no telemetry of its own.
    pub fn inject(&mut self, fault: &FaultInstance) -> Result<(), FaultError> {
        self.state = fault::inject(&self.state, fault)?;
        self.activations.insert(fault.id.clone(), self.state.clock());
        self.sync_statuses();
        Ok(())
    }

    pub fn clear(&mut self, fault_id: &str) -> Result<(), FaultError> {
        self.state = fault::clear(&self.state, fault_id)?;
        self.sync_statuses();
        Ok(())
    }

    /// Applies agent patches atomically and logs a config-change notice.
    /// Returns whether the effective config changed.
    pub fn apply_patches(
        &mut self,
        service: &str,
        namespace: &str,
        patches: &[ConfigPatch],
    ) -> Result<bool, ClusterError> {
        let next = self.state.apply_patches(service, namespace, patches)?;
        let changed = next.config_document(service) != self.state.config_document(service);
        self.state = next;
        if changed {
            let t = self.state.clock();
            for p in patches {
                let value = p.value.as_ref().map_or_else(String::new, |v| format!(" = {v}"));
                let op = serde_json::to_value(p.op).ok();
                let op = op.as_ref().and_then(|v| v.as_str()).unwrap_or("patch");
                self.log(
                    service,
                    LogLevel::Info,
                    format!("{} <info>: service/{service} configuration updated: {op} {}{value}", log_stamp(t), p.path),
                );
            }
        }
        self.sync_statuses();
        Ok(changed)
    }

    pub fn rollout_restart(&mut self, service: &str, namespace: &str) -> Result<(), ClusterError> {
        self.state = self.state.rollout_restart(service, namespace)?;
        self.sync_statuses();
        Ok(())
    }

    pub fn delete_pod(&mut self, pod: &str, namespace: &str) -> Result<(), ClusterError> {
        self.state = self.state.delete_pod(pod, namespace)?;
        self.sync_statuses();
        Ok(())
    }

    /// Continues from the current state with a different plan and an empty
    /// store. Pending scheduled fault events carry over.
    pub fn fork(&self, plan: WorkloadPlan) -> Engine {
        let now = self.state.clock();
        let next_arrival = plan.arrivals.partition_point(|a| a.at_ms < now);
        Engine {
            plan,
            next_arrival,
            store: TelemetryStore::new(),
            ..self.clone()
        }
    }

    fn namespace_of(&self, service: &str) -> String {
        self.state
            .topology()
            .service(service)
            .map_or_else(String::new, |s| s.namespace.clone())
    }

    fn log(&mut self, service: &str, level: LogLevel, text: String) {
        let namespace = self.namespace_of(service);
        self.store.push_log(LogRecord {
            ts: self.state.clock(),
            service: service.to_string(),
            namespace,
            level,
            text,
        });
    }

    /// Logs pod lifecycle transitions since the last call.
    fn sync_statuses(&mut self) {
        let now = status_view(&self.state);
        let t = self.state.clock();
        let mut lines = Vec::new();
        for (service, pods) in &now {
            let before = self.statuses.get(service);
            for (i, &(generation, status)) in pods.iter().enumerate() {
                let prev = before.and_then(|b| b.get(i)).copied();
                let pod = pod_name(service, generation, i);
                let replaced = prev.is_some_and(|(g, _)| g != generation);
                let prev_status = prev.map(|(_, s)| s);
                match status {
                    ReplicaStatus::CrashLoop if prev_status != Some(ReplicaStatus::CrashLoop) || replaced => {
                        lines.push((
                            service.clone(),
                            LogLevel::Warn,
                            format!("{} <warning>: Back-off restarting failed container {service} in pod {pod}", log_stamp(t)),
                        ));
                    }
                    ReplicaStatus::Running if prev_status != Some(ReplicaStatus::Running) || replaced => {
                        lines.push((
                            service.clone(),
                            LogLevel::Info,
                            format!("{} <info>: Started container {service} in pod {pod}", log_stamp(t)),
                        ));
                    }
                    _ => {}
                }
            }
        }
        self.statuses = now;
        for (service, level, text) in lines {
            self.log(&service, level, text);
        }
    }

    fn tick(&mut self, t: Millis) {
        let dt_start = self.last_tick.unwrap_or(t);
        let services: Vec<_> = self.state.topology().services().to_vec();

        // crash-loop phases
        let mut phase_changes = Vec::new();
        for (id, record) in self.state.faults.iter_mut() {
            let (FaultKind::PodCrashLoop { crash_period_ms }, Some(crash)) =
                (&record.fault.kind, record.crash.as_mut())
            else {
                continue;
            };
            if t.saturating_sub(crash.phase_started) >= *crash_period_ms {
                crash.crashing = !crash.crashing;
                crash.phase_started = t;
                phase_changes.push((
                    id.clone(),
                    record.fault.target.services()[0].to_string(),
                    crash.crashing,
                    crash.affected.clone(),
                ));
            }
        }
        for (_, service, crashing, affected) in phase_changes {
            let replicas = self.state.replicas_mut(&service);
            for i in affected {
                if let Some(r) = replicas.get_mut(i) {
                    if crashing {
                        r.status = ReplicaStatus::CrashLoop;
                        r.restarts += 1;
                    } else {
                        r.status = ReplicaStatus::Running;
                    }
                }
            }
        }

        for spec in &services {
            let mut usage = self.state.usage(&spec.name).expect("usage for every service");
            // back-off expiry
            for r in self.state.replicas_mut(&spec.name) {
                if r.backoff_until.is_some_and(|until| until <= t) {
                    r.backoff_until = None;
                    r.status = ReplicaStatus::Running;
                }
            }
            // out-of-memory kill
            if usage.memory_mb >= f64::from(spec.mem_limit_mb) {
                let mut killed = Vec::new();
                for (i, r) in self.state.replicas_mut(&spec.name).iter_mut().enumerate() {
                    if r.status == ReplicaStatus::Running {
                        r.status = ReplicaStatus::CrashLoop;
                        r.restarts += 1;
                        r.backoff_until = Some(t + self.config.oom_backoff_ms);
                        killed.push(pod_name(&spec.name, r.generation, i));
                    }
                }
                for pod in killed {
                    self.log(
                        &spec.name,
                        LogLevel::Error,
                        format!("{} <error>: container {} in pod {pod} terminated: OOMKilled (exit code 137)", log_stamp(t), spec.name),
                    );
                }
                usage.memory_mb = baseline_memory(spec);
            }
            // leak integration
            for record in self.state.faults.values() {
                if record.target_service() == Some(spec.name.as_str()) {
                    if let Some(rate) = record.leak_rate() {
                        let from = dt_start.max(record.injected_at);
                        usage.memory_mb += rate * t.saturating_sub(from) as f64 / 1000.0;
                    }
                }
            }
            let hog = self
                .state
                .faults
                .values()
                .any(|f| f.target_service() == Some(spec.name.as_str()) && f.latency_multiplier().is_some());
            let served = self.tick_counts.remove(&spec.name).unwrap_or(0);
            usage.cpu_millicores = if hog {
                f64::from(spec.cpu_limit_millicores)
            } else {
                (baseline_cpu(spec) + 20.0 * served as f64).min(f64::from(spec.cpu_limit_millicores))
            };
            self.state.set_usage(&spec.name, usage);
            self.store.push_resource(ResourceSample {
                ts: t,
                service: spec.name.clone(),
                namespace: spec.namespace.clone(),
                cpu_millicores: usage.cpu_millicores,
                memory_mb: usage.memory_mb,
            });
        }
        self.last_tick = Some(t);
        self.sync_statuses();

        if t > 0 && t.is_multiple_of(self.config.heartbeat_ms) {
            for spec in &services {
                let served = self.heartbeat_counts.remove(&spec.name).unwrap_or(0);
                if self.state.has_running_replica(&spec.name) {
                    self.log(
                        &spec.name,
                        LogLevel::Info,
                        format!("{} <info>: served {served} requests in the last {}s", log_stamp(t), self.config.heartbeat_ms / 1000),
                    );
                }
            }
        }
    }

    fn attribute(&self, hop: &Hop) -> Option<String> {
        let cause = hop.cause?;
        self.state.faults.iter().find_map(|(id, record)| {
            let matches = match (&record.fault.kind, cause) {
                (FaultKind::NetworkPartition, FailureCause::Partitioned) => matches!(
                    &record.fault.target,
                    FaultTarget::Pair { from, to, .. } if *from == hop.caller && *to == hop.callee
                ),
                (FaultKind::TargetPortMisconfig { .. }, FailureCause::PortMismatch)
                | (FaultKind::PodCrashLoop { .. }, FailureCause::NoRunningReplica)
                | (FaultKind::MemoryLeak { .. }, FailureCause::NoRunningReplica | FailureCause::OutOfMemory)
                | (FaultKind::CpuExhaustion { .. }, FailureCause::Overloaded) => {
                    record.target_service() == Some(hop.callee.as_str())
                }
                _ => false,
            };
            matches.then(|| id.clone())
        })
    }

    fn process_request(&mut self, entrypoint: &str, t: Millis) {
        let outcome = route_request(&self.state, entrypoint, t, &self.config)
            .expect("plan entrypoints validated at construction");
        let n = self.traces_emitted;
        self.traces_emitted += 1;
        let trace_id = format!(
            "{:016x}{:016x}",
            splitmix(self.seed ^ n.rotate_left(17)),
            splitmix(self.seed.wrapping_add(n))
        );
        let span_ids: Vec<String> = (0..outcome.hops.len())
            .map(|i| format!("{:016x}", splitmix(self.seed ^ (n << 12 | i as u64).wrapping_mul(31))))
            .collect();
        let mut spans = Vec::with_capacity(outcome.hops.len());
        for (i, hop) in outcome.hops.iter().enumerate() {
            let namespace = self.namespace_of(&hop.callee);
            let ok = hop.status == HopStatus::Ok;
            self.store.push_request(RequestSample {
                ts: t,
                service: hop.callee.clone(),
                namespace,
                ok,
                latency_ms: hop.duration_ms,
            });
            *self.tick_counts.entry(hop.callee.clone()).or_default() += 1;
            *self.heartbeat_counts.entry(hop.callee.clone()).or_default() += 1;
            spans.push(Span {
                trace_id: trace_id.clone(),
                span_id: span_ids[i].clone(),
                parent_span_id: hop.parent.map_or_else(String::new, |p| span_ids[p].clone()),
                service: hop.callee.clone(),
                start_ms: hop.start_ms,
                duration_ms: hop.duration_ms,
                status: match hop.status {
                    HopStatus::Ok => SpanStatus::Ok,
                    HopStatus::Failed(k) | HopStatus::Propagated(k) => SpanStatus::Error(k),
                },
            });
        }
        if let Some(hop) = outcome.failing_hop() {
            if let HopStatus::Failed(kind) = hop.status {
                if hop.caller != CLIENT {
                    let port = self
                        .state
                        .effective_config(&hop.callee)
                        .map_or(0, |c| c.port);
                    let line = failure_log_line(kind, t, &hop.callee, port, self.config.latency_ceiling_ms);
                    let caller = hop.caller.clone();
                    self.log(&caller, LogLevel::Error, line);
                }
            }
            if let Some(id) = self.attribute(hop) {
                self.onsets.entry(id).or_insert(t);
            }
        }
        self.store.push_trace(Trace { trace_id, spans });
    }
}

fn status_view(state: &ClusterState) -> StatusView {
    state
        .topology()
        .services()
        .iter()
        .map(|s| {
            (
                s.name.clone(),
                state
                    .replicas(&s.name)
                    .iter()
                    .map(|r| (r.generation, r.status))
                    .collect(),
            )
        })
        .collect()
}
