//! Append-only store of logs, metric samples and trace spans, with the
//! windowed, filterable queries behind `get_logs`, `get_metrics` and
//! `get_traces`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::Millis;

/// Default number of records returned by log and trace queries.
pub const DEFAULT_QUERY_LIMIT: usize = 100;
/// Width of one metric aggregation window.
pub const METRIC_WINDOW_MS: Millis = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TelemetryError {
    #[error("unknown metric \"{0}\"")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LogLevel {
    Info,
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub ts: Millis,
    pub service: String,
    pub namespace: String,
    pub level: LogLevel,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    RequestsTotal,
    SuccessTotal,
    ErrorsTotal,
    LatencyMsP50,
    LatencyMsP95,
    CpuMillicores,
    MemoryMb,
}

impl MetricName {
    pub const ALL: [MetricName; 7] = [
        MetricName::RequestsTotal,
        MetricName::SuccessTotal,
        MetricName::ErrorsTotal,
        MetricName::LatencyMsP50,
        MetricName::LatencyMsP95,
        MetricName::CpuMillicores,
        MetricName::MemoryMb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::RequestsTotal => "requests_total",
            MetricName::SuccessTotal => "success_total",
            MetricName::ErrorsTotal => "errors_total",
            MetricName::LatencyMsP50 => "latency_ms_p50",
            MetricName::LatencyMsP95 => "latency_ms_p95",
            MetricName::CpuMillicores => "cpu_millicores",
            MetricName::MemoryMb => "memory_mb",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = TelemetryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| TelemetryError::UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub ts: Millis,
    pub metric: MetricName,
    pub service: String,
    pub namespace: String,
    pub value: f64,
}

/// One point of a queried series; `ts` is the window start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub ts: Millis,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorKind {
    ConnectionRefused,
    Timeout,
    Crash,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::ConnectionRefused => "ConnectionRefused",
            ErrorKind::Timeout => "Timeout",
            ErrorKind::Crash => "Crash",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanStatus {
    Ok,
    Error(ErrorKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub trace_id: String,
    pub span_id: String,
    /// Empty at the root.
    pub parent_span_id: String,
    pub service: String,
    pub start_ms: f64,
    pub duration_ms: f64,
    pub status: SpanStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub trace_id: String,
    /// Pre-order; `spans[0]` is the root.
    pub spans: Vec<Span>,
}

impl Trace {
    pub fn start_ms(&self) -> f64 {
        self.spans.first().map_or(0.0, |s| s.start_ms)
    }

    /// Nested rendering rooted at the first span.
    pub fn tree(&self) -> Option<TraceTree> {
        fn build(spans: &[Span], at: usize) -> TraceTree {
            let span = &spans[at];
            let children = spans
                .iter()
                .enumerate()
                .filter(|(_, s)| s.parent_span_id == span.span_id)
                .map(|(i, _)| build(spans, i))
                .collect();
            TraceTree {
                span_id: span.span_id.clone(),
                service: span.service.clone(),
                start_ms: span.start_ms,
                duration_ms: span.duration_ms,
                status: span.status,
                children,
            }
        }
        (!self.spans.is_empty()).then(|| build(&self.spans, 0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTree {
    pub span_id: String,
    pub service: String,
    pub start_ms: f64,
    pub duration_ms: f64,
    pub status: SpanStatus,
    pub children: Vec<TraceTree>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceView {
    pub trace_id: String,
    pub root: TraceTree,
}

/// Per-hop request sample, labelled with the callee service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSample {
    pub ts: Millis,
    pub service: String,
    pub namespace: String,
    pub ok: bool,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSample {
    pub ts: Millis,
    pub service: String,
    pub namespace: String,
    pub cpu_millicores: f64,
    pub memory_mb: f64,
}

/// Half-open time window `[from, to)`; `None` bounds are open.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub from: Option<Millis>,
    pub to: Option<Millis>,
}

impl Window {
    pub fn new(from: Millis, to: Millis) -> Self {
        Window {
            from: Some(from),
            to: Some(to),
        }
    }

    pub fn contains(&self, ts: Millis) -> bool {
        self.from.is_none_or(|f| ts >= f) && self.to.is_none_or(|t| ts < t)
    }
}

/// One exported record, for JSON Lines output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TelemetryRecord {
    Log(LogRecord),
    Request(RequestSample),
    Resource(ResourceSample),
    Trace(Trace),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TelemetryStore {
    logs: Vec<LogRecord>,
    requests: Vec<RequestSample>,
    resources: Vec<ResourceSample>,
    traces: Vec<Trace>,
    watermark: Millis,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    // nearest-rank
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl TelemetryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push_log(&mut self, record: LogRecord) {
        debug_assert!(self.logs.last().is_none_or(|l| l.ts <= record.ts));
        self.logs.push(record);
    }

    pub(crate) fn push_request(&mut self, sample: RequestSample) {
        self.requests.push(sample);
    }

    pub(crate) fn push_resource(&mut self, sample: ResourceSample) {
        self.resources.push(sample);
    }

    pub(crate) fn push_trace(&mut self, trace: Trace) {
        self.traces.push(trace);
    }

    pub(crate) fn set_watermark(&mut self, now: Millis) {
        self.watermark = self.watermark.max(now);
    }

    /// Time up to which the store is complete.
    pub fn watermark(&self) -> Millis {
        self.watermark
    }

    pub fn all_logs(&self) -> &[LogRecord] {
        &self.logs
    }

    pub fn all_traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn request_samples(&self) -> &[RequestSample] {
        &self.requests
    }

    pub fn resource_samples(&self) -> &[ResourceSample] {
        &self.resources
    }

    /// Most recent `limit` records for the service in the window, oldest first.
    pub fn logs(&self, service: &str, namespace: &str, window: Window, limit: Option<usize>) -> Vec<LogRecord> {
        let limit = limit.unwrap_or(DEFAULT_QUERY_LIMIT);
        let mut picked: Vec<&LogRecord> = self
            .logs
            .iter()
            .rev()
            .filter(|l| l.service == service && l.namespace == namespace && window.contains(l.ts))
            .take(limit)
            .collect();
        picked.reverse();
        picked.into_iter().cloned().collect()
    }

    /// Series aggregated over aligned 10 s windows that intersect `window`
    /// and started before the store's watermark. Counters are cumulative
    /// from the start of the run; latency points are omitted for windows
    /// without samples.
    pub fn metrics(
        &self,
        service: &str,
        namespace: &str,
        names: Option<&[MetricName]>,
        window: Window,
    ) -> BTreeMap<MetricName, Vec<SeriesPoint>> {
        let names: Vec<MetricName> = names.map_or_else(|| MetricName::ALL.to_vec(), <[_]>::to_vec);
        let mut out: BTreeMap<MetricName, Vec<SeriesPoint>> =
            names.iter().map(|n| (*n, Vec::new())).collect();
        let from = window.from.unwrap_or(0);
        let to = window.to.unwrap_or(Millis::MAX).min(self.watermark);
        if from >= to {
            return out;
        }
        let requests: Vec<&RequestSample> = self
            .requests
            .iter()
            .filter(|r| r.service == service && r.namespace == namespace)
            .collect();
        let resources: Vec<&ResourceSample> = self
            .resources
            .iter()
            .filter(|r| r.service == service && r.namespace == namespace)
            .collect();

        let mut bucket = from / METRIC_WINDOW_MS * METRIC_WINDOW_MS;
        let (mut total, mut ok) = (0u64, 0u64);
        let mut cursor = 0;
        while bucket < to {
            let end = bucket + METRIC_WINDOW_MS;
            let mut latencies = Vec::new();
            while cursor < requests.len() && requests[cursor].ts < end {
                let r = requests[cursor];
                total += 1;
                ok += u64::from(r.ok);
                if r.ts >= bucket {
                    latencies.push(r.latency_ms);
                }
                cursor += 1;
            }
            latencies.sort_by(f64::total_cmp);
            let last_resource = resources
                .iter()
                .rev()
                .find(|r| r.ts >= bucket && r.ts < end);
            for name in &names {
                let value = match name {
                    MetricName::RequestsTotal => Some(total as f64),
                    MetricName::SuccessTotal => Some(ok as f64),
                    MetricName::ErrorsTotal => Some((total - ok) as f64),
                    MetricName::LatencyMsP50 => (!latencies.is_empty()).then(|| percentile(&latencies, 0.50)),
                    MetricName::LatencyMsP95 => (!latencies.is_empty()).then(|| percentile(&latencies, 0.95)),
                    MetricName::CpuMillicores => last_resource.map(|r| r.cpu_millicores),
                    MetricName::MemoryMb => last_resource.map(|r| r.memory_mb),
                };
                if let Some(value) = value {
                    out.get_mut(name)
                        .expect("requested metric")
                        .push(SeriesPoint { ts: bucket, value });
                }
            }
            bucket = end;
        }
        out
    }

    /// Traces that touch `service` and start inside the window, newest first.
    pub fn traces(&self, service: &str, window: Window, limit: Option<usize>) -> Vec<&Trace> {
        let limit = limit.unwrap_or(DEFAULT_QUERY_LIMIT);
        self.traces
            .iter()
            .rev()
            .filter(|t| window.contains(t.start_ms().floor() as Millis))
            .filter(|t| t.spans.iter().any(|s| s.service == service))
            .take(limit)
            .collect()
    }

    /// Whole store as JSON Lines, grouped by record type in append order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let records = self
            .logs
            .iter()
            .cloned()
            .map(TelemetryRecord::Log)
            .chain(self.requests.iter().cloned().map(TelemetryRecord::Request))
            .chain(self.resources.iter().cloned().map(TelemetryRecord::Resource))
            .chain(self.traces.iter().cloned().map(TelemetryRecord::Trace));
        for record in records {
            out.push_str(&serde_json::to_string(&record).expect("telemetry serializes"));
            out.push('\n');
        }
        out
    }
}
