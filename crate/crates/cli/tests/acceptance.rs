//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use faultbench_core::agents::BASELINE_STEP_BUDGET;
use faultbench_core::cluster::{ClusterState, ServiceEntry, Topology, TopologyDocument};
use faultbench_core::engine::{affected_set, Engine, EngineConfig};
use faultbench_core::evaluation::export_transcript;
use faultbench_core::fault::{FaultInstance, FaultKind, FaultTarget};
use faultbench_core::telemetry::{MetricName, SpanStatus, Window};
use faultbench_core::workload::{generate_plan, ArrivalPattern, WorkloadSpec};
use faultbench_core::{run_agent, Action, BaselineAgent, EvaluationReport, Problem, RunOutcome, Scenario, Session};
use faultbench_server::{run_external, spawn, AppState, Client, ExternalOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn problem(file: &str) -> Problem {
    Problem::from_scenario(Scenario::load(&scenarios_dir().join(file)).unwrap()).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Runs the binary and returns (exit code, report, transcript bytes).
fn cli_run(file: &str, seed: u64, out: &Path) -> Result<(i32, EvaluationReport, Vec<u8>), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_faultbench"))
        .arg("run")
        .arg(scenarios_dir().join(file))
        .args(["--agent", "baseline", "--seed", &seed.to_string(), "--out"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    let report = fs::read_to_string(out.join("report.json")).map_err(|e| format!("{file}: {e}"))?;
    let report = serde_json::from_str(&report).map_err(|e| e.to_string())?;
    let transcript = fs::read(out.join("transcript.jsonl")).map_err(|e| e.to_string())?;
    Ok((status.status.code().unwrap_or(-1), report, transcript))
}

fn case_study() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for (file, task) in [
        ("social-network-port-detect.yaml", "detect"),
        ("social-network-port.yaml", "mitigate"),
    ] {
        let started = Instant::now();
        let (code, r, _) = cli_run(file, 7, &tmp.path().join(task))?;
        let wall = started.elapsed();
        ensure(code == 0 && r.success, || format!("{task}: exit {code}, success={}", r.success))?;
        ensure(r.interactions <= 12, || format!("{task}: {} interactions", r.interactions))?;
        ensure(wall.as_secs_f64() < 10.0, || format!("{task}: took {wall:?}"))?;
        let ttd = r.ttd_ms.ok_or(format!("{task}: no ttd"))?;
        if task == "mitigate" {
            let ttm = r.ttm_ms.ok_or("mitigate: no ttm")?;
            ensure(ttd < ttm, || format!("ttd {ttd} >= ttm {ttm}"))?;
            notes.push(format!("mitigate ttd={ttd}ms ttm={ttm}ms n={}", r.interactions));
        } else {
            notes.push(format!("detect ttd={ttd}ms n={}", r.interactions));
        }
    }
    Ok(notes.join(", "))
}

fn shipped_scenarios() -> Vec<String> {
    let mut out: Vec<String> = fs::read_dir(scenarios_dir())
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "yaml") && Scenario::load(p).is_ok())
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    out.sort();
    out
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files = shipped_scenarios();
    ensure(!files.is_empty(), || "no scenarios shipped".into())?;
    for file in &files {
        let a = tmp.path().join(format!("{file}.a"));
        let b = tmp.path().join(format!("{file}.b"));
        cli_run(file, 11, &a)?;
        cli_run(file, 11, &b)?;
        for artifact in ["report.json", "transcript.jsonl"] {
            let x = fs::read(a.join(artifact)).map_err(|e| e.to_string())?;
            let y = fs::read(b.join(artifact)).map_err(|e| e.to_string())?;
            ensure(x == y, || format!("{file}: {artifact} differs"))?;
        }
    }
    Ok(format!("{} scenarios byte-identical", files.len()))
}

const NS: &str = "acc";

fn random_dag(rng: &mut ChaCha8Rng) -> TopologyDocument {
    let n = rng.random_range(1..=10usize);
    TopologyDocument {
        app: "Random".into(),
        namespace: NS.into(),
        services: (0..n)
            .map(|i| ServiceEntry {
                name: format!("svc-{i}"),
                namespace: None,
                port: 7000 + i as i64,
                target_port: None,
                dependencies: (i + 1..n)
                    .filter(|_| rng.random_bool(0.35))
                    .map(|j| format!("svc-{j}"))
                    .collect(),
                replicas: rng.random_range(1..=2),
                cpu_limit: 1000,
                mem_limit_mb: 512,
                base_latency_ms: rng.random_range(1..=4),
                entrypoint: true,
            })
            .collect(),
    }
}

fn uniform_workload(doc: &TopologyDocument, seed: u64, duration_ms: u64) -> WorkloadSpec {
    WorkloadSpec {
        pattern: ArrivalPattern::Exponential { rate: 40.0 },
        duration_ms,
        mix: doc.services.iter().map(|s| (s.name.clone(), 1.0)).collect(),
        scale: 1.0,
        seed,
    }
}

/// Services that can reach `target` (itself included), by Warshall closure.
fn reverse_reachable(doc: &TopologyDocument, target: &str) -> BTreeSet<String> {
    let n = doc.services.len();
    let idx: BTreeMap<&str, usize> = doc.services.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    let mut r = vec![vec![false; n]; n];
    for (i, s) in doc.services.iter().enumerate() {
        r[i][i] = true;
        for d in &s.dependencies {
            r[i][idx[d.as_str()]] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                r[i][j] |= r[i][k] && r[k][j];
            }
        }
    }
    let t = idx[target];
    (0..n).filter(|&i| r[i][t]).map(|i| doc.services[i].name.clone()).collect()
}

fn service_fault(id: &str, kind: FaultKind, service: &str, ns: &str) -> FaultInstance {
    FaultInstance {
        id: id.into(),
        kind,
        target: FaultTarget::service(service, ns),
        start_ms: 0,
        duration_ms: None,
    }
}

/// `Thrift: <ctime> TSocket::open() connect() <Host: H Port: P>: Connection refused`
/// with ctime shaped like `Mon Jul  8 21:16:00 2024`.
fn is_refused_line(line: &str, host: &str, port: u16) -> bool {
    let Some(rest) = line.strip_prefix("Thrift: ") else { return false };
    let tail = format!(" TSocket::open() connect() <Host: {host} Port: {port}>: Connection refused");
    let Some(stamp) = rest.strip_suffix(tail.as_str()) else { return false };
    let b = stamp.as_bytes();
    const DAYS: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];
    const MONTHS: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];
    let digits = |r: std::ops::Range<usize>| b[r].iter().all(u8::is_ascii_digit);
    b.len() == 24
        && DAYS.contains(&&stamp[0..3])
        && MONTHS.contains(&&stamp[4..7])
        && b[3] == b' '
        && b[7] == b' '
        && (b[8] == b' ' || b[8].is_ascii_digit())
        && b[9].is_ascii_digit()
        && b[10] == b' '
        && digits(11..13)
        && b[13] == b':'
        && digits(14..16)
        && b[16] == b':'
        && digits(17..19)
        && b[19] == b' '
        && digits(20..24)
}

fn telemetry_invariants() -> Check {
    let mut refused_runs = 0;
    let mut traces_checked = 0;
    for seed in 0..60u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = random_dag(&mut rng);
        let topo = Arc::new(Topology::from_document(&doc).unwrap());
        // prefer a target that has callers so refused connections get logged
        let with_callers: Vec<&str> = doc
            .services
            .iter()
            .map(|s| s.name.as_str())
            .filter(|s| !topo.callers_of(s).is_empty())
            .collect();
        let target = match with_callers.is_empty() {
            true => doc.services[0].name.clone(),
            false => with_callers[rng.random_range(0..with_callers.len())].to_string(),
        };
        let kind = match seed % 4 {
            0 | 1 => FaultKind::TargetPortMisconfig { wrong_port: 1 },
            2 => FaultKind::PodCrashLoop { crash_period_ms: 3_000 },
            _ => FaultKind::CpuExhaustion { latency_multiplier: 400.0 },
        };
        let misconfig = matches!(kind, FaultKind::TargetPortMisconfig { .. });
        let fault = FaultInstance {
            start_ms: 2_000,
            ..service_fault("f", kind, &target, NS)
        };
        let plan = generate_plan(&uniform_workload(&doc, seed, 20_000));
        let arrivals = plan.len();
        let mut engine = Engine::new(ClusterState::new(topo.clone()), plan, &[fault], seed, EngineConfig::default())
            .map_err(|e| e.to_string())?;
        engine.run(25_000);
        let store = engine.store();
        ensure(store.all_traces().len() == arrivals, || format!("seed {seed}: trace count"))?;

        for s in &doc.services {
            let samples: Vec<_> = store.request_samples().iter().filter(|r| r.service == s.name).collect();
            for (from, to) in [(0, 25_000), (0, 10_000), (rng.random_range(0..12_000), rng.random_range(12_000..25_000))] {
                let m = store.metrics(&s.name, NS, None, Window::new(from, to));
                let (req, ok, err) = (&m[&MetricName::RequestsTotal], &m[&MetricName::SuccessTotal], &m[&MetricName::ErrorsTotal]);
                ensure(req.len() == ok.len() && ok.len() == err.len(), || format!("seed {seed}: ragged series"))?;
                for i in 0..req.len() {
                    ensure(req[i].value == ok[i].value + err[i].value, || {
                        format!("seed {seed} {}: {} != {} + {}", s.name, req[i].value, ok[i].value, err[i].value)
                    })?;
                }
            }
            let all = store.metrics(&s.name, NS, None, Window::default());
            let total = all[&MetricName::RequestsTotal].last().map_or(0.0, |p| p.value);
            let errors = all[&MetricName::ErrorsTotal].last().map_or(0.0, |p| p.value);
            ensure(total == samples.len() as f64, || format!("seed {seed} {}: requests_total {total} vs {} samples", s.name, samples.len()))?;
            let failed = samples.iter().filter(|r| !r.ok).count();
            ensure(errors == failed as f64, || format!("seed {seed} {}: errors_total {errors} vs {failed}", s.name))?;
        }

        for t in store.all_traces() {
            traces_checked += 1;
            let root = &t.spans[0];
            ensure(root.parent_span_id.is_empty(), || format!("seed {seed}: root has a parent"))?;
            let ids: BTreeMap<&str, usize> = t.spans.iter().enumerate().map(|(i, s)| (s.span_id.as_str(), i)).collect();
            ensure(ids.len() == t.spans.len(), || format!("seed {seed}: duplicate span ids"))?;
            for (i, s) in t.spans.iter().enumerate().skip(1) {
                let p = *ids.get(s.parent_span_id.as_str()).ok_or(format!("seed {seed}: orphan span"))?;
                ensure(p < i, || format!("seed {seed}: parent after child"))?;
                let parent = &t.spans[p];
                ensure(
                    s.start_ms >= parent.start_ms - 1e-9
                        && s.start_ms + s.duration_ms <= parent.start_ms + parent.duration_ms + 1e-9,
                    || format!("seed {seed}: child interval escapes parent"),
                )?;
                if matches!(s.status, SpanStatus::Error(_)) {
                    ensure(matches!(parent.status, SpanStatus::Error(_)), || format!("seed {seed}: error under ok parent"))?;
                }
            }
            fn count(t: &faultbench_core::telemetry::TraceTree) -> usize {
                1 + t.children.iter().map(count).sum::<usize>()
            }
            let tree = t.tree().ok_or(format!("seed {seed}: no tree"))?;
            ensure(count(&tree) == t.spans.len(), || format!("seed {seed}: tree drops spans"))?;
        }

        if misconfig && !topo.callers_of(&target).is_empty() {
            let port = topo.service(&target).unwrap().listen_port;
            let refused = store.all_logs().iter().filter(|l| is_refused_line(&l.text, &target, port)).count();
            ensure(refused > 0, || format!("seed {seed}: no Connection refused line for {target}"))?;
            refused_runs += 1;
        }
    }
    ensure(refused_runs >= 10, || format!("only {refused_runs} misconfig runs had callers"))?;
    Ok(format!("60 seeds, {traces_checked} traces, {refused_runs} runs with the refused template"))
}

fn cascade_oracle() -> Check {
    for seed in 0..120u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + seed);
        let doc = random_dag(&mut rng);
        let topo = Arc::new(Topology::from_document(&doc).unwrap());
        let target = doc.services[rng.random_range(0..doc.services.len())].name.clone();
        let fault = service_fault("f", FaultKind::TargetPortMisconfig { wrong_port: 1 }, &target, NS);
        let oracle = reverse_reachable(&doc, &target);
        let affected = affected_set(&topo, &fault);
        ensure(affected == oracle, || format!("seed {seed}: affected_set {affected:?} vs oracle {oracle:?}"))?;

        let plan = generate_plan(&uniform_workload(&doc, seed, 15_000));
        let mut engine = Engine::new(ClusterState::new(topo.clone()), plan, &[fault], seed, EngineConfig::default())
            .map_err(|e| e.to_string())?;
        engine.run(15_000);
        let erroring: BTreeSet<String> = doc
            .services
            .iter()
            .filter(|s| {
                let m = engine.store().metrics(&s.name, NS, Some(&[MetricName::ErrorsTotal]), Window::default());
                m[&MetricName::ErrorsTotal].last().is_some_and(|p| p.value > 0.0)
            })
            .map(|s| s.name.clone())
            .collect();
        ensure(erroring == oracle, || format!("seed {seed}: erroring {erroring:?} vs oracle {oracle:?}"))?;
    }
    Ok("120 random DAGs".into())
}

fn fault_lifecycle() -> Check {
    let p = problem("social-network-port.yaml");
    let ns = p.namespace.clone();
    let cases = vec![
        service_fault("misconfig", FaultKind::TargetPortMisconfig { wrong_port: 9999 }, "user-service", &ns),
        FaultInstance {
            target: FaultTarget::pair("compose-post-service", "user-service", &ns),
            ..service_fault("partition", FaultKind::NetworkPartition, "user-service", &ns)
        },
        service_fault("crash", FaultKind::PodCrashLoop { crash_period_ms: 5_000 }, "user-service", &ns),
        service_fault("leak", FaultKind::MemoryLeak { leak_rate_mb_per_s: 40.0 }, "post-storage-service", &ns),
        service_fault("cpu", FaultKind::CpuExhaustion { latency_multiplier: 500.0 }, "user-service", &ns),
    ];
    let window = p.scenario.oracle.post_window_ms;
    let mut notes = Vec::new();
    for fault in cases {
        let topo = Arc::new(p.scenario.topology());
        let spec = WorkloadSpec {
            duration_ms: 200_000,
            ..p.scenario.workload.clone()
        };
        let mut engine = Engine::new(ClusterState::new(topo), generate_plan(&spec), &[], 5, EngineConfig::default())
            .map_err(|e| e.to_string())?;
        let predicate = fault.cleared_predicate();
        engine.run(10_000);
        ensure(predicate.holds(engine.state()), || format!("{}: predicate false before injection", fault.id))?;
        engine.inject(&fault).map_err(|e| e.to_string())?;
        ensure(!predicate.holds(engine.state()), || format!("{}: predicate true after injection", fault.id))?;
        engine.run(70_000);
        let during = engine.store().request_samples().iter().filter(|r| r.ts >= 10_000 && !r.ok).count();
        engine.clear(&fault.id).map_err(|e| e.to_string())?;
        ensure(predicate.holds(engine.state()), || format!("{}: predicate false after clear", fault.id))?;
        let cleared_at = engine.clock();
        engine.run(cleared_at + window);
        let mut per_service: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for r in engine.store().request_samples().iter().filter(|r| r.ts > cleared_at) {
            let c = per_service.entry(r.service.as_str()).or_default();
            c.0 += 1;
            c.1 += usize::from(!r.ok);
        }
        for (svc, (total, errors)) in &per_service {
            let rate = *errors as f64 / *total as f64;
            ensure(rate < 0.01, || format!("{}: {svc} error rate {rate:.3} after clear", fault.id))?;
        }
        ensure(during > 0, || format!("{}: fault caused no errors", fault.id))?;
        notes.push(format!("{}({during} errs)", fault.id));
    }
    Ok(notes.join(" "))
}

fn workload_statistics() -> Check {
    let mut means = Vec::new();
    for seed in 0..20 {
        let spec = WorkloadSpec {
            pattern: ArrivalPattern::Exponential { rate: 100.0 },
            duration_ms: 100_000,
            mix: BTreeMap::from([("entry".to_string(), 1.0)]),
            scale: 1.0,
            seed,
        };
        let plan = generate_plan(&spec);
        let gaps: Vec<f64> = plan.arrivals.windows(2).map(|w| (w[1].at_ms - w[0].at_ms) as f64).collect();
        ensure(!gaps.is_empty(), || format!("seed {seed}: empty plan"))?;
        means.push(gaps.iter().sum::<f64>() / gaps.len() as f64);
    }
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    ensure((mean - 10.0).abs() <= 0.5, || format!("mean interarrival {mean:.3} ms"))?;
    Ok(format!("mean interarrival {mean:.3} ms over 20 seeds"))
}

fn aci_robustness() -> Check {
    let p = Arc::new(problem("social-network-port.yaml"));
    let mut session = Session::start(p.clone(), Some(7)).map_err(|e| e.to_string())?;
    let configs = |s: &Session| -> Vec<_> {
        p.scenario
            .topology
            .services
            .iter()
            .map(|svc| s.engine().state().effective_config(&svc.name))
            .collect::<Vec<_>>()
    };
    let before = configs(&session);
    let bad = [
        Action::new("reboot_cluster", json!({})),
        Action::new("get_logs", json!({"service": 42})),
        Action::new("get_metrics", json!({"service": "user-service", "namespace": "test-social-network", "names": ["nope"]})),
        Action::new("exec_shell", json!({"command": "rm -rf /"})),
        Action::new("exec_shell", json!({"command": "kubectl apply -f x.yaml"})),
        Action::new(
            "exec_shell",
            json!({"command": "kubectl patch service user-service -n test-social-network-service --type='json' -p='[{\"op\": \"replace\", \"path\": \"/spec/ports/0/targetPort\", \"value\": 9090}]'"}),
        ),
    ];
    for a in bad {
        let label = format!("{} {}", a.api, a.args);
        let obs = session.submit_action(a, None).map_err(|e| e.to_string())?;
        ensure(obs.error, || format!("{label}: not an error observation"))?;
        ensure(configs(&session) == before, || format!("{label}: changed cluster config"))?;
    }
    let typo = &session.transcript().last().unwrap().observation.output;
    ensure(typo.contains("test-social-network-service"), || format!("typo observation: {typo}"))?;
    match run_agent(&mut session, &mut BaselineAgent, BASELINE_STEP_BUDGET) {
        RunOutcome::Completed(r) if r.success => Ok(format!("6 bad actions rejected, then solved in {} interactions", r.interactions)),
        other => Err(format!("session not completable afterwards: {other:?}")),
    }
}

fn wire_equivalence() -> Check {
    let files = ["social-network-port.yaml", "social-network-port-detect.yaml", "social-network-port-localize.yaml"];
    let mut state = AppState::new(None);
    for f in files {
        state = state.with_problem(problem(f));
    }
    let addr = spawn("127.0.0.1:0", Arc::new(state)).map_err(|e| e.to_string())?;
    let url = format!("http://{addr}");
    for f in files {
        let p = Arc::new(problem(f));
        let ExternalOutcome::Completed { session_id, report } = run_external(&url, &p.id, Some(7), &mut BaselineAgent, BASELINE_STEP_BUDGET)
        else {
            return Err(format!("{f}: remote run abandoned"));
        };
        let remote = Client::new(&url).transcript(&session_id).map_err(|e| e.to_string())?;
        let mut local = Session::start(p, Some(7)).map_err(|e| e.to_string())?;
        let RunOutcome::Completed(local_report) = run_agent(&mut local, &mut BaselineAgent, BASELINE_STEP_BUDGET) else {
            return Err(format!("{f}: local run abandoned"));
        };
        ensure(remote == export_transcript(&local), || format!("{f}: transcripts differ"))?;
        ensure(report == local_report, || format!("{f}: reports differ"))?;
    }
    Ok("3 task variants identical".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("case-study replication", case_study),
        ("determinism", determinism),
        ("telemetry invariants", telemetry_invariants),
        ("cascade oracle", cascade_oracle),
        ("fault lifecycle", fault_lifecycle),
        ("workload statistics", workload_statistics),
        ("ACI robustness", aci_robustness),
        ("wire-protocol equivalence", wire_equivalence),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
