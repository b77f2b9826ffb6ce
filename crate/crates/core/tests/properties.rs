use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;

use faultbench_core::cluster::{ClusterState, ConfigPatch, ServiceEntry, Topology, TopologyDocument};
use faultbench_core::engine::{affected_set, Engine, EngineConfig};
use faultbench_core::fault::{FaultInstance, FaultKind, FaultTarget};
use faultbench_core::telemetry::{MetricName, SpanStatus, Window};
use faultbench_core::workload::{generate_plan, ArrivalPattern, WorkloadSpec};

const NS: &str = "prop";

/// Random DAG: edges only point from lower to higher index. Every service is
/// an entrypoint so each one receives traffic directly.
fn dag() -> impl Strategy<Value = TopologyDocument> {
    (1usize..=10)
        .prop_flat_map(|n| (Just(n), proptest::collection::vec(any::<bool>(), n * n)))
        .prop_map(|(n, bits)| TopologyDocument {
            app: "Prop".into(),
            namespace: NS.into(),
            services: (0..n)
                .map(|i| ServiceEntry {
                    name: format!("s{i}"),
                    namespace: None,
                    port: 9000 + i as i64,
                    target_port: None,
                    dependencies: (i + 1..n)
                        .filter(|j| bits[i * n + j])
                        .map(|j| format!("s{j}"))
                        .collect(),
                    replicas: 1,
                    cpu_limit: 1000,
                    mem_limit_mb: 512,
                    base_latency_ms: 1 + i as u64 % 4,
                    entrypoint: true,
                })
                .collect(),
        })
}

/// Reverse reachability by transitive closure over an adjacency matrix.
fn closure_callers(doc: &TopologyDocument, target: usize) -> BTreeSet<String> {
    let n = doc.services.len();
    let idx: BTreeMap<&str, usize> = doc.services.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    let mut reach = vec![vec![false; n]; n];
    for (i, s) in doc.services.iter().enumerate() {
        reach[i][i] = true;
        for d in &s.dependencies {
            reach[i][idx[d.as_str()]] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    (0..n).filter(|&i| reach[i][target]).map(|i| format!("s{i}")).collect()
}

fn misconfig(service: &str) -> FaultInstance {
    FaultInstance {
        id: "f".into(),
        kind: FaultKind::TargetPortMisconfig { wrong_port: 1 },
        target: FaultTarget::service(service, NS),
        start_ms: 0,
        duration_ms: None,
    }
}

fn workload(doc: &TopologyDocument, seed: u64, duration_ms: u64) -> WorkloadSpec {
    WorkloadSpec {
        pattern: ArrivalPattern::Exponential { rate: 40.0 },
        duration_ms,
        mix: doc.services.iter().map(|s| (s.name.clone(), 1.0)).collect(),
        scale: 1.0,
        seed,
    }
}

fn fault_of(kind: u8, doc: &TopologyDocument, pick: usize) -> FaultInstance {
    let s = &doc.services[pick % doc.services.len()];
    let mut f = misconfig(&s.name);
    f.kind = match kind % 4 {
        0 => FaultKind::TargetPortMisconfig { wrong_port: 1 },
        1 => FaultKind::PodCrashLoop { crash_period_ms: 2_000 },
        2 => FaultKind::CpuExhaustion { latency_multiplier: 500.0 },
        _ => match s.dependencies.first() {
            Some(d) => {
                f.target = FaultTarget::pair(&s.name, d, NS);
                FaultKind::NetworkPartition
            }
            None => FaultKind::TargetPortMisconfig { wrong_port: 1 },
        },
    };
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affected_set_is_reverse_reachability(doc in dag(), pick in any::<usize>()) {
        let topo = Topology::from_document(&doc).unwrap();
        let target = pick % doc.services.len();
        let f = misconfig(&format!("s{target}"));
        prop_assert_eq!(affected_set(&topo, &f), closure_callers(&doc, target));
    }

    #[test]
    fn telemetry_is_conserved_and_well_formed(doc in dag(), seed in any::<u64>(), kind in any::<u8>(), pick in any::<usize>()) {
        let topo = Arc::new(Topology::from_document(&doc).unwrap());
        let fault = fault_of(kind, &doc, pick);
        let plan = generate_plan(&workload(&doc, seed, 15_000));
        let arrivals = plan.len();
        let mut engine = Engine::new(ClusterState::new(topo.clone()), plan, std::slice::from_ref(&fault), seed, EngineConfig::default()).unwrap();
        engine.run(20_000);
        let store = engine.store();
        prop_assert_eq!(store.all_traces().len(), arrivals);
        let affected = affected_set(&topo, &fault);
        for s in topo.services() {
            let m = store.metrics(&s.name, NS, None, Window::default());
            let (req, ok, err) = (&m[&MetricName::RequestsTotal], &m[&MetricName::SuccessTotal], &m[&MetricName::ErrorsTotal]);
            for i in 0..req.len() {
                prop_assert_eq!(req[i].value, ok[i].value + err[i].value);
            }
            if req.last().is_some_and(|p| p.value > 0.0) && err.last().unwrap().value > 0.0 {
                prop_assert!(affected.contains(&s.name), "{} has errors but is outside {:?}", s.name, affected);
            }
        }
        for t in store.all_traces() {
            let root = &t.spans[0];
            prop_assert!(root.parent_span_id.is_empty());
            prop_assert!(topo.service(&root.service).unwrap().entrypoint);
            let by_id: BTreeMap<&str, usize> = t.spans.iter().enumerate().map(|(i, s)| (s.span_id.as_str(), i)).collect();
            prop_assert_eq!(by_id.len(), t.spans.len());
            for (i, s) in t.spans.iter().enumerate().skip(1) {
                let p = by_id.get(s.parent_span_id.as_str()).copied();
                prop_assert!(p.is_some_and(|p| p < i), "orphan span");
                let parent = &t.spans[p.unwrap()];
                prop_assert!(s.start_ms >= parent.start_ms - 1e-9);
                prop_assert!(s.start_ms + s.duration_ms <= parent.start_ms + parent.duration_ms + 1e-9);
                if matches!(s.status, SpanStatus::Error(_)) {
                    prop_assert!(matches!(parent.status, SpanStatus::Error(_)));
                }
            }
        }
    }

    #[test]
    fn split_runs_match_a_single_run(doc in dag(), seed in any::<u64>(), cut in 0u64..20_000) {
        let topo = Arc::new(Topology::from_document(&doc).unwrap());
        let fault = misconfig("s0");
        let build = || Engine::new(
            ClusterState::new(topo.clone()),
            generate_plan(&workload(&doc, seed, 20_000)),
            &[FaultInstance { start_ms: 5_000, ..fault.clone() }],
            seed,
            EngineConfig::default(),
        ).unwrap();
        let mut a = build();
        a.run(cut);
        prop_assert_eq!(a.clock(), cut);
        a.run(cut / 2); // going backwards is a no-op
        prop_assert_eq!(a.clock(), cut);
        a.run(20_000);
        let mut b = build();
        b.run(20_000);
        prop_assert_eq!(a.store().to_jsonl(), b.store().to_jsonl());
        prop_assert_eq!(a.state(), b.state());
    }

    #[test]
    fn replace_patches_are_idempotent(doc in dag(), pick in any::<usize>(), port in 1u16..=65535) {
        let state = ClusterState::new(Arc::new(Topology::from_document(&doc).unwrap()));
        let name = format!("s{}", pick % doc.services.len());
        let p = [ConfigPatch::replace("/spec/ports/0/targetPort", port)];
        let once = state.apply_patches(&name, NS, &p).unwrap();
        let twice = once.apply_patches(&name, NS, &p).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.effective_config(&name).unwrap().target_port, port);
        // failed patches leave nothing behind
        let bad = [ConfigPatch::replace("/spec/ports/0/targetPort", port), ConfigPatch::replace("/spec/nope", 1)];
        prop_assert!(once.apply_patches(&name, NS, &bad).is_err());
        prop_assert_eq!(once.effective_config(&name).unwrap().target_port, port);
    }

    #[test]
    fn plans_are_deterministic_and_ordered(seed in any::<u64>(), rate in 0.0f64..200.0, duration in 0u64..30_000) {
        let spec = WorkloadSpec {
            pattern: ArrivalPattern::Exponential { rate },
            duration_ms: duration,
            mix: BTreeMap::from([("a".to_string(), 1.0), ("b".to_string(), 3.0)]),
            scale: 1.0,
            seed,
        };
        let plan = generate_plan(&spec);
        prop_assert_eq!(&plan, &generate_plan(&spec));
        prop_assert!(plan.arrivals.windows(2).all(|w| w[0].at_ms <= w[1].at_ms));
        prop_assert!(plan.arrivals.iter().all(|a| a.at_ms < duration.max(1) && spec.mix.contains_key(&a.entrypoint)));
    }
}
