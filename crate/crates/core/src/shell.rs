//! The predefined shell behind `exec_shell`.
//!
//! Only a small whitelist of `kubectl` and `helm` commands is understood;
//! everything else is rejected with `command not supported: <head>`.

use crate::cluster::{ConfigPatch, Millis, ReplicaStatus};
use crate::engine::Engine;
use crate::telemetry::Window;

pub const DEFAULT_NAMESPACE: &str = "default";

/// Output of one shell command. `error` mirrors a non-zero exit status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShellOutput {
    pub text: String,
    pub error: bool,
}

impl ShellOutput {
    fn ok(text: impl Into<String>) -> Self {
        ShellOutput {
            text: text.into(),
            error: false,
        }
    }

    fn err(text: impl Into<String>) -> Self {
        ShellOutput {
            text: text.into(),
            error: true,
        }
    }
}

fn unsupported(head: &str) -> ShellOutput {
    ShellOutput::err(format!("command not supported: {head}"))
}

/// Positional words plus the flags this grammar knows about.
#[derive(Debug, Default)]
struct Parsed {
    words: Vec<String>,
    namespace: Option<String>,
    patch_type: Option<String>,
    patch: Option<String>,
    tail: Option<usize>,
}

fn parse_flags(args: &[String]) -> Result<Parsed, String> {
    let mut out = Parsed::default();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let (flag, inline) = match arg.split_once('=') {
            Some((f, v)) if f.starts_with('-') => (f, Some(v.to_string())),
            _ => (arg.as_str(), None),
        };
        if !flag.starts_with('-') || flag == "-" {
            out.words.push(arg.clone());
            continue;
        }
        let mut value = || {
            inline
                .clone()
                .or_else(|| it.next().cloned())
                .ok_or_else(|| format!("error: flag needs an argument: {flag}"))
        };
        match flag {
            "-n" | "--namespace" => out.namespace = Some(value()?),
            "--type" => out.patch_type = Some(value()?),
            "-p" | "--patch" => out.patch = Some(value()?),
            "--tail" => {
                let v = value()?;
                let n = v
                    .parse::<i64>()
                    .map_err(|_| format!("error: invalid argument \"{v}\" for \"--tail\" flag"))?;
                out.tail = usize::try_from(n).ok();
            }
            _ => return Err(format!("error: unknown flag: {flag}")),
        }
    }
    Ok(out)
}

fn age(now: Millis, since: Millis) -> String {
    let s = now.saturating_sub(since) / 1000;
    match s {
        0..=119 => format!("{s}s"),
        120..=599 => format!("{}m{}s", s / 60, s % 60),
        600..=10_799 => format!("{}m", s / 60),
        _ => format!("{}h", s / 3600),
    }
}

fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c + 1 == cols {
                line.push_str(cell);
            } else {
                line.push_str(&format!("{cell:<w$}   ", w = widths[c]));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out.trim_end().to_string()
}

/// Runs one command line against the engine.
pub fn exec(engine: &mut Engine, command: &str) -> ShellOutput {
    let first = command.split_whitespace().next().unwrap_or("");
    let Some(argv) = shlex::split(command) else {
        return unsupported(first);
    };
    let Some((program, rest)) = argv.split_first() else {
        return unsupported("");
    };
    match program.as_str() {
        "kubectl" => kubectl(engine, rest),
        "helm" => helm(engine, rest),
        other => unsupported(other),
    }
}

fn kubectl(engine: &mut Engine, args: &[String]) -> ShellOutput {
    let Some(verb) = args.first() else {
        return unsupported("kubectl");
    };
    let head = format!("kubectl {verb}");
    if !matches!(
        verb.as_str(),
        "get" | "describe" | "logs" | "patch" | "delete" | "rollout"
    ) {
        return unsupported(&head);
    }
    let parsed = match parse_flags(&args[1..]) {
        Ok(p) => p,
        Err(e) => return ShellOutput::err(e),
    };
    let ns = parsed
        .namespace
        .clone()
        .unwrap_or_else(|| DEFAULT_NAMESPACE.to_string());
    let words: Vec<&str> = parsed.words.iter().map(String::as_str).collect();
    match (verb.as_str(), words.as_slice()) {
        ("get", [kind]) => get(engine, kind, &ns).unwrap_or_else(|| unsupported(&format!("{head} {kind}"))),
        ("describe", [kind, name]) if is_service(kind) => {
            match engine.state().describe_service(name, &ns) {
                Ok(text) => ShellOutput::ok(text),
                Err(e) => ShellOutput::err(e.to_string()),
            }
        }
        ("describe", [kind, ..]) => unsupported(&format!("{head} {kind}")),
        ("logs", [target]) => logs(engine, target, &ns, parsed.tail),
        ("patch", [kind, name]) if is_service(kind) => patch(engine, name, &ns, &parsed),
        ("patch", [kind, ..]) => unsupported(&format!("{head} {kind}")),
        ("delete", [kind, name]) if matches!(*kind, "pod" | "pods" | "po") => {
            match engine.delete_pod(name, &ns) {
                Ok(()) => ShellOutput::ok(format!("pod \"{name}\" deleted")),
                Err(e) => ShellOutput::err(e.to_string()),
            }
        }
        ("delete", [kind, ..]) => unsupported(&format!("{head} {kind}")),
        ("rollout", ["restart", target]) => rollout_restart(engine, target, None, &ns),
        ("rollout", ["restart", kind, name]) => rollout_restart(engine, kind, Some(name), &ns),
        ("rollout", [sub, ..]) => unsupported(&format!("{head} {sub}")),
        _ => ShellOutput::err(format!("error: wrong number of arguments for \"{head}\"")),
    }
}

fn is_service(kind: &str) -> bool {
    matches!(kind, "svc" | "service" | "services")
}

fn get(engine: &Engine, kind: &str, ns: &str) -> Option<ShellOutput> {
    let state = engine.state();
    let topo = state.topology();
    let services: Vec<_> = topo.services().iter().filter(|s| s.namespace == ns).collect();
    let pods = matches!(kind, "pods" | "pod" | "po");
    if !pods && !is_service(kind) {
        return None;
    }
    if services.is_empty() {
        return Some(ShellOutput::ok(format!("No resources found in {ns} namespace.")));
    }
    let now = state.clock();
    let mut rows = Vec::new();
    if pods {
        rows.push(["NAME", "READY", "STATUS", "RESTARTS", "AGE"].map(String::from).to_vec());
        for spec in &services {
            for (name, r) in state.pods(&spec.name) {
                let (ready, status) = match r.status {
                    ReplicaStatus::Running => ("1/1", "Running"),
                    ReplicaStatus::CrashLoop => ("0/1", "CrashLoopBackOff"),
                    ReplicaStatus::Terminated => ("0/1", "Terminating"),
                };
                rows.push(vec![
                    name,
                    ready.to_string(),
                    status.to_string(),
                    r.restarts.to_string(),
                    age(now, r.started_at),
                ]);
            }
        }
    } else {
        rows.push(
            ["NAME", "TYPE", "CLUSTER-IP", "EXTERNAL-IP", "PORT(S)", "AGE"]
                .map(String::from)
                .to_vec(),
        );
        for spec in &services {
            let port = state.effective_config(&spec.name).map_or(0, |c| c.port);
            rows.push(vec![
                spec.name.clone(),
                "ClusterIP".into(),
                state.cluster_ip(&spec.name),
                "<none>".into(),
                format!("{port}/TCP"),
                age(now, 0),
            ]);
        }
    }
    Some(ShellOutput::ok(table(&rows)))
}

fn logs(engine: &Engine, target: &str, ns: &str, tail: Option<usize>) -> ShellOutput {
    let state = engine.state();
    if !state.topology().namespaces().contains(ns) {
        return ShellOutput::err(format!("Error: namespaces \"{ns}\" not found"));
    }
    let service = if let Some(name) = target.strip_prefix("deployment/") {
        match state.topology().lookup(name, ns) {
            Ok(_) => name.to_string(),
            Err(_) => {
                return ShellOutput::err(format!(
                    "Error from server (NotFound): deployments.apps \"{name}\" not found"
                ))
            }
        }
    } else {
        match state.find_pod(target) {
            Some((svc, _)) if state.topology().service(&svc).is_some_and(|s| s.namespace == ns) => svc,
            _ => return ShellOutput::err(format!("Error from server (NotFound): pods \"{target}\" not found")),
        }
    };
    let lines: Vec<String> = engine
        .store()
        .logs(&service, ns, Window::default(), tail)
        .into_iter()
        .map(|l| l.text)
        .collect();
    ShellOutput::ok(lines.join("\n"))
}

fn patch(engine: &mut Engine, name: &str, ns: &str, parsed: &Parsed) -> ShellOutput {
    match parsed.patch_type.as_deref() {
        Some("json") => {}
        Some(other) => {
            return ShellOutput::err(format!(
                "error: --type must be \"json\" in this shell, got \"{other}\""
            ))
        }
        None => return ShellOutput::err("error: only --type=json patches are supported"),
    }
    let Some(body) = parsed.patch.as_deref() else {
        return ShellOutput::err("error: must specify -p to patch");
    };
    let patches: Vec<ConfigPatch> = match serde_json::from_str(body) {
        Ok(p) => p,
        Err(e) => return ShellOutput::err(format!("error: unable to parse \"{body}\": {e}")),
    };
    match engine.apply_patches(name, ns, &patches) {
        Ok(true) => ShellOutput::ok(format!("service/{name} patched")),
        Ok(false) => ShellOutput::ok(format!("service/{name} patched (no change)")),
        Err(e) => ShellOutput::err(e.to_string()),
    }
}

fn rollout_restart(engine: &mut Engine, a: &str, b: Option<&str>, ns: &str) -> ShellOutput {
    let (kind, name) = match b {
        Some(name) => (a, name),
        None => match a.split_once('/') {
            Some((k, n)) => (k, n),
            None => return ShellOutput::err(format!("error: arguments in resource/name form must have a single resource and name: \"{a}\"")),
        },
    };
    if !matches!(kind, "deployment" | "deployments" | "deploy") {
        return unsupported(&format!("kubectl rollout restart {kind}"));
    }
    match engine.rollout_restart(name, ns) {
        Ok(()) => ShellOutput::ok(format!("deployment.apps/{name} restarted")),
        Err(crate::cluster::ClusterError::ServiceNotFound(_)) => ShellOutput::err(format!(
            "Error from server (NotFound): deployments.apps \"{name}\" not found"
        )),
        Err(e) => ShellOutput::err(e.to_string()),
    }
}

fn helm(engine: &Engine, args: &[String]) -> ShellOutput {
    let Some(verb) = args.first() else {
        return unsupported("helm");
    };
    if !matches!(verb.as_str(), "list" | "ls") {
        return unsupported(&format!("helm {verb}"));
    }
    let parsed = match parse_flags(&args[1..]) {
        Ok(p) => p,
        Err(e) => return ShellOutput::err(e),
    };
    if !parsed.words.is_empty() {
        return ShellOutput::err("Error: \"helm list\" accepts no arguments");
    }
    let ns = parsed.namespace.unwrap_or_else(|| DEFAULT_NAMESPACE.to_string());
    let topo = engine.state().topology();
    let mut rows = vec![["NAME", "NAMESPACE", "REVISION", "UPDATED", "STATUS", "CHART", "APP VERSION"]
        .map(String::from)
        .to_vec()];
    if topo.namespace() == ns {
        let release = topo.release_name();
        rows.push(vec![
            release.clone(),
            ns.clone(),
            "1".into(),
            "2024-07-08 21:16:00.000000000 +0000 UTC".into(),
            "deployed".into(),
            format!("{release}-0.1.0"),
            "1.0".into(),
        ]);
    }
    ShellOutput::ok(table(&rows))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::cluster::{load_topology, ClusterState};
    use crate::engine::EngineConfig;
    use crate::fault::{FaultInstance, FaultKind, FaultTarget};
    use crate::workload::WorkloadPlan;

    const NS: &str = "test-social-network";

    fn engine() -> Engine {
        let topo = load_topology(
            "app: SocialNetwork\nnamespace: test-social-network\nservices:\n  - {name: compose-post-service, port: 9090, dependencies: [user-service], entrypoint: true}\n  - {name: user-service, port: 9090}\n",
        )
        .unwrap();
        let fault = FaultInstance {
            id: "f".into(),
            kind: FaultKind::TargetPortMisconfig { wrong_port: 9999 },
            target: FaultTarget::service("user-service", NS),
            start_ms: 0,
            duration_ms: None,
        };
        let mut e = Engine::new(
            ClusterState::new(Arc::new(topo)),
            WorkloadPlan::default(),
            &[fault],
            0,
            EngineConfig::default(),
        )
        .unwrap();
        e.run(0);
        e
    }

    #[test]
    fn rejects_unknown_programs() {
        let mut e = engine();
        assert_eq!(exec(&mut e, "rm -rf /"), ShellOutput::err("command not supported: rm"));
        assert_eq!(
            exec(&mut e, "kubectl exec -it x -- sh").text,
            "command not supported: kubectl exec"
        );
        assert!(exec(&mut e, "").error);
    }

    #[test]
    fn patch_with_typo_namespace_then_fix() {
        let mut e = engine();
        let typo = r#"kubectl patch service user-service -n test-social-social-network --type='json' -p='[{"op":"replace","path":"/spec/ports/0/targetPort","value":9090}]'"#;
        let out = exec(&mut e, typo);
        assert_eq!(out, ShellOutput::err(r#"Error: namespaces "test-social-social-network" not found"#));
        let fixed = typo.replace("test-social-social-network", NS);
        assert_eq!(exec(&mut e, &fixed), ShellOutput::ok("service/user-service patched"));
        assert_eq!(exec(&mut e, &fixed), ShellOutput::ok("service/user-service patched (no change)"));
        let describe = exec(&mut e, "kubectl describe svc user-service -n test-social-network");
        assert!(describe.text.contains("TargetPort:        9090/TCP"));
    }

    #[test]
    fn namespace_flag_forms() {
        let mut e = engine();
        for cmd in [
            "kubectl get pods -n test-social-network",
            "kubectl get pods --namespace test-social-network",
            "kubectl get pods --namespace=test-social-network",
        ] {
            let out = exec(&mut e, cmd);
            assert!(out.text.starts_with("NAME"), "{cmd}: {}", out.text);
            assert!(out.text.contains("compose-post-service-"));
        }
        assert_eq!(
            exec(&mut e, "kubectl get svc").text,
            "No resources found in default namespace."
        );
        assert!(exec(&mut e, "kubectl get pods --bogus").error);
    }

    #[test]
    fn rollout_and_delete() {
        let mut e = engine();
        assert_eq!(
            exec(&mut e, "kubectl rollout restart deployment/user-service -n test-social-network").text,
            "deployment.apps/user-service restarted"
        );
        let pod = e.state().pods("user-service")[0].0.clone();
        let out = exec(&mut e, &format!("kubectl delete pod {pod} -n {NS}"));
        assert_eq!(out.text, format!("pod \"{pod}\" deleted"));
        assert!(exec(&mut e, &format!("kubectl delete pod {pod} -n {NS}")).error);
    }

    #[test]
    fn helm_list_shows_release() {
        let mut e = engine();
        let out = exec(&mut e, "helm list -n test-social-network");
        assert!(out.text.contains("social-network"));
        assert!(out.text.contains("deployed"));
    }

    #[test]
    fn age_formatting() {
        assert_eq!(age(5_000, 0), "5s");
        assert_eq!(age(150_000, 0), "2m30s");
        assert_eq!(age(3_600_000, 0), "60m");
        assert_eq!(age(36_000_000, 0), "10h");
    }
}
