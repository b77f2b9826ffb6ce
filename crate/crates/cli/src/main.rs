use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use faultbench_core::agents::BASELINE_STEP_BUDGET;
use faultbench_core::evaluation::{export_transcript, replay};
use faultbench_core::fault::{sample_fault, FaultKindTag, SampleConstraints};
use faultbench_core::{run_agent, Agent, BaselineAgent, EvaluationReport, Problem, ProblemCache, RunOutcome, Scenario, Session, Transcript};
use faultbench_core::scenario::ScenarioError;
use faultbench_server::{serve, AppState, HttpAgent};

#[derive(Parser)]
#[command(name = "faultbench", version, about = "Simulated microservice incidents for evaluating operations agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario end to end and write report.json + transcript.jsonl.
    Run {
        scenario: PathBuf,
        /// `baseline`, or the URL of a poll-style agent endpoint.
        #[arg(long, default_value = "baseline")]
        agent: String,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the simulated time each action takes.
        #[arg(long)]
        action_latency_ms: Option<u64>,
        /// Maximum number of non-submit actions.
        #[arg(long, default_value_t = BASELINE_STEP_BUDGET)]
        budget: usize,
    },
    /// Serve the session protocol for external agents and the console.
    Serve {
        /// Scenarios to offer in addition to the cache.
        scenarios: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        serve_addr: String,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// List cached problems.
    List {
        #[arg(long, default_value = "problems")]
        cache: PathBuf,
    },
    /// Store a scenario in the problem cache, optionally with sampled faults.
    Cache {
        scenario: PathBuf,
        #[arg(long, default_value = "problems")]
        cache: PathBuf,
        /// Store this many variants with one sampled fault each instead of
        /// the scenario's own faults.
        #[arg(long, default_value_t = 0)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-execute a stored transcript and print the resulting report.
    #[command(alias = "judge")]
    Replay {
        scenario: PathBuf,
        transcript: PathBuf,
        #[arg(long)]
        action_latency_ms: Option<u64>,
    },
}

/// Distinguishes configuration problems (exit 2) from everything else.
enum Failure {
    Config(String),
    Task,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load(path: &Path, latency: Option<u64>) -> Result<Problem, Failure> {
    let mut scenario = Scenario::load(path).map_err(|e| match e {
        ScenarioError::Io { .. } => Failure::Config(e.to_string()),
        _ => Failure::Config(format!("{}: {e}", path.display())),
    })?;
    if let Some(ms) = latency {
        scenario.action_latency_ms = ms;
    }
    Ok(Problem::from_scenario(scenario)?)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn report_json(report: &EvaluationReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

fn summarize(r: &EvaluationReport) {
    let ms = |v: Option<u64>| v.map_or("-".to_string(), |v| format!("{v} ms"));
    println!(
        "{} {}: {} (ttd {}, ttm {}, {} interactions, cost {})",
        r.task,
        r.problem_id,
        if r.success { "success" } else { "failure" },
        ms(r.ttd_ms),
        ms(r.ttm_ms),
        r.interactions,
        r.cost_proxy
    );
}

fn run(scenario: &Path, agent: &str, seed: Option<u64>, out: &Path, latency: Option<u64>, budget: usize) -> Result<(), Failure> {
    let problem = load(scenario, latency)?;
    let mut agent: Box<dyn Agent> = match agent {
        "baseline" => Box::new(BaselineAgent),
        url if url.starts_with("http://") || url.starts_with("https://") => Box::new(HttpAgent::new(url)),
        other => return Err(Failure::Config(format!("unknown agent {other:?}: expected `baseline` or a URL"))),
    };
    let mut session = Session::start(Arc::new(problem), seed)?;
    let outcome = run_agent(&mut session, agent.as_mut(), budget);
    fs::create_dir_all(out).map_err(|e| Failure::Config(format!("{}: {e}", out.display())))?;
    write(&out.join("transcript.jsonl"), &export_transcript(&session))?;
    match outcome {
        RunOutcome::Completed(report) => {
            write(&out.join("report.json"), &report_json(&report))?;
            summarize(&report);
            if report.success {
                Ok(())
            } else {
                Err(Failure::Task)
            }
        }
        RunOutcome::Abandoned { reason } => {
            println!("session abandoned: {reason}");
            Err(Failure::Task)
        }
    }
}

fn serve_cmd(scenarios: &[PathBuf], addr: &str, cache: Option<PathBuf>) -> Result<(), Failure> {
    let cache = cache.map(ProblemCache::open).transpose()?;
    let mut state = AppState::new(cache);
    for path in scenarios {
        let problem = load(path, None)?;
        println!("offering {} ({})", problem.id, path.display());
        state = state.with_problem(problem);
    }
    serve(addr, Arc::new(state), |bound| println!("listening on http://{bound}"))
        .map_err(|e| Failure::Config(format!("cannot serve on {addr}: {e}")))
}

fn list(cache: &Path) -> Result<(), Failure> {
    for p in ProblemCache::open(cache)?.list()? {
        println!("{}\t{}\t{}\t{}", p.id, p.task, p.app, p.name);
    }
    Ok(())
}

fn cache_cmd(path: &Path, dir: &Path, count: u64, seed: u64) -> Result<(), Failure> {
    let cache = ProblemCache::open(dir)?;
    let base = load(path, None)?.scenario;
    if count == 0 {
        println!("{}", cache.put(&Problem::from_scenario(base)?)?);
        return Ok(());
    }
    let topology = base.topology();
    for i in 0..count {
        let fault = sample_fault(&FaultKindTag::ALL, &topology, seed.wrapping_add(i), &SampleConstraints::default())?;
        let mut variant = base.with_faults(vec![fault])?;
        variant.name = format!("{}-{i}", base.name);
        println!("{}", cache.put(&Problem::from_scenario(variant)?)?);
    }
    Ok(())
}

fn replay_cmd(scenario: &Path, transcript: &Path, latency: Option<u64>) -> Result<(), Failure> {
    let problem = load(scenario, latency)?;
    let text = fs::read_to_string(transcript).map_err(|e| Failure::Config(format!("{}: {e}", transcript.display())))?;
    let transcript = Transcript::from_jsonl(&text).map_err(|e| Failure::Config(format!("{}: {e}", transcript.display())))?;
    let session = replay(Arc::new(problem), &transcript)?;
    match session.report() {
        Some(report) => {
            print!("{}", report_json(report));
            if report.success {
                Ok(())
            } else {
                Err(Failure::Task)
            }
        }
        None => {
            println!("transcript ends without a submission");
            Err(Failure::Task)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            agent,
            seed,
            out,
            action_latency_ms,
            budget,
        } => run(&scenario, &agent, seed, &out, action_latency_ms, budget),
        Command::Serve {
            scenarios,
            serve_addr,
            cache,
        } => serve_cmd(&scenarios, &serve_addr, cache),
        Command::List { cache } => list(&cache),
        Command::Cache {
            scenario,
            cache,
            count,
            seed,
        } => cache_cmd(&scenario, &cache, count, seed),
        Command::Replay {
            scenario,
            transcript,
            action_latency_ms,
        } => replay_cmd(&scenario, &transcript, action_latency_ms),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Task) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
