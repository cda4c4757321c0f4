use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use instructdrive_core::agents::{attach, run_policy, scripted_policy, Transport};
use instructdrive_core::eval::{score_episode, BenchmarkReport, EpisodeResult, EvalConfig, FormulaVariant};
use instructdrive_core::log::{Event, TrajectoryLog};
use instructdrive_core::protocol::client::{ClientError, LineTransport};
use instructdrive_core::protocol::replay::{first_divergence, ReplayScript};
use instructdrive_core::protocol::server::{serve, ServeConfig};
use instructdrive_core::protocol::{ExternChannel, WsChannel};
use instructdrive_core::scenario::{generate_suite, read_suite, write_suite, Scenario, MANIFEST_FILE};
use instructdrive_core::{run_episode, Driver, EpisodeOptions, EpisodeOutcome};
use rayon::prelude::*;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "instructdrive", version, about = "Instruction-following driving benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario suite.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one episode and write its log and result.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        agent: AgentKind,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Rescore a recorded log without simulating.
    Eval {
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Run every scenario of a suite with one agent and write a report.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        agent: AgentKind,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Host episodes for remote agents and the UI assets.
    Serve {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Stop after this many connections.
        #[arg(long)]
        max_connections: Option<usize>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Scripted agent speaking the line protocol on stdin/stdout.
    #[command(hide = true)]
    Agent,
}

#[derive(Args, Clone)]
struct Source {
    /// Suite directory (holding a manifest).
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Scenario file, or a scenario id inside --suite.
    #[arg(long)]
    scenario: Option<String>,
}

#[derive(Args, Clone)]
struct EvalArgs {
    #[arg(long)]
    t_limit: Option<f64>,
    /// w_ttc,w_sv,w_te
    #[arg(long)]
    weights: Option<Weights>,
    #[arg(long)]
    variant: Option<FormulaVariant>,
}

#[derive(Clone, Copy)]
struct Weights([f64; 3]);

impl FromStr for Weights {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("weight `{p}`: {e}")))
            .collect::<Result<_, _>>()?;
        <[f64; 3]>::try_from(parts).map(Weights).map_err(|p| format!("expected 3 weights, got {}", p.len()))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum AgentKind {
    Idm,
    Mobil,
    Scripted,
    Extern(String),
    Ws(u16),
    Replay(PathBuf),
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match (kind, arg) {
            ("idm", "") => Ok(AgentKind::Idm),
            ("mobil", "") => Ok(AgentKind::Mobil),
            ("scripted", "") => Ok(AgentKind::Scripted),
            ("extern", cmd) if !cmd.trim().is_empty() => Ok(AgentKind::Extern(cmd.to_string())),
            ("ws", port) => port.parse().map(AgentKind::Ws).map_err(|_| format!("bad port in `{s}`")),
            ("replay", log) if !log.is_empty() => Ok(AgentKind::Replay(PathBuf::from(log))),
            _ => Err(format!("unknown agent `{s}` (idm, mobil, scripted, extern:<command>, ws:<port>, replay:<log>)")),
        }
    }
}

impl AgentKind {
    fn label(&self) -> String {
        match self {
            AgentKind::Idm => "idm".into(),
            AgentKind::Mobil => "mobil".into(),
            AgentKind::Scripted => "scripted".into(),
            AgentKind::Extern(cmd) => format!("extern:{cmd}"),
            AgentKind::Ws(port) => format!("ws:{port}"),
            AgentKind::Replay(p) => format!("replay:{}", p.display()),
        }
    }
}

/// Failure that is the caller's fault: exit 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LAMPILOT_LOG_LEVEL", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            eprintln!("usage: instructdrive <gen|run|eval|bench|serve> [options]  (see --help)");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Gen { out, count, seed } => gen(&out, count, seed),
        Command::Run { source, agent, seed, out, eval } => {
            let config = eval_config(&eval)?;
            let scenario = match (&agent, &source.scenario, &source.suite) {
                // the log names its scenario
                (AgentKind::Replay(log), None, Some(_)) => {
                    let log = read_log(log)?;
                    let id = log.scenario_id().ok_or_else(|| usage("replay log has no episode start"))?.to_string();
                    resolve(&Source { scenario: Some(id), ..source })?
                }
                _ => resolve(&source)?,
            };
            let options = EpisodeOptions { eval: config, seed, ..EpisodeOptions::default() };
            let outcome = run_one(&scenario, &agent, &options)?;
            let (log_path, result_path) = store(&out, &scenario.id, &outcome)?;
            println!("{}", summary_line(&outcome.result));
            println!("log: {}  result: {}  hash: {}", log_path.display(), result_path.display(), outcome.log.hash());
            Ok(())
        }
        Command::Eval { log, source, out, eval } => {
            let config = eval_config(&eval)?;
            let scenario = resolve(&source)?;
            let log = read_log(&log)?;
            let result = rescore(&scenario, &log, &config)?;
            let doc = serde_json::to_string_pretty(&result)?;
            println!("{doc}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join(format!("{}.result.json", scenario.id)), &doc)?;
            }
            Ok(())
        }
        Command::Bench { suite, agent, seed, out, workers, eval } => {
            let config = eval_config(&eval)?;
            if matches!(agent, AgentKind::Replay(_)) {
                bail!(usage("bench does not take a replay agent; use run"));
            }
            let scenarios = read_suite(&suite).with_context(|| format!("reading suite {}", suite.display()))?;
            let options = EpisodeOptions { eval: config.clone(), seed, ..EpisodeOptions::default() };
            let workers = match agent {
                AgentKind::Ws(_) => 1,
                _ => workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1),
            };
            bench(&scenarios, &agent, &options, &out, workers)
        }
        Command::Serve { source, port, out, ui_dir, max_connections, eval } => {
            let config = eval_config(&eval)?;
            let scenarios = match (&source.suite, &source.scenario) {
                (Some(dir), None) => read_suite(dir)?,
                (None, None) => bail!(usage("serve needs --suite or --scenario")),
                _ => vec![resolve(&source)?],
            };
            let listener = TcpListener::bind(("127.0.0.1", port)).with_context(|| format!("binding port {port}"))?;
            println!("serving {} scenario(s) on {}", scenarios.len(), listener.local_addr()?);
            let options = EpisodeOptions { eval: config, ..EpisodeOptions::default() };
            let feedback_path = out.join("feedback.jsonl");
            std::fs::create_dir_all(&out)?;
            serve(listener, ServeConfig { scenarios, options, out: Some(out), feedback_path, ui_dir }, max_connections)?;
            Ok(())
        }
        Command::Agent => {
            let transport = LineTransport::new(std::io::BufReader::new(std::io::stdin()), std::io::stdout());
            attach(Box::new(transport), scripted_policy).map_err(|e| anyhow!("agent: {e}"))
        }
    }
}

fn eval_config(args: &EvalArgs) -> Result<EvalConfig> {
    let mut c = EvalConfig::default();
    if let Some(t) = args.t_limit {
        c.t_limit = t;
    }
    if let Some(Weights([a, b, d])) = args.weights {
        (c.w_ttc, c.w_sv, c.w_te) = (a, b, d);
    }
    if let Some(v) = args.variant {
        c.variant = v;
    }
    c.validate().map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

fn resolve(source: &Source) -> Result<Scenario> {
    match (&source.suite, &source.scenario) {
        (Some(dir), Some(id)) => {
            let all = read_suite(dir).with_context(|| format!("reading suite {}", dir.display()))?;
            all.into_iter().find(|s| s.id == *id).ok_or_else(|| usage(format!("no scenario `{id}` in {}", dir.display())))
        }
        (None, Some(path)) => Ok(Scenario::load(Path::new(path))?),
        (Some(_), None) => Err(usage("--suite also needs --scenario <id> here")),
        (None, None) => Err(usage("--scenario is required")),
    }
}

fn read_log(path: &Path) -> Result<TrajectoryLog> {
    TrajectoryLog::read(path).with_context(|| format!("reading log {}", path.display()))
}

fn gen(out: &Path, count: usize, seed: u64) -> Result<()> {
    if count < 50 {
        bail!(usage(format!("--count must be at least 50, got {count}")));
    }
    let suite = generate_suite(count, seed)?;
    write_suite(out, &suite, Some(seed))?;
    println!("wrote {} scenarios and {} to {}", suite.len(), MANIFEST_FILE, out.display());
    Ok(())
}

fn run_one(scenario: &Scenario, agent: &AgentKind, options: &EpisodeOptions) -> Result<EpisodeOutcome> {
    let id = &scenario.id;
    let outcome = match agent {
        AgentKind::Idm => run_episode(scenario, Driver::Idm, options)?,
        AgentKind::Mobil => run_episode(scenario, Driver::Mobil(scenario.mobil.unwrap_or_default()), options)?,
        AgentKind::Scripted => run_policy(scenario, options, Transport::InProcess, scripted_policy)?.0,
        AgentKind::Extern(cmd) => {
            let mut channel = ExternChannel::spawn(cmd).with_context(|| format!("scenario {id}: starting `{cmd}`"))?;
            run_episode(scenario, Driver::Agent(&mut channel), options)?
        }
        AgentKind::Ws(port) => {
            let listener = TcpListener::bind(("127.0.0.1", *port)).with_context(|| format!("binding port {port}"))?;
            eprintln!("scenario {id}: waiting for a websocket agent on port {port}");
            let (stream, _) = listener.accept()?;
            let socket = tungstenite::accept(stream).map_err(|e| anyhow!("scenario {id}: websocket handshake: {e}"))?;
            let mut channel = WsChannel::new(socket, true);
            run_episode(scenario, Driver::Agent(&mut channel), options)?
        }
        AgentKind::Replay(path) => return replay(scenario, path, options),
    };
    Ok(outcome)
}

fn replay(scenario: &Scenario, path: &Path, options: &EpisodeOptions) -> Result<EpisodeOutcome> {
    let recorded = read_log(path)?;
    let script = ReplayScript::from_log(&recorded).map_err(|e| anyhow!("replay log {}: {e}", path.display()))?;
    let recorded_seed = recorded.events().find_map(|(_, e)| match e {
        Event::EpisodeStart { seed, .. } => Some(*seed),
        _ => None,
    });
    let options = EpisodeOptions { seed: options.seed.or(recorded_seed), ..options.clone() };
    let (outcome, agent) = run_policy(scenario, &options, Transport::InProcess, move |c| {
        script.play(c).map_err(|e| ClientError::Protocol(e.to_string()))
    })?;
    if let Some(step) = first_divergence(&recorded, &outcome.log) {
        let why = agent.err().map(|e| format!(" ({e})")).unwrap_or_default();
        bail!("scenario {}: replay diverges from {} at step {step}{why}", scenario.id, path.display());
    }
    Ok(outcome)
}

fn store(out: &Path, id: &str, outcome: &EpisodeOutcome) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let log_path = out.join(format!("{id}.log.jsonl"));
    let result_path = out.join(format!("{id}.result.json"));
    outcome.log.write(&log_path)?;
    std::fs::write(&result_path, serde_json::to_string_pretty(&outcome.result)?)?;
    Ok((log_path, result_path))
}

fn rescore(scenario: &Scenario, log: &TrajectoryLog, config: &EvalConfig) -> Result<EpisodeResult> {
    if let Some(id) = log.scenario_id() {
        if id != scenario.id {
            bail!(usage(format!("log belongs to scenario `{id}`, not `{}`", scenario.id)));
        }
    }
    let net = scenario.network()?;
    Ok(score_episode(&scenario.id, &scenario.goal, log, &net, config)?)
}

fn summary_line(r: &EpisodeResult) -> String {
    let num = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
    format!(
        "{} [{:?}] completed={} collided={} t_complete={} score={}",
        r.scenario_id,
        r.category,
        r.completed,
        r.collided,
        num(r.t_complete),
        num(r.score)
    )
}

fn bench(scenarios: &[Scenario], agent: &AgentKind, options: &EpisodeOptions, out: &Path, workers: usize) -> Result<()> {
    let started = Instant::now();
    let logs = out.join("logs");
    std::fs::create_dir_all(&logs).with_context(|| format!("creating {}", logs.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let results: Vec<EpisodeResult> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|s| {
                let outcome = run_one(s, agent, options).with_context(|| format!("scenario {}", s.id))?;
                store(&logs, &s.id, &outcome)?;
                log::info!("{}", summary_line(&outcome.result));
                Ok(outcome.result)
            })
            .collect::<Result<_>>()
    })?;
    let report = BenchmarkReport::from_results(&agent.label(), &results, &options.eval);
    let text = report.render_text();
    std::fs::write(out.join("report.txt"), &text)?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    let lines: Vec<String> = results.iter().map(serde_json::to_string).collect::<Result<_, _>>()?;
    std::fs::write(out.join("results.jsonl"), lines.join("\n") + "\n")?;
    print!("{text}");
    println!("{} episodes in {:.1}s; report in {}", results.len(), started.elapsed().as_secs_f64(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agent_kinds_parse() {
        assert_eq!("idm".parse(), Ok(AgentKind::Idm));
        assert_eq!("extern:python a.py --x".parse(), Ok(AgentKind::Extern("python a.py --x".into())));
        assert_eq!("ws:9000".parse(), Ok(AgentKind::Ws(9000)));
        assert_eq!("replay:logs/a.jsonl".parse(), Ok(AgentKind::Replay("logs/a.jsonl".into())));
        for bad in ["", "idm:1", "extern:", "ws:x", "replay:", "human"] {
            assert!(bad.parse::<AgentKind>().is_err(), "{bad}");
        }
    }

    #[test]
    fn weights_need_three_numbers() {
        assert_eq!(Weights::from_str("0.6, 0.2,0.2").unwrap().0, [0.6, 0.2, 0.2]);
        assert!(Weights::from_str("0.5,0.5").is_err());
        assert!(Weights::from_str("a,b,c").is_err());
    }

    #[test]
    fn eval_overrides_are_validated() {
        let args = EvalArgs { t_limit: Some(30.0), weights: Some(Weights([0.4, 0.4, 0.2])), variant: Some(FormulaVariant::Corrected) };
        let c = eval_config(&args).unwrap();
        assert_eq!((c.t_limit, c.weights(), c.variant), (30.0, [0.4, 0.4, 0.2], FormulaVariant::Corrected));
        let bad = EvalArgs { weights: Some(Weights([0.5, 0.5, 0.5])), ..args };
        assert!(eval_config(&bad).unwrap_err().is::<Usage>());
    }
}
