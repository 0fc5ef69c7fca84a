use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use vsl_core::eval::{
    attribution_report, run_experiment_matrix, run_response_suite, save_png, LimitGrid, MatrixConfig, ReportOptions,
    ResponseSuiteConfig, WarningCounting,
};
use vsl_core::guard::GuardConfig;
use vsl_core::log::{read_complete_log, LoopMode};
use vsl_core::sim::{build_testing_scenario, build_training_scenario, congested_suite, SimConfig, TestingOptions};
use vsl_core::train::{train_with_progress, write_curve_csv, TrainConfig};
use vsl_core::{CorridorConfig, Policy};
use vsl_gateway::{ingest_fixture, load_policy, start, Engine, GatewayConfig, SimFeed};

#[derive(Parser)]
#[command(name = "vsl", version, about = "Multi-agent variable speed limit control")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Closed,
    Open,
}

impl From<Mode> for LoopMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Closed => LoopMode::Closed,
            Mode::Open => LoopMode::Open,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    /// Eight-gantry training corridor and its two-hour scenario.
    Training,
    /// 34-gantry deployment corridor with two congesting on-ramps.
    Deployment,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    corridor: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    /// Refuse to start unless the policy file has this SHA-256.
    #[arg(long)]
    policy_sha256: Option<String>,
    #[arg(long, value_enum, default_value = "closed")]
    mode: Mode,
    /// Guard configuration (TOML); defaults otherwise.
    #[arg(long)]
    guard: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the control loop over WebSocket (VSL_TOKEN, VSL_LISTEN, VSL_LOG_DIR).
    RunLive {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        listen: Option<String>,
        /// Wall-clock milliseconds per 30-s control period.
        #[arg(long, default_value_t = 30_000)]
        tick_ms: u64,
        /// Continue an interrupted log instead of starting a new one.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the control loop headless, writing a log.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        log: PathBuf,
        /// Stop after this many ticks; default runs the whole scenario.
        #[arg(long)]
        ticks: Option<u64>,
        /// Journalled commands as `tick:json` (repeatable).
        #[arg(long = "command")]
        commands: Vec<String>,
    },
    /// Replay a recorded log open-loop and compare the decisions.
    Replay {
        #[arg(long)]
        fixture: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Train a policy on the built-in eight-agent scenario.
    Train {
        /// TrainConfig as TOML; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Successful and false warning rates for the five-experiment matrix.
    EvaluateWarnings {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Count warnings per display tick instead of per vehicle passage.
        #[arg(long)]
        per_tick: bool,
    },
    /// Response delay to injected incidents, policy against the rule-based benchmark.
    EvaluateResponse {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Share of decisions attributed to each pipeline stage, one log per day.
    Report {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        include_reduced_max: bool,
        /// Window in seconds of run time, `start:end`.
        #[arg(long)]
        peak: Option<String>,
    },
    /// Time-space image (or CSV) of the posted limits in a log.
    Render {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Blank out cells not set by the policy.
        #[arg(long)]
        masked: bool,
    },
    /// Write a built-in corridor and scenario as TOML.
    Scenario {
        #[arg(value_enum)]
        name: Builtin,
        #[arg(long)]
        corridor_out: PathBuf,
        #[arg(long)]
        scenario_out: PathBuf,
        #[arg(long)]
        duration_s: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_run(run: &RunArgs) -> Result<(CorridorConfig, SimConfig, Policy, GuardConfig)> {
    let corridor =
        CorridorConfig::load(&run.corridor).with_context(|| format!("corridor {}", run.corridor.display()))?;
    let text =
        std::fs::read_to_string(&run.scenario).with_context(|| format!("scenario {}", run.scenario.display()))?;
    let sim = SimConfig::from_toml_str(&text)?;
    let policy = load_policy(&run.policy, run.policy_sha256.as_deref())?;
    let guard = match &run.guard {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
        None => GuardConfig::default(),
    };
    Ok((corridor, sim, policy, guard))
}

fn run_description(run: &RunArgs, sim: &SimConfig) -> serde_json::Value {
    serde_json::json!({
        "corridor": run.corridor.display().to_string(),
        "scenario": run.scenario.display().to_string(),
        "seed": sim.seed,
    })
}

fn parse_command(arg: &str) -> Result<(u64, vsl_gateway::Command)> {
    let (tick, json) = arg.split_once(':').context("expected tick:json")?;
    Ok((tick.parse()?, serde_json::from_str(json)?))
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Cmd::RunLive { run, listen, tick_ms, resume } => run_live(run, listen, tick_ms, resume),
        Cmd::Simulate { run, log, ticks, commands } => {
            let (corridor, sim, policy, guard) = load_run(&run)?;
            let desc = run_description(&run, &sim);
            let feed = SimFeed::new(&corridor, sim)?;
            let mut engine =
                Engine::new(corridor, policy, Box::new(feed), guard, run.mode.into())?.with_log(&log, desc)?;
            let script = commands.iter().map(|c| parse_command(c)).collect::<Result<Vec<_>>>()?;
            let limit = ticks.unwrap_or(u64::MAX);
            while engine.tick() < limit {
                let next = engine.tick() + 1;
                let now = script.iter().filter(|(t, _)| *t == next).map(|(_, c)| c.clone()).collect();
                if engine.step(now)?.is_none() {
                    break;
                }
            }
            println!("wrote {} ticks to {}", engine.tick(), log.display());
            Ok(())
        }
        Cmd::Replay { fixture, policy } => {
            let recorded = read_complete_log(&fixture)?;
            let feed = ingest_fixture(&fixture)?;
            let h = feed.header.clone();
            let policy = load_policy(&policy, Some(&h.policy_sha256))?;
            let mut engine = Engine::new(h.corridor, policy, Box::new(feed), h.guard, LoopMode::Open)?;
            let mut mismatched = Vec::new();
            for rec in &recorded.ticks {
                let report = engine.step(Vec::new())?.context("fixture ended early")?;
                if report.decisions.decisions != rec.decisions {
                    mismatched.push(rec.tick);
                }
            }
            println!("replayed {} ticks, {} mismatched", recorded.ticks.len(), mismatched.len());
            if !mismatched.is_empty() {
                bail!("decisions differ at ticks {mismatched:?}");
            }
            Ok(())
        }
        Cmd::Train { config, out, curve } => {
            let cfg: TrainConfig = match config {
                Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
                None => TrainConfig::default(),
            };
            let outcome = train_with_progress::<f64>(&cfg, |p| {
                tracing::info!(iteration = p.iteration, reward = p.mean_episode_reward, validation = ?p.validation_reward, entropy = p.entropy);
            })?;
            outcome.policy.save(&out)?;
            if let Some(c) = curve {
                write_curve_csv(&outcome.curve, BufWriter::new(File::create(c)?))?;
            }
            println!(
                "best iteration {} (validation reward {:.2}); sha256 {}",
                outcome.best_iteration,
                outcome.best_validation_reward,
                outcome.policy.sha256_hex()
            );
            Ok(())
        }
        Cmd::EvaluateWarnings { policy, episodes, seed, per_tick } => {
            let policy = Policy::load(&policy)?;
            let recorded = congested_suite(episodes, seed)
                .iter()
                .map(|(c, s)| vsl_core::eval::record_episode(c, s))
                .collect::<Result<Vec<_>, _>>()?;
            let mut cfg = MatrixConfig::default();
            if per_tick {
                cfg.warning.counting = WarningCounting::PerDisplayTick;
            }
            for r in run_experiment_matrix(&recorded, &policy, &cfg)? {
                let pct = |x: Option<f64>| x.map(|v| format!("{:.1}%", 100.0 * v)).unwrap_or_else(|| "n/a".into());
                println!("{} {:42} SWR {:>7} FWR {:>7}", r.id, r.name, pct(r.pooled.swr()), pct(r.pooled.fwr()));
            }
            Ok(())
        }
        Cmd::EvaluateResponse { policy, count, seed } => {
            let policy = Policy::load(&policy)?;
            let r =
                run_response_suite(&policy, &ResponseSuiteConfig { count, seed, ..ResponseSuiteConfig::default() })?;
            println!("events {} (unlabeled episodes {})", r.events.len(), r.unlabeled_episodes);
            for (name, s) in [("policy", &r.marl_stats), ("benchmark", &r.benchmark_stats)] {
                println!(
                    "{name:10} n {:3} censored {:2} mean {:6.1}s std {:6.1}s median {:6.1}s",
                    s.n, s.censored, s.mean, s.std, s.median
                );
            }
            Ok(())
        }
        Cmd::Report { logs, include_reduced_max, peak } => {
            let peak_hours = peak
                .map(|p| -> Result<(f64, f64)> {
                    let (a, b) = p.split_once(':').context("expected start:end")?;
                    Ok((a.parse()?, b.parse()?))
                })
                .transpose()?;
            let mut corridor = None;
            let mut days = Vec::with_capacity(logs.len());
            for p in &logs {
                let log = read_complete_log(p).with_context(|| p.display().to_string())?;
                corridor.get_or_insert(log.header.corridor.clone());
                days.push(log.decisions().cloned().collect());
            }
            let corridor = corridor.expect("at least one log");
            let row = attribution_report(&days, &corridor, &ReportOptions { include_reduced_max, peak_hours });
            println!("days {} decisions {}", row.days, row.decisions);
            for (name, m, s) in [
                ("POLICY", row.mean.policy, row.std.policy),
                ("SM", row.mean.sm, row.std.sm),
                ("MSLC", row.mean.mslc, row.std.mslc),
                ("DB", row.mean.db, row.std.db),
            ] {
                println!("{name:7} {m:6.1} ± {s:4.1} %");
            }
            Ok(())
        }
        Cmd::Render { log, out, masked } => {
            let log = read_complete_log(&log)?;
            let decisions: Vec<_> = log.decisions().cloned().collect();
            let grid = LimitGrid::from_decisions(&log.header.corridor, &decisions, None);
            if out.extension().is_some_and(|e| e == "csv") {
                grid.write_csv(masked, BufWriter::new(File::create(&out)?))?;
            } else {
                save_png(&grid.to_image(masked), &out)?;
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Scenario { name, corridor_out, scenario_out, duration_s, seed } => {
            let (corridor, mut sim) = match name {
                Builtin::Training => build_training_scenario(),
                Builtin::Deployment => build_testing_scenario(TestingOptions::default().two_bottlenecks()),
            };
            if let Some(d) = duration_s {
                sim.duration_s = d;
            }
            if let Some(s) = seed {
                sim.seed = s;
            }
            write_text(&corridor_out, &corridor.to_toml_string()?)?;
            write_text(&scenario_out, &sim.to_toml_string()?)?;
            Ok(())
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| path.display().to_string())
}

fn run_live(run: RunArgs, listen: Option<String>, tick_ms: u64, resume: Option<PathBuf>) -> Result<()> {
    let mut cfg = GatewayConfig::from_env()?;
    if let Some(l) = listen {
        cfg.listen = l.parse().context("--listen")?;
    }
    cfg.tick_interval = Duration::from_millis(tick_ms.max(1));
    let (corridor, sim, policy, guard) = load_run(&run)?;
    let desc = run_description(&run, &sim);
    let feed = Box::new(SimFeed::new(&corridor, sim)?);
    let engine = match resume {
        Some(path) => Engine::resume(policy, feed, &path)?,
        None => {
            std::fs::create_dir_all(&cfg.log_dir)?;
            let name = format!("run-{}.jsonl", vsl_gateway::protocol::now_ms());
            Engine::new(corridor, policy, feed, guard, run.mode.into())?.with_log(cfg.log_dir.join(name), desc)?
        }
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let mut handle = start(engine, &cfg).await?;
        println!("listening on ws://{}/ws", handle.addr());
        tokio::select! {
            r = handle.loop_finished() => {
                let last = r?;
                println!("feed exhausted after tick {last}; serving snapshot until interrupted");
                tokio::signal::ctrl_c().await?;
            }
            _ = tokio::signal::ctrl_c() => {}
        }
        let last = handle.shutdown().await?;
        println!("stopped after tick {last}");
        Ok(())
    })
}
