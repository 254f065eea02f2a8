use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use forest_core::dqn::checkpoint::{read_checkpoint, write_checkpoint};
use forest_core::dqn::{greedy_agreement, run_training, TrainerConfig};
use forest_core::gateway::{
    detection_summary, render_summary_csv, render_summary_text, replay, run_pipeline,
    AlertSink, Clock, DecisionAgent, GatewayPolicy, NoObserver, PipelineObserver,
    RecordingSink, RunIo, SimClock, TraceLog, WallClock, WebhookSink,
};
use forest_core::sensor::FusionWeights;
use forest_core::sim::ScenarioScript;
use forest_core::vision::synth::{read_planar, write_planar, VideoSpec};
use forest_core::vision::{NightDetector, NightDetectorConfig};
use forest_service::{block_until_ctrl_c, ServiceConfig};

#[derive(Parser)]
#[command(name = "forest", version, about = "Wildfire watch control plane")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the sector-selection agent and write a checkpoint.
    Train {
        /// Trainer settings (TOML); built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "agent.fpqn")]
        out: PathBuf,
        /// Per-episode CSV: episode, reward, moving average, mean loss.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the gateway over a scenario.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Overrides the policy's checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Wall-clock time instead of simulated time.
        #[arg(long)]
        live: bool,
        /// Also serve the HTTP API at this address while running.
        #[arg(long, value_name = "ADDR")]
        serve: Option<String>,
        /// POST alerts to this URL instead of keeping them in memory.
        #[arg(long)]
        webhook: Option<String>,
        #[arg(long, default_value = "trace.jsonl")]
        trace: PathBuf,
        /// Per-node detection table; printed to stdout when omitted.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        summary_csv: Option<PathBuf>,
        /// With --serve, keep serving after the run until interrupted.
        #[arg(long)]
        linger: bool,
    },
    /// Check a trace log and print the latency breakdown of every alert.
    Replay { trace: PathBuf },
    /// Render synthetic footage in the planar raw format.
    GenVideo {
        #[arg(long, value_enum, default_value = "fire")]
        preset: Preset,
        /// Video description (TOML); overrides the preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 320)]
        width: usize,
        #[arg(long, default_value_t = 240)]
        height: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the night flame detector over planar RGB footage.
    DetectNight {
        input: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
    },
    /// Serve the HTTP API until interrupted.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Fire,
    Static,
    Blue,
    Dark,
}

enum Failure {
    /// Bad input or configuration; exit code 2.
    Usage(String),
    /// The command ran and failed; exit code 1.
    Runtime(String),
}

type CmdResult = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn train(
    config: Option<PathBuf>,
    out: PathBuf,
    metrics: Option<PathBuf>,
    episodes: Option<usize>,
    seed: Option<u64>,
) -> CmdResult {
    let mut cfg = match config {
        Some(p) => TrainerConfig::from_toml_str(&read_text(&p)?).map_err(usage)?,
        None => TrainerConfig::default(),
    };
    if let Some(n) = episodes {
        cfg.episodes = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(usage)?;
    let weights = FusionWeights::default();
    let mut env = cfg.environment(weights);
    let (net, m) = run_training(&mut env, &cfg).map_err(runtime)?;
    let mut w = create(&out)?;
    write_checkpoint(&net, &mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    if let Some(p) = metrics {
        let mut w = create(&p)?;
        m.write_csv(&mut w).map_err(runtime)?;
        w.flush().map_err(runtime)?;
    }
    let agreement = greedy_agreement(&net, &mut env, 1000).map_err(runtime)?;
    println!("episodes: {}", cfg.episodes);
    match m.final_per_step_average() {
        Some(avg) => println!("final moving average per step: {avg:.3}"),
        None => println!("final moving average per step: -"),
    }
    println!("greedy agreement with signal ranking: {:.1}%", agreement * 100.0);
    println!("checkpoint: {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    scenario: PathBuf,
    policy: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    live: bool,
    serve: Option<String>,
    webhook: Option<String>,
    trace: PathBuf,
    summary: Option<PathBuf>,
    summary_csv: Option<PathBuf>,
    linger: bool,
) -> CmdResult {
    let script = ScenarioScript::from_toml_str(&read_text(&scenario)?).map_err(usage)?;
    let policy = match policy {
        Some(p) => GatewayPolicy::from_toml_str(&read_text(&p)?).map_err(usage)?,
        None => GatewayPolicy::default(),
    };
    let agent = match checkpoint.or_else(|| policy.decision.checkpoint.clone()) {
        Some(p) => {
            let f = File::open(&p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            DecisionAgent::Dqn(read_checkpoint(BufReader::new(f)).map_err(usage)?)
        }
        None => DecisionAgent::Fallback,
    };

    let (control_tx, control_rx) = std::sync::mpsc::channel();
    let service = match &serve {
        Some(addr) => {
            let cfg = ServiceConfig {
                bind: addr.clone(),
                fusion: policy.fusion.clone(),
                ..ServiceConfig::default()
            };
            let handle = forest_service::spawn(&cfg, live.then_some(control_tx)).map_err(runtime)?;
            eprintln!("serving on {}", handle.url());
            Some(handle)
        }
        None => None,
    };

    let mut verifier = policy.verifier.build();
    let mut recording = RecordingSink::default();
    let mut webhook_sink;
    let mut shared_sink;
    let sink: &mut dyn AlertSink = match (&webhook, &service) {
        (Some(url), _) => {
            webhook_sink = WebhookSink::new(url.clone(), Duration::from_secs(10));
            &mut webhook_sink
        }
        (None, Some(h)) => {
            shared_sink = h.shared.clone();
            &mut shared_sink
        }
        (None, None) => &mut recording,
    };
    let mut shared_observer;
    let mut none = NoObserver;
    let observer: &mut dyn PipelineObserver = match &service {
        Some(h) => {
            shared_observer = h.shared.clone();
            &mut shared_observer
        }
        None => &mut none,
    };
    let mut sim_clock = SimClock::new();
    let mut wall_clock = WallClock::new();
    let clock: &mut dyn Clock = if live { &mut wall_clock } else { &mut sim_clock };

    let out = run_pipeline(
        &script,
        &policy,
        &agent,
        RunIo {
            verifier: verifier.as_mut(),
            sink,
            clock,
            control: (live && service.is_some()).then_some(control_rx),
            observer,
        },
    )
    .map_err(usage)?;

    let mut w = create(&trace)?;
    out.trace.write_jsonl(&mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;

    let rows = detection_summary(&out.alerts);
    let text = render_summary_text(&rows);
    match summary {
        Some(p) => std::fs::write(&p, &text).map_err(runtime)?,
        None => print!("{text}"),
    }
    if let Some(p) = summary_csv {
        std::fs::write(&p, render_summary_csv(&rows)).map_err(runtime)?;
    }
    let undelivered = out.alerts.iter().filter(|a| !a.delivered).count();
    eprintln!(
        "agent: {}; alerts: {} ({} undelivered); trace: {}",
        agent.name(),
        out.alerts.len(),
        undelivered,
        trace.display()
    );
    if let Some(h) = service {
        if linger {
            eprintln!("run finished; serving until interrupted");
            block_until_ctrl_c().map_err(runtime)?;
        }
        h.stop();
    }
    Ok(())
}

fn replay_cmd(path: PathBuf) -> CmdResult {
    let f = File::open(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let log = TraceLog::read_jsonl(BufReader::new(f)).map_err(runtime)?;
    let report = replay(&log);
    print!("{}", report.render());
    if report.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{} ordering violations", report.violations.len())))
    }
}

fn gen_video(
    preset: Preset,
    spec: Option<PathBuf>,
    width: usize,
    height: usize,
    frames: usize,
    out: PathBuf,
) -> CmdResult {
    let spec = match spec {
        Some(p) => VideoSpec::from_toml_str(&read_text(&p)?).map_err(usage)?,
        None => match preset {
            Preset::Fire => VideoSpec::flickering_fire(width, height, frames),
            Preset::Static => VideoSpec::static_light(width, height, frames),
            Preset::Blue => VideoSpec::flickering_blue(width, height, frames),
            Preset::Dark => VideoSpec::constant(width, height, frames, [12, 10, 14]),
        },
    };
    if spec.width == 0 || spec.height == 0 {
        return Err(usage("width and height must be positive"));
    }
    let mut w = create(&out)?;
    write_planar(&spec.render_all(), &mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    println!(
        "{} frames of {}x{} RGB planar -> {}",
        spec.frames,
        spec.width,
        spec.height,
        out.display()
    );
    Ok(())
}

fn detect_night(input: PathBuf, width: usize, height: usize) -> CmdResult {
    let f = File::open(&input).map_err(|e| usage(format!("{}: {e}", input.display())))?;
    let frames = read_planar(BufReader::new(f), width, height, 3).map_err(usage)?;
    let mut det = NightDetector::new(NightDetectorConfig::default()).map_err(usage)?;
    let mut windows = 0;
    for frame in frames {
        if let Some(v) = det.push(frame).map_err(runtime)? {
            windows += 1;
            println!(
                "window {windows}: {} ({} regions)",
                if v.fire { "FIRE" } else { "clear" },
                v.regions.len()
            );
        }
    }
    if windows == 0 {
        println!("not enough frames for one window");
    }
    Ok(())
}

fn serve(config: Option<PathBuf>) -> CmdResult {
    let cfg = match config {
        Some(p) => ServiceConfig::from_toml_str(&read_text(&p)?).map_err(usage)?,
        None => ServiceConfig::default(),
    }
    .with_env();
    let handle = forest_service::spawn(&cfg, None).map_err(runtime)?;
    eprintln!("serving on {}", handle.url());
    block_until_ctrl_c().map_err(runtime)?;
    handle.stop();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            out,
            metrics,
            episodes,
            seed,
        } => train(config, out, metrics, episodes, seed),
        Command::Run {
            scenario,
            policy,
            checkpoint,
            live,
            serve,
            webhook,
            trace,
            summary,
            summary_csv,
            linger,
        } => run(
            scenario,
            policy,
            checkpoint,
            live,
            serve,
            webhook,
            trace,
            summary,
            summary_csv,
            linger,
        ),
        Command::Replay { trace } => replay_cmd(trace),
        Command::GenVideo {
            preset,
            spec,
            width,
            height,
            frames,
            out,
        } => gen_video(preset, spec, width, height, frames, out),
        Command::DetectNight {
            input,
            width,
            height,
        } => detect_night(input, width, height),
        Command::Serve { config } => serve(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
