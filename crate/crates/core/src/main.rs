use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use mindcube::diffusion::{ConditionedOracle, LatentSequence};
use mindcube::server::replay::{condition_trace, format_trace, frames_from_log, write_latents};
use mindcube::server::{
    read_packet_log, Broadcaster, ControlServer, DeviceServer, FrameSource, PacketLogWriter, PanelServer, Pipeline,
    PipelineConfig, PipelineOptions, SharedState,
};
use mindcube::simdevice::{Scenario, ScenarioKind, VirtualDevice};
use mindcube::sonify::{render_latents, DEFAULT_HOP};

#[derive(Parser)]
#[command(name = "mindcube", version, about = "Virtual MindCube sonification server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SourceArgs {
    /// Simulated scenario: idle, fidget-burst, tilt-sweep, joystick-circle.
    #[arg(long, default_value = "idle")]
    scenario: ScenarioKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Read framed packets from a device at HOST:PORT instead of simulating.
    #[arg(long, value_name = "HOST:PORT")]
    connect: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline.
    Run {
        #[command(flatten)]
        source: SourceArgs,
        /// key=value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        tcp_port: Option<u16>,
        #[arg(long)]
        ws_port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Write every generation as WAV and MCLZ into this directory.
        #[arg(long, value_name = "DIR")]
        wav_out: Option<PathBuf>,
        /// No panel WebSocket endpoint.
        #[arg(long)]
        headless: bool,
        /// Also log received packets to this file.
        #[arg(long, value_name = "FILE")]
        record: Option<PathBuf>,
        /// Stop after this many seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Serve a simulated device's packet stream over TCP.
    Simulate {
        #[arg(long, default_value = "idle")]
        scenario: ScenarioKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "127.0.0.1:7100")]
        listen: String,
        #[arg(long, default_value_t = 20.0)]
        rate: f64,
    },
    /// Log framed packets to FILE.
    Record {
        file: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = 600)]
        frames: u64,
        /// Do not pace the simulated device in real time.
        #[arg(long)]
        fast: bool,
        /// Also write the conditioning trace of the recorded frames.
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Re-run conditioning (and optionally generation) from a packet log.
    Replay {
        file: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the trace here instead of stdout.
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        /// Generate one MCLZ latent file per trace entry into this directory.
        #[arg(long, value_name = "DIR")]
        latents_dir: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render an MCLZ latent file to WAV.
    Render {
        file: PathBuf,
        /// Defaults to FILE with a .wav extension.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_HOP)]
        hop: usize,
    },
    /// Run the built-in oracle checks.
    Selftest,
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Box<dyn std::error::Error>> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p).map_err(|e| format!("{}: {e}", p.display()))?),
        None => Ok(PipelineConfig::default()),
    }
}

fn frame_source(args: &SourceArgs, rate_hz: f64, paced: bool) -> Result<FrameSource, Box<dyn std::error::Error>> {
    Ok(match &args.connect {
        Some(addr) => FrameSource::tcp(addr.clone()),
        None => FrameSource::Simulated {
            device: Box::new(VirtualDevice::new(Scenario::new(args.scenario, args.seed), rate_hz)?),
            paced,
        },
    })
}

fn stop_on_ctrlc() -> Result<Arc<AtomicBool>, ctrlc::Error> {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed))?;
    Ok(stop)
}

#[allow(clippy::too_many_arguments)]
fn run(
    source: SourceArgs,
    config: Option<PathBuf>,
    tcp_port: Option<u16>,
    ws_port: Option<u16>,
    host: String,
    wav_out: Option<PathBuf>,
    headless: bool,
    record: Option<PathBuf>,
    duration: Option<f64>,
) -> CliResult {
    let mut cfg = load_config(config.as_deref())?;
    cfg.seed = cfg.seed.wrapping_add(source.seed);
    if let Some(p) = tcp_port {
        cfg.tcp_port = p;
    }
    if let Some(p) = ws_port {
        cfg.ws_port = p;
    }
    let stop = stop_on_ctrlc()?;
    let mut frames = frame_source(&source, cfg.device_rate_hz, true)?;
    let panel = frames.panel();

    let control = ControlServer::bind(&format!("{host}:{}", cfg.tcp_port), Broadcaster::new(cfg.backlog_limit_bytes))?;
    println!("control tcp: {}", control.local_addr());
    let shared = Arc::new(SharedState::new(cfg.activity.window_frames));
    let _panel_server = if headless {
        None
    } else {
        let ws = PanelServer::bind(&format!("{host}:{}", cfg.ws_port), shared.clone(), panel, cfg.telemetry_hz)?;
        println!("panel ws: ws://{}", ws.local_addr());
        Some(ws)
    };
    match &source.connect {
        Some(addr) => println!("source: tcp {addr}"),
        None => println!("source: simulated {} (seed {})", source.scenario, source.seed),
    }
    let options =
        PipelineOptions { wav_out, packet_log: record.map(PacketLogWriter::create).transpose()?, denoiser: None };
    let mut pipeline = Pipeline::start_with_state(cfg, frames, control.broadcaster().clone(), options, shared)?;

    let deadline = duration.map(|d| std::time::Instant::now() + Duration::from_secs_f64(d));
    while !stop.load(Ordering::Relaxed) && deadline.is_none_or(|d| std::time::Instant::now() < d) {
        std::thread::sleep(Duration::from_millis(50));
    }
    pipeline.stop();
    let stats = pipeline.stats();
    println!(
        "stopped: {} frames, {} generations, {} overruns, {} seq gaps",
        stats.frames, stats.generations, stats.overruns, stats.seq_gaps
    );
    Ok(ExitCode::SUCCESS)
}

fn simulate(scenario: ScenarioKind, seed: u64, listen: String, rate: f64) -> CliResult {
    let stop = stop_on_ctrlc()?;
    let server = DeviceServer::spawn(&listen, Scenario::new(scenario, seed), rate)?;
    println!("device tcp: {}", server.local_addr());
    while !stop.load(Ordering::Relaxed) {
        std::thread::sleep(Duration::from_millis(50));
    }
    Ok(ExitCode::SUCCESS)
}

fn record(
    file: PathBuf,
    source: SourceArgs,
    frames: u64,
    fast: bool,
    trace: Option<PathBuf>,
    config: Option<PathBuf>,
) -> CliResult {
    let cfg = load_config(config.as_deref())?;
    let stop = stop_on_ctrlc()?;
    let mut log = PacketLogWriter::create(&file)?;
    let mut recorded = Vec::new();
    let mut result = Ok(());
    frame_source(&source, cfg.device_rate_hz, !fast)?.run(&stop, |p| {
        result = log.append(p.received_us, &p.framed);
        recorded.push(p.frame);
        result.is_ok() && (recorded.len() as u64) < frames
    });
    result?;
    log.flush()?;
    println!("recorded {} packets to {}", log.count(), file.display());
    if let Some(path) = trace {
        fs::write(path, format_trace(&condition_trace(&recorded, &cfg)))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn replay(
    file: PathBuf,
    config: Option<PathBuf>,
    trace_out: Option<PathBuf>,
    latents_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> CliResult {
    let mut cfg = load_config(config.as_deref())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (frames, bad) = frames_from_log(&read_packet_log(&file)?);
    if bad > 0 {
        eprintln!("skipped {bad} corrupt packets");
    }
    let trace = condition_trace(&frames, &cfg);
    let text = format_trace(&trace);
    match trace_out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    if let Some(dir) = latents_dir {
        let n = write_latents(&trace, &cfg, Box::new(ConditionedOracle::default()), &dir)?;
        eprintln!("wrote {n} latent files to {}", dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn render(file: PathBuf, out: Option<PathBuf>, hop: usize) -> CliResult {
    let latents = LatentSequence::load(&file)?;
    let audio = render_latents(&latents, hop)?;
    let out = out.unwrap_or_else(|| file.with_extension("wav"));
    audio.write_wav(&out)?;
    println!("{}: {} samples, {:.3} s", out.display(), audio.frames(), audio.duration_s());
    Ok(ExitCode::SUCCESS)
}

fn selftest() -> CliResult {
    let checks = mindcube::selftest::run_all();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(if checks.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match Cli::parse().command {
        Command::Run { source, config, tcp_port, ws_port, host, wav_out, headless, record, duration } => {
            run(source, config, tcp_port, ws_port, host, wav_out, headless, record, duration)
        }
        Command::Simulate { scenario, seed, listen, rate } => simulate(scenario, seed, listen, rate),
        Command::Record { file, source, frames, fast, trace, config } => {
            record(file, source, frames, fast, trace, config)
        }
        Command::Replay { file, config, trace, latents_dir, seed } => replay(file, config, trace, latents_dir, seed),
        Command::Render { file, out, hop } => render(file, out, hop),
        Command::Selftest => selftest(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
