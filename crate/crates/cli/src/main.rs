//! `openscout`: runs the digital twin, scripted scenarios, the calibration
//! check and two small MQTT client utilities.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use openscout_core::calibrate::calibrate;
use openscout_core::codec::{validate_filter, validate_topic_name, Connect};
use openscout_core::net::{BrokerUrl, MqttClient};
use openscout_core::runtime::run_stack;
use openscout_core::scenario::{run_scenario, Scenario};
use openscout_core::sim::{write_csv, TrajectoryRecord};
use openscout_core::{StackConfig, Twist, World};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "openscout", version, about = "OpenScout v1.1 digital twin")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "ID")]
    robot_id: Option<String>,
    #[arg(long, global = true, value_name = "KG")]
    payload_kg: Option<f64>,
    /// Override any config key, e.g. `--set motor-tau=0.2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Broker for `pub` and `echo`: HOST:PORT, tcp://HOST:PORT or ws://HOST:PORT[/path].
    #[arg(long, global = true, value_name = "URL", default_value = "127.0.0.1:1883")]
    broker_url: String,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Trajectory CSV destination.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run broker and robot, in real time until interrupted or in fast virtual time.
    Run(RunArgs),
    /// Execute a scenario file in fast virtual time.
    Scenario {
        file: PathBuf,
    },
    /// Measure saturated speed and spin rate against the calibration anchors.
    Calibrate,
    /// Publish one message.
    Pub {
        topic: String,
        payload: String,
        #[arg(long)]
        retain: bool,
        /// Keep re-publishing for this many seconds (feeds the robot watchdog).
        #[arg(long, value_name = "SECONDS")]
        hold: Option<f64>,
        /// Re-publish rate while holding.
        #[arg(long, value_name = "HZ", default_value_t = 10.0)]
        rate: f64,
    },
    /// Print every delivery on a filter as `topic payload` lines.
    Echo {
        filter: String,
        /// Exit after this many messages.
        #[arg(long, value_name = "N")]
        count: Option<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Pace the control loop by the wall clock (default).
    #[arg(long, conflicts_with = "fast")]
    realtime: bool,
    /// Step virtual time as fast as possible; needs --duration.
    #[arg(long)]
    fast: bool,
    /// Seconds to run; real-time runs stop early on ctrl-c.
    #[arg(long, value_name = "SECONDS")]
    duration: Option<f64>,
    /// Hold this Twist for the whole fast run.
    #[arg(long, num_args = 2, value_names = ["V", "W"], allow_negative_numbers = true, requires = "fast")]
    cmd: Option<Vec<f64>>,
    #[arg(long, value_name = "ADDR")]
    bind: Option<IpAddr>,
    #[arg(long, value_name = "PORT")]
    tcp_port: Option<u16>,
    #[arg(long, value_name = "PORT")]
    ws_port: Option<u16>,
}

/// An error together with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn usage(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, err: err.into() }
}

fn failed(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, err: err.into() }
}

type Outcome = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(io::stderr)
        .init();
    match dispatch(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Outcome {
    let c = &cli.common;
    match cli.command {
        Command::Run(args) => run(c, args),
        Command::Scenario { file } => scenario(c, &file),
        Command::Calibrate => calibration(c),
        Command::Pub {
            topic,
            payload,
            retain,
            hold,
            rate,
        } => {
            let url = broker_url(c)?;
            validate_topic_name(&topic).map_err(usage)?;
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(usage(anyhow!("--rate must be positive")));
            }
            block_on(publish(url, topic, payload.into_bytes(), retain, hold, rate))
        }
        Command::Echo { filter, count } => {
            let url = broker_url(c)?;
            validate_filter(&filter).map_err(|e| usage(anyhow!("invalid filter {filter:?}: {e}")))?;
            block_on(echo(url, filter, count))
        }
    }
}

fn block_on(f: impl std::future::Future<Output = Outcome>) -> Outcome {
    tokio::runtime::Runtime::new()
        .context("starting the async runtime")
        .map_err(failed)?
        .block_on(f)
}

fn broker_url(c: &Common) -> Result<BrokerUrl, Failure> {
    c.broker_url.parse().map_err(usage)
}

fn stack_config(c: &Common) -> Result<StackConfig, Failure> {
    let mut cfg = match &c.config {
        Some(path) => StackConfig::load(path).map_err(usage)?,
        None => StackConfig::default(),
    };
    if let Some(id) = &c.robot_id {
        cfg.robot_id = id.clone();
    }
    if let Some(kg) = c.payload_kg {
        cfg.robot.payload_kg = kg;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(anyhow!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn write_records(path: &Path, rows: &[TrajectoryRecord]) -> Result<(), Failure> {
    let file = File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(failed)?;
    let mut w = BufWriter::new(file);
    write_csv(&mut w, rows)
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {}", path.display()))
        .map_err(failed)
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(c: &Common, args: RunArgs) -> Outcome {
    let mut cfg = stack_config(c)?;
    if let Some(bind) = args.bind {
        cfg.bind = bind;
    }
    if let Some(p) = args.tcp_port {
        cfg.tcp_port = p;
    }
    if let Some(p) = args.ws_port {
        cfg.ws_port = p;
    }
    if let Some(d) = args.duration {
        if !(d >= 0.0 && d.is_finite()) {
            return Err(usage(anyhow!("--duration must be a non-negative number of seconds")));
        }
    }
    if args.fast {
        let duration = args
            .duration
            .ok_or_else(|| usage(anyhow!("--fast needs --duration")))?;
        let cmd = args.cmd.map(|v| Twist::new(v[0], v[1]));
        run_fast(c, &cfg, duration, cmd)
    } else {
        block_on(run_realtime(cfg, args.duration))
    }
}

#[derive(Serialize)]
struct FastSummary {
    virtual_s: f64,
    wall_s: f64,
    control_ticks: u64,
    x: f64,
    y: f64,
    theta: f64,
    odom_x: f64,
    odom_y: f64,
    odom_theta: f64,
    battery_pct: f64,
    battery_empty_at: Option<f64>,
}

fn run_fast(c: &Common, cfg: &StackConfig, duration: f64, cmd: Option<Twist>) -> Outcome {
    let start = Instant::now();
    let mut world = World::new(cfg).map_err(usage)?;
    match cmd {
        Some(t) => world.drive(t, duration),
        None => world.run_until(duration),
    }
    .map_err(failed)?;
    if let Some(path) = &c.out {
        write_records(path, world.records())?;
    }
    let plant = world.robot().plant().state();
    let odom = world.robot().firmware().odom_pose();
    let s = FastSummary {
        virtual_s: world.clock(),
        wall_s: start.elapsed().as_secs_f64(),
        control_ticks: world.ticks(),
        x: plant.pose.x,
        y: plant.pose.y,
        theta: plant.pose.theta,
        odom_x: odom.x,
        odom_y: odom.y,
        odom_theta: odom.theta,
        battery_pct: plant.battery_pct,
        battery_empty_at: world.battery_empty_at(),
    };
    match c.format {
        Format::Json => print_json(&s),
        Format::Text => {
            println!("ran {:.3} s virtual in {:.3} s wall ({} ticks)", s.virtual_s, s.wall_s, s.control_ticks);
            println!("pose x={:.6} y={:.6} theta={:.6}", s.x, s.y, s.theta);
            println!("odom x={:.6} y={:.6} theta={:.6}", s.odom_x, s.odom_y, s.odom_theta);
            match s.battery_empty_at {
                Some(t) => println!("battery {:.3}% (empty at t={t:.3} s)", s.battery_pct),
                None => println!("battery {:.3}%", s.battery_pct),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

async fn run_realtime(cfg: StackConfig, duration: Option<f64>) -> Outcome {
    let shutdown = async move {
        let ctrl_c = async {
            if let Err(e) = tokio::signal::ctrl_c().await {
                tracing::warn!("cannot listen for ctrl-c: {e}");
                std::future::pending::<()>().await;
            }
        };
        match duration {
            Some(d) => tokio::select! {
                _ = tokio::time::sleep(Duration::from_secs_f64(d)) => {}
                _ = ctrl_c => {}
            },
            None => ctrl_c.await,
        }
    };
    let id = cfg.robot_id.clone();
    let summary = run_stack(
        &cfg,
        |a| {
            println!("listening tcp={} ws={} robot={id}", a.tcp, a.ws);
            let _ = io::stdout().flush();
        },
        shutdown,
    )
    .await
    .context("stack failed")
    .map_err(failed)?;
    println!(
        "stopped after {:.3} s virtual, {:.3} s wall, drift {:+.3} ms",
        summary.virtual_s, summary.wall_s, summary.drift_ms
    );
    Ok(ExitCode::SUCCESS)
}

fn scenario(c: &Common, file: &Path) -> Outcome {
    let cfg = stack_config(c)?;
    let text = std::fs::read_to_string(file)
        .with_context(|| format!("reading {}", file.display()))
        .map_err(usage)?;
    let sc: Scenario = text
        .parse()
        .map_err(|e| usage(anyhow!("{}: {e}", file.display())))?;
    let report = run_scenario(&sc, &cfg).map_err(failed)?;
    if let Some(path) = &c.out {
        write_records(path, report.world.records())?;
    }
    let passed = report.passed();
    match c.format {
        Format::Json => {
            let results: Vec<_> = report
                .results
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "time": r.time,
                        "line": r.line,
                        "metric": r.assertion.metric.name(),
                        "target": r.assertion.target,
                        "tolerance": r.assertion.tolerance.to_string(),
                        "actual": r.actual,
                        "passed": r.passed,
                    })
                })
                .collect();
            print_json(&serde_json::json!({ "passed": passed, "assertions": results }));
        }
        Format::Text => {
            for r in &report.results {
                println!("{r}");
            }
            let n_pass = report.results.iter().filter(|r| r.passed).count();
            println!(
                "{}: {n_pass}/{} assertions passed",
                if passed { "ok" } else { "failed" },
                report.results.len()
            );
        }
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn calibration(c: &Common) -> Outcome {
    let cfg = stack_config(c)?;
    let report = calibrate(&cfg).map_err(failed)?;
    match c.format {
        Format::Json => print_json(&report),
        Format::Text => print!("{}", report.to_text()),
    }
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn client_id(role: &str) -> String {
    format!("openscout-{role}-{}", std::process::id())
}

async fn publish(url: BrokerUrl, topic: String, payload: Vec<u8>, retain: bool, hold: Option<f64>, rate: f64) -> Outcome {
    let mut client = MqttClient::connect(&url, Connect::new(client_id("pub"), 30))
        .await
        .map_err(failed)?;
    client.publish(&topic, payload.clone(), retain).await.map_err(failed)?;
    if let Some(hold) = hold {
        let period = Duration::from_secs_f64(1.0 / rate);
        let end = tokio::time::Instant::now() + Duration::from_secs_f64(hold.max(0.0));
        let mut interval = tokio::time::interval_at(tokio::time::Instant::now() + period, period);
        loop {
            let at = interval.tick().await;
            if at >= end {
                break;
            }
            client.publish(&topic, payload.clone(), retain).await.map_err(failed)?;
        }
    }
    client.disconnect().await.map_err(failed)?;
    Ok(ExitCode::SUCCESS)
}

async fn echo(url: BrokerUrl, filter: String, count: Option<u64>) -> Outcome {
    // keepalive 0: the broker never times out an idle listener
    let mut client = MqttClient::connect(&url, Connect::new(client_id("echo"), 0))
        .await
        .map_err(failed)?;
    let codes = client.subscribe(&[filter.as_str()]).await.map_err(failed)?;
    if codes.first() == Some(&0x80) {
        return Err(usage(anyhow!("broker rejected filter {filter:?}")));
    }
    let mut seen = 0u64;
    let stdout = io::stdout();
    while count.map_or(true, |n| seen < n) {
        tokio::select! {
            p = client.next_publish() => {
                let p = p.context("connection lost").map_err(failed)?;
                let mut out = stdout.lock();
                let _ = writeln!(out, "{} {}", p.topic, String::from_utf8_lossy(&p.payload));
                let _ = out.flush();
                seen += 1;
            }
            _ = tokio::signal::ctrl_c() => break,
        }
    }
    client.disconnect().await.map_err(failed)?;
    Ok(ExitCode::SUCCESS)
}
