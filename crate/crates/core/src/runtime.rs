//! Real-time stack: broker listeners plus one robot on a loopback
//! connection, paced by the wall clock.

use std::future::Future;
use std::time::Duration;

use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tokio::time::{Instant, MissedTickBehavior};

use crate::broker::BrokerConfig;
use crate::config::{ConfigError, StackConfig};
use crate::net::{serve, BrokerHandle, NetError, Outgoing, ServeConfig, ServerAddrs};
use crate::robot::{RobotError, RobotNode};

/// Wall-clock seconds between drift log lines.
const DRIFT_LOG_INTERVAL_S: u64 = 60;

#[derive(Debug, thiserror::Error)]
pub enum StackError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error("broker closed the robot connection")]
    RobotDisconnected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub control_ticks: u64,
    pub virtual_s: f64,
    pub wall_s: f64,
    /// Wall minus virtual time at the last tick (ms).
    pub drift_ms: f64,
}

#[derive(Debug)]
pub struct RunningStack {
    pub addrs: ServerAddrs,
    pub broker: BrokerHandle,
    stop: oneshot::Sender<()>,
    robot: JoinHandle<Result<RunSummary, StackError>>,
}

impl RunningStack {
    /// Publishes the offline status, disconnects the robot gracefully and
    /// stops the broker.
    pub async fn stop(self) -> Result<RunSummary, StackError> {
        let _ = self.stop.send(());
        let summary = self.robot.await.expect("robot task panicked")?;
        // let the broker drain the robot's last bytes before stopping
        let _ = self.broker.snapshot().await;
        self.broker.shutdown();
        Ok(summary)
    }
}

pub async fn start_stack(cfg: &StackConfig) -> Result<RunningStack, StackError> {
    cfg.validate()?;
    let robot = RobotNode::new(&cfg.robot, &cfg.robot_id, cfg.seed)?;
    let (broker, addrs) = serve(&ServeConfig {
        bind: cfg.bind,
        tcp_port: cfg.tcp_port,
        ws_port: cfg.ws_port,
        broker: BrokerConfig::default(),
    })
    .await?;
    let (stop, stop_rx) = oneshot::channel();
    let period = Duration::from_secs_f64(cfg.robot.control_period());
    let robot = tokio::spawn(robot_loop(robot, broker.clone(), period, stop_rx));
    Ok(RunningStack {
        addrs,
        broker,
        stop,
        robot,
    })
}

/// Runs until `shutdown` resolves or the robot fails.
pub async fn run_stack(
    cfg: &StackConfig,
    on_ready: impl FnOnce(&ServerAddrs),
    shutdown: impl Future<Output = ()>,
) -> Result<RunSummary, StackError> {
    let RunningStack {
        addrs,
        broker,
        stop,
        mut robot,
    } = start_stack(cfg).await?;
    on_ready(&addrs);
    let joined = tokio::select! {
        _ = shutdown => {
            let _ = stop.send(());
            (&mut robot).await
        }
        r = &mut robot => r,
    };
    let _ = broker.snapshot().await;
    broker.shutdown();
    joined.expect("robot task panicked")
}

async fn robot_loop(
    mut robot: RobotNode,
    broker: BrokerHandle,
    period: Duration,
    mut stop: oneshot::Receiver<()>,
) -> Result<RunSummary, StackError> {
    let mut conn = broker.connect_loopback()?;
    conn.send(robot.connect_bytes())?;
    let start = Instant::now();
    // Burst keeps virtual time locked to the wall clock after a stall.
    let mut interval = tokio::time::interval_at(start + period, period);
    interval.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let ticks_per_log = (DRIFT_LOG_INTERVAL_S as f64 / period.as_secs_f64()).round() as u64;
    let mut ticks = 0u64;
    let summary = |ticks: u64| {
        let virtual_s = ticks as f64 * period.as_secs_f64();
        let wall_s = start.elapsed().as_secs_f64();
        RunSummary {
            control_ticks: ticks,
            virtual_s,
            wall_s,
            drift_ms: (wall_s - virtual_s) * 1e3,
        }
    };
    loop {
        tokio::select! {
            biased;
            _ = &mut stop => break,
            _ = interval.tick() => {
                while let Ok(msg) = conn.rx.try_recv() {
                    match msg {
                        Outgoing::Bytes(b) => robot.receive(&b)?,
                        Outgoing::Close => return Err(StackError::RobotDisconnected),
                    }
                }
                conn.send(robot.step())?;
                ticks += 1;
                if ticks % ticks_per_log == 0 {
                    let s = summary(ticks);
                    tracing::info!(
                        "clock drift {:+.3} ms after {:.0} s virtual",
                        s.drift_ms,
                        s.virtual_s
                    );
                }
            }
        }
    }
    conn.send(robot.shutdown_bytes())?;
    let s = summary(ticks);
    tracing::info!("robot stopped: {:.2} s virtual, drift {:+.3} ms", s.virtual_s, s.drift_ms);
    Ok(s)
}
