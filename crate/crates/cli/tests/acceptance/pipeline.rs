use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use openscout_core::codec::Connect;
use openscout_core::net::{BrokerUrl, MqttClient};
use openscout_core::ros::parse_odom;
use openscout_core::OdomSample;
use tokio::time::timeout;

use crate::Verdict;

const SPEED: f64 = 0.2;
const HOLD_S: f64 = 3.0;
/// Odometry speed is taken from pose displacement over this trailing window.
const WINDOW_S: f64 = 0.3;

struct Stack(Child);

impl Drop for Stack {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn openscout() -> Command {
    Command::new(env!("CARGO_BIN_EXE_openscout"))
}

/// Starts `openscout run` on free ports and returns it with its TCP address.
fn start() -> Result<(Stack, String), String> {
    let mut child = openscout()
        .args(["run", "--tcp-port", "0", "--ws-port", "0", "--duration", "60"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .map_err(|e| e.to_string())?;
    let tcp = line
        .split_whitespace()
        .find_map(|w| w.strip_prefix("tcp="))
        .ok_or(format!("unexpected banner {line:?}"))?
        .to_owned();
    Ok((Stack(child), tcp))
}

/// Speed from displacement between the sample at `end` and the one
/// `WINDOW_S` earlier.
fn window_speed(odom: &[OdomSample], end: usize) -> Option<f64> {
    let t1 = odom[end].stamp;
    let start = odom[..end].iter().rposition(|o| o.stamp <= t1 - WINDOW_S + 1e-6)?;
    let (a, b) = (&odom[start], &odom[end]);
    Some((b.x - a.x).hypot(b.y - a.y) / (b.stamp - a.stamp))
}

async fn next(c: &mut MqttClient) -> Result<OdomSample, String> {
    let p = timeout(Duration::from_secs(2), c.next_publish())
        .await
        .map_err(|_| "no odometry for 2 s".to_string())?
        .map_err(|e| e.to_string())?;
    parse_odom(&p.payload).map_err(|e| e.to_string())
}

pub fn end_to_end() -> Verdict {
    let (_stack, tcp) = start()?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let odom = rt.block_on(async {
        let url: BrokerUrl = tcp.parse().map_err(|e| format!("{e}"))?;
        let mut observer = MqttClient::connect(&url, Connect::new("acceptance-observer", 0))
            .await
            .map_err(|e| e.to_string())?;
        observer.subscribe(&["openscout/alpha/odom"]).await.map_err(|e| e.to_string())?;
        let mut odom = Vec::new();
        for _ in 0..3 {
            odom.push(next(&mut observer).await?);
        }
        let payload = format!(r#"{{"linear":{{"x":{SPEED}}},"angular":{{"z":0}}}}"#);
        let mut publisher = openscout()
            .args(["pub", "--broker-url", &tcp, "openscout/alpha/cmd_vel", &payload])
            .args(["--hold", &HOLD_S.to_string()])
            .spawn()
            .map_err(|e| e.to_string())?;
        let started = odom.last().unwrap().stamp;
        while odom.last().unwrap().stamp < started + HOLD_S {
            odom.push(next(&mut observer).await?);
        }
        let status = publisher.wait().map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("pub exited with {status}"));
        }
        Ok::<_, String>(odom)
    })?;

    // The command lands between the last sample at rest and the first one
    // that moved; taking the earlier stamp only makes the check stricter.
    let moved = odom
        .iter()
        .position(|o| o.x != 0.0 || o.twist.linear_x != 0.0)
        .ok_or("the robot never moved")?;
    ensure!(moved > 0, "robot was already moving");
    let t_cmd = odom[moved - 1].stamp;
    let at_1s = odom
        .iter()
        .rposition(|o| o.stamp <= t_cmd + 1.0 + 1e-6)
        .ok_or("no sample one second after the command")?;
    let v = window_speed(&odom, at_1s).ok_or("window before the 1 s sample is empty")?;
    ensure!(
        (v - SPEED).abs() <= 0.02 * SPEED,
        "odometry speed {v:.4} m/s at t_cmd+{:.2} s, commanded {SPEED}",
        odom[at_1s].stamp - t_cmd
    );
    // and it stays there while the command is held
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in at_1s..odom.len() {
        if odom[i].stamp > t_cmd + HOLD_S - 0.5 {
            break;
        }
        let v = window_speed(&odom, i).unwrap();
        worst = worst.max((v - SPEED).abs() / SPEED);
        checked += 1;
    }
    ensure!(worst <= 0.02, "held speed strayed {:.2}% from the command", worst * 100.0);
    Ok(format!(
        "odometry {v:.4} m/s at t_cmd+{:.1} s for a {SPEED} m/s command; {checked} later windows within {:.2}%",
        odom[at_1s].stamp - t_cmd,
        worst * 100.0
    ))
}
