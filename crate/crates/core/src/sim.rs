//! Fast virtual-time world: broker, robot and an operator client wired
//! together in one thread, advanced one control period at a time.

use std::io::{self, Write};
use std::time::Duration;

use crate::broker::{Action, Broker, BrokerConfig, ConnId};
use crate::codec::{encode_packet, Connect, Packet, PacketDecoder, Publish, QoS, Subscribe};
use crate::config::StackConfig;
use crate::robot::{RobotError, RobotNode};
use crate::ros::{parse_odom, parse_status, serialize_twist, topic_for, Channel, OdomSample, StatusSample, Twist};

pub const ROBOT_CONN: ConnId = 1;
pub const OPERATOR_CONN: ConnId = 2;

/// Virtual seconds between broker keep-alive sweeps.
const SWEEP_INTERVAL: f64 = 0.25;

/// Re-publish interval for held commands (s).
pub const HOLD_INTERVAL: f64 = 0.1;

/// One telemetry-rate row of the trajectory log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub time: f64,
    pub gt_x: f64,
    pub gt_y: f64,
    pub gt_theta: f64,
    pub odom_x: f64,
    pub odom_y: f64,
    pub odom_theta: f64,
    pub wheel_left: f64,
    pub wheel_right: f64,
    pub duty_left: f64,
    pub duty_right: f64,
    pub battery: f64,
}

pub const CSV_HEADER: &str =
    "time,gt_x,gt_y,gt_theta,odom_x,odom_y,odom_theta,wheel_left,wheel_right,duty_left,duty_right,battery";

impl TrajectoryRecord {
    pub fn fields(&self) -> [f64; 12] {
        [
            self.time,
            self.gt_x,
            self.gt_y,
            self.gt_theta,
            self.odom_x,
            self.odom_y,
            self.odom_theta,
            self.wheel_left,
            self.wheel_right,
            self.duty_left,
            self.duty_right,
            self.battery,
        ]
    }

    pub fn csv_row(&self) -> String {
        self.fields().map(format_g).join(",")
    }
}

pub fn write_csv<W: Write>(mut w: W, rows: &[TrajectoryRecord]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// C `%g` with six significant digits. Negative zero prints as `0`.
pub fn format_g(x: f64) -> String {
    const P: i32 = 6;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_owned()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug)]
pub struct World {
    broker: Broker,
    robot: RobotNode,
    operator: PacketDecoder,
    cmd_topic: String,
    odom_topic: String,
    status_topic: String,
    ticks: u64,
    period: f64,
    telemetry_every: u64,
    sweep_every: u64,
    last_odom: Option<OdomSample>,
    last_status: Option<StatusSample>,
    odom_log: Vec<OdomSample>,
    records: Vec<TrajectoryRecord>,
    robot_closed: bool,
    battery_empty_at: Option<f64>,
}

impl World {
    pub fn new(cfg: &StackConfig) -> Result<Self, RobotError> {
        cfg.validate()?;
        let robot = RobotNode::new(&cfg.robot, &cfg.robot_id, cfg.seed)?;
        let topic = |c| topic_for(&cfg.robot_id, c).expect("robot id validated");
        let period = cfg.robot.control_period();
        let mut w = World {
            broker: Broker::new(BrokerConfig::default()),
            robot,
            operator: PacketDecoder::new(usize::MAX),
            cmd_topic: topic(Channel::CmdVel),
            odom_topic: topic(Channel::Odom),
            status_topic: topic(Channel::Status),
            ticks: 0,
            period,
            telemetry_every: (cfg.robot.control_rate / cfg.robot.telemetry_rate) as u64,
            sweep_every: ((SWEEP_INTERVAL / period).round() as u64).max(1),
            last_odom: None,
            last_status: None,
            odom_log: Vec::new(),
            records: Vec::new(),
            robot_closed: false,
            battery_empty_at: None,
        };
        w.broker.open(ROBOT_CONN);
        w.broker.open(OPERATOR_CONN);
        let mut op = encode_packet(&Packet::Connect(Connect::new("operator", 0))).expect("connect");
        let sub = Subscribe {
            packet_id: 1,
            filters: vec![(format!("openscout/{}/#", cfg.robot_id), QoS::AtMostOnce)],
        };
        op.extend(encode_packet(&Packet::Subscribe(sub)).expect("subscribe"));
        w.deliver(OPERATOR_CONN, &op)?;
        let hello = w.robot.connect_bytes();
        w.deliver(ROBOT_CONN, &hello)?;
        w.record();
        Ok(w)
    }

    pub fn clock(&self) -> f64 {
        self.ticks as f64 * self.period
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    fn now(&self) -> Duration {
        Duration::from_secs_f64(self.clock())
    }

    pub fn robot(&self) -> &RobotNode {
        &self.robot
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    /// Latest odometry the operator has received.
    pub fn last_odom(&self) -> Option<&OdomSample> {
        self.last_odom.as_ref()
    }

    pub fn odom_log(&self) -> &[OdomSample] {
        &self.odom_log
    }

    pub fn last_status(&self) -> Option<&StatusSample> {
        self.last_status.as_ref()
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    /// Virtual time at which the plant battery first read 0 %.
    pub fn battery_empty_at(&self) -> Option<f64> {
        self.battery_empty_at
    }

    /// Operator publishes a Twist on the robot's cmd_vel topic.
    pub fn command(&mut self, t: Twist) -> Result<(), RobotError> {
        let payload = serialize_twist(&t).map_err(crate::config::ConfigError::from)?;
        let topic = self.cmd_topic.clone();
        self.publish(&topic, payload, false)
    }

    /// Operator publishes an arbitrary message.
    pub fn publish(&mut self, topic: &str, payload: Vec<u8>, retain: bool) -> Result<(), RobotError> {
        let bytes = encode_packet(&Packet::Publish(Publish::new(topic, payload, retain)))?;
        self.deliver(OPERATOR_CONN, &bytes)
    }

    pub fn set_payload(&mut self, payload_kg: f64) -> Result<(), RobotError> {
        Ok(self.robot.set_payload(payload_kg)?)
    }

    /// One control period.
    pub fn step(&mut self) -> Result<(), RobotError> {
        self.ticks += 1;
        let out = self.robot.step();
        if self.battery_empty_at.is_none() && self.robot.plant().state().battery_pct <= 0.0 {
            self.battery_empty_at = Some(self.clock());
        }
        if !self.robot_closed {
            self.deliver(ROBOT_CONN, &out)?;
        }
        if self.ticks % self.sweep_every == 0 {
            let actions = self.broker.keepalive_sweep(self.now());
            self.dispatch(actions)?;
        }
        if self.ticks % self.telemetry_every == 0 {
            self.record();
        }
        Ok(())
    }

    /// Steps until the clock reaches `t` (to within half a period).
    pub fn run_until(&mut self, t: f64) -> Result<(), RobotError> {
        while self.clock() < t - self.period / 2.0 {
            self.step()?;
        }
        Ok(())
    }

    /// Publishes `cmd` now and every [`HOLD_INTERVAL`] while stepping to
    /// `until`.
    pub fn drive(&mut self, cmd: Twist, until: f64) -> Result<(), RobotError> {
        let mut next = self.clock();
        while self.clock() < until - self.period / 2.0 {
            if self.clock() >= next - self.period / 2.0 {
                self.command(cmd)?;
                next += HOLD_INTERVAL;
            }
            self.step()?;
        }
        Ok(())
    }

    fn deliver(&mut self, from: ConnId, bytes: &[u8]) -> Result<(), RobotError> {
        let actions = self.broker.handle_bytes(from, bytes, self.now());
        self.dispatch(actions)
    }

    fn dispatch(&mut self, actions: Vec<Action>) -> Result<(), RobotError> {
        for a in actions {
            match a {
                Action::Send { conn: ROBOT_CONN, bytes } => self.robot.receive(&bytes)?,
                Action::Send { conn: OPERATOR_CONN, bytes } => self.operator_receive(&bytes)?,
                Action::Close { conn: ROBOT_CONN } => self.robot_closed = true,
                _ => {}
            }
        }
        Ok(())
    }

    fn operator_receive(&mut self, bytes: &[u8]) -> Result<(), RobotError> {
        self.operator.feed(bytes);
        while let Some(p) = self.operator.next_packet()? {
            let Packet::Publish(p) = p else { continue };
            if p.topic == self.odom_topic {
                if let Ok(o) = parse_odom(&p.payload) {
                    self.odom_log.push(o);
                    self.last_odom = Some(o);
                }
            } else if p.topic == self.status_topic {
                if let Ok(s) = parse_status(&p.payload) {
                    self.last_status = Some(s);
                }
            }
        }
        Ok(())
    }

    fn record(&mut self) {
        let plant = self.robot.plant().state();
        let odom = self.robot.firmware().odom_pose();
        let duty = self.robot.duty();
        self.records.push(TrajectoryRecord {
            time: self.clock(),
            gt_x: plant.pose.x,
            gt_y: plant.pose.y,
            gt_theta: plant.pose.theta,
            odom_x: odom.x,
            odom_y: odom.y,
            odom_theta: odom.theta,
            wheel_left: plant.wheel_speed.left,
            wheel_right: plant.wheel_speed.right,
            duty_left: duty.left,
            duty_right: duty.right,
            battery: plant.battery_pct,
        });
    }
}
