//! Emulation of the v1.1 MCU control program.
//!
//! One call to [`Firmware::tick`] is one pass of the control loop: latch the
//! newest valid `cmd_vel`, enforce the command watchdog, run a PI loop per
//! drive side against encoder-derived speed, dead-reckon odometry, and emit
//! telemetry on its schedule. Each side has a single duty channel that fans
//! out to both of its motors; feedback is the mean of the side's two
//! encoders.

use std::collections::VecDeque;

use crate::config::RobotConfig;
use crate::geometry::{arc_step, body_velocity, Pose, SidePair};
use crate::plant::v_max_of_payload;
use crate::ros::{
    parse_twist, serialize_odom, serialize_status, topic_for, Channel, MessageError, OdomSample,
    StatusSample, Twist,
};

/// Per-side wheel speeds for a body twist.
pub fn inverse_kinematics(t: Twist, track_width: f64) -> SidePair<f64> {
    let half = t.angular_z * track_width / 2.0;
    SidePair::new(t.linear_x - half, t.linear_x + half)
}

/// Scales both sides by a common factor so neither exceeds `v_max`,
/// keeping the commanded curvature.
pub fn saturate_targets(targets: SidePair<f64>, v_max: f64) -> SidePair<f64> {
    let peak = targets.left.abs().max(targets.right.abs());
    if peak <= v_max {
        return targets;
    }
    let k = v_max / peak;
    targets.map(|v| v * k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PiState {
    pub integral: f64,
}

/// Positional PI with conditional-integration anti-windup.
///
/// The error is integrated first; the new integral is kept only if the
/// resulting output is unsaturated or the error pulls it back toward the
/// linear range.
pub fn pi_step(state: PiState, target: f64, measured: f64, dt: f64, gains: PiGains) -> (PiState, f64) {
    let e = target - measured;
    let candidate = state.integral + e * dt;
    let raw = gains.kp * e + gains.ki * candidate;
    let keep = raw.abs() <= 1.0 || (raw > 1.0 && e < 0.0) || (raw < -1.0 && e > 0.0);
    let (integral, raw) = if keep {
        (candidate, raw)
    } else {
        (state.integral, gains.kp * e + gains.ki * state.integral)
    };
    (PiState { integral }, raw.clamp(-1.0, 1.0))
}

/// Side speed from the tick deltas of its two encoders over `dt`.
pub fn estimate_side_speed(tick_deltas: (i64, i64), dt: f64, cfg: &RobotConfig) -> f64 {
    let mean = (tick_deltas.0 + tick_deltas.1) as f64 / 2.0;
    mean / cfg.ticks_per_rev as f64 * std::f64::consts::TAU * cfg.wheel_radius / dt
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PinChannel {
    LeftDuty,
    RightDuty,
    EncoderLeftFront,
    EncoderLeftBack,
    EncoderRightFront,
    EncoderRightBack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motor {
    LeftFront,
    LeftBack,
    RightFront,
    RightBack,
}

/// One row of the pin table: logical channel, ESP32 pin, motors wired to it.
#[derive(Debug, Clone, Copy)]
pub struct PinAssignment {
    pub channel: PinChannel,
    pub pin: &'static str,
    pub motors: &'static [Motor],
}

/// ESP32 pin usage of the v1.1 board. Duty pins are wired to both motors
/// of their side.
pub const PIN_MAP: [PinAssignment; 6] = [
    PinAssignment {
        channel: PinChannel::LeftDuty,
        pin: "GPIO25",
        motors: &[Motor::LeftFront, Motor::LeftBack],
    },
    PinAssignment {
        channel: PinChannel::RightDuty,
        pin: "GPIO26",
        motors: &[Motor::RightFront, Motor::RightBack],
    },
    PinAssignment {
        channel: PinChannel::EncoderLeftFront,
        pin: "GPIO34",
        motors: &[Motor::LeftFront],
    },
    PinAssignment {
        channel: PinChannel::EncoderLeftBack,
        pin: "GPIO35",
        motors: &[Motor::LeftBack],
    },
    PinAssignment {
        channel: PinChannel::EncoderRightFront,
        pin: "GPIO32",
        motors: &[Motor::RightFront],
    },
    PinAssignment {
        channel: PinChannel::EncoderRightBack,
        pin: "GPIO33",
        motors: &[Motor::RightBack],
    },
];

/// Controller state visible to the harness.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FirmwareState {
    pub target: SidePair<f64>,
    pub pi: SidePair<PiState>,
    pub last_cmd_time: f64,
    pub duty: SidePair<f64>,
    /// Cumulative counts, order LF, LB, RF, RB.
    pub tick_counters: [i64; 4],
    pub clock: f64,
    pub malformed_cmd_count: u64,
    pub watchdog_tripped: bool,
    /// Control ticks executed so far.
    pub ticks: u64,
    pub last_cmd_tick: u64,
}

/// Sensor readings handed to one control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensors {
    /// Encoder ticks since the previous control tick, order LF, LB, RF, RB.
    pub tick_deltas: [i64; 4],
    pub battery_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub topic: String,
    pub payload: Vec<u8>,
    pub retain: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub duty: SidePair<f64>,
    pub publishes: Vec<Outbound>,
}

#[derive(Debug, Clone)]
pub struct Firmware {
    cfg: RobotConfig,
    state: FirmwareState,
    v_max: f64,
    watchdog_ticks: u64,
    odom_every: u64,
    status_every: u64,
    window: VecDeque<[i64; 4]>,
    odom_pose: Pose,
    odom_ticks: [i64; 4],
    odom_topic: String,
    status_topic: String,
    battery_pct: f64,
}

impl Firmware {
    pub fn new(cfg: &RobotConfig, robot_id: &str) -> Result<Self, MessageError> {
        let v_max = v_max_of_payload(cfg.payload_kg, &cfg.anchors)
            .expect("payload validated with the config");
        Ok(Firmware {
            cfg: cfg.clone(),
            state: FirmwareState::default(),
            v_max,
            watchdog_ticks: (cfg.watchdog_timeout * cfg.control_rate as f64 + 1e-9).floor() as u64,
            odom_every: (cfg.control_rate / cfg.telemetry_rate) as u64,
            status_every: (cfg.control_rate / cfg.status_rate) as u64,
            window: VecDeque::with_capacity(cfg.speed_window as usize),
            odom_pose: Pose::default(),
            odom_ticks: [0; 4],
            odom_topic: topic_for(robot_id, Channel::Odom)?,
            status_topic: topic_for(robot_id, Channel::Status)?,
            battery_pct: 100.0,
        })
    }

    pub fn state(&self) -> &FirmwareState {
        &self.state
    }

    pub fn config(&self) -> &RobotConfig {
        &self.cfg
    }

    pub fn odom_pose(&self) -> Pose {
        self.odom_pose
    }

    /// Reconfigures the speed envelope for a new payload.
    pub fn set_payload(&mut self, payload_kg: f64) -> Result<(), crate::plant::PlantError> {
        self.v_max = v_max_of_payload(payload_kg, &self.cfg.anchors)?;
        self.cfg.payload_kg = payload_kg;
        Ok(())
    }

    /// One control period. `inbox` holds the cmd_vel payloads received
    /// since the previous tick, oldest first.
    pub fn tick(&mut self, inbox: &[Vec<u8>], sensors: Sensors) -> TickOutput {
        let period = self.cfg.control_period();
        let s = &mut self.state;
        s.ticks += 1;
        s.clock = s.ticks as f64 * period;
        self.battery_pct = sensors.battery_pct;
        for (acc, d) in s.tick_counters.iter_mut().zip(sensors.tick_deltas) {
            *acc += d;
        }
        for (acc, d) in self.odom_ticks.iter_mut().zip(sensors.tick_deltas) {
            *acc += d;
        }
        if self.window.len() == self.cfg.speed_window as usize {
            self.window.pop_front();
        }
        self.window.push_back(sensors.tick_deltas);

        let mut latest = None;
        for payload in inbox {
            match parse_twist(payload) {
                Ok(t) => latest = Some(t),
                Err(_) => s.malformed_cmd_count += 1,
            }
        }
        if let Some(t) = latest {
            s.target = saturate_targets(inverse_kinematics(t, self.cfg.track_width_effective), self.v_max);
            s.last_cmd_tick = s.ticks;
            s.last_cmd_time = s.clock;
            s.watchdog_tripped = false;
        }
        if s.ticks - s.last_cmd_tick > self.watchdog_ticks {
            s.target = SidePair::default();
            s.watchdog_tripped = true;
        }

        let mut sums = [0i64; 4];
        for deltas in &self.window {
            for (acc, d) in sums.iter_mut().zip(deltas) {
                *acc += d;
            }
        }
        let window_dt = self.window.len() as f64 * period;
        let measured = SidePair::new(
            estimate_side_speed((sums[0], sums[1]), window_dt, &self.cfg),
            estimate_side_speed((sums[2], sums[3]), window_dt, &self.cfg),
        );
        let gains = PiGains {
            kp: self.cfg.kp,
            ki: self.cfg.ki,
        };
        let (pl, dl) = pi_step(s.pi.left, s.target.left, measured.left, period, gains);
        let (pr, dr) = pi_step(s.pi.right, s.target.right, measured.right, period, gains);
        s.pi = SidePair::new(pl, pr);
        s.duty = SidePair::new(dl, dr);

        // Dead reckoning from this period's ticks alone.
        let d = sensors.tick_deltas;
        let step_left = estimate_side_speed((d[0], d[1]), period, &self.cfg);
        let step_right = estimate_side_speed((d[2], d[3]), period, &self.cfg);
        let (v, w) = body_velocity(step_left, step_right, self.cfg.track_width_effective);
        self.odom_pose = arc_step(self.odom_pose, v, w, period);

        let mut publishes = Vec::new();
        if self.state.ticks % self.odom_every == 0 {
            publishes.push(self.odom_message());
        }
        if (self.state.ticks - 1) % self.status_every == 0 {
            publishes.push(self.status_message(true));
        }
        TickOutput {
            duty: self.state.duty,
            publishes,
        }
    }

    fn odom_message(&mut self) -> Outbound {
        let dt = self.odom_every as f64 * self.cfg.control_period();
        let t = self.odom_ticks;
        let left = estimate_side_speed((t[0], t[1]), dt, &self.cfg);
        let right = estimate_side_speed((t[2], t[3]), dt, &self.cfg);
        let (v, w) = body_velocity(left, right, self.cfg.track_width_effective);
        self.odom_ticks = [0; 4];
        let sample = OdomSample {
            stamp: self.state.clock,
            x: self.odom_pose.x,
            y: self.odom_pose.y,
            theta: self.odom_pose.theta,
            twist: Twist::new(v, w),
        };
        Outbound {
            topic: self.odom_topic.clone(),
            payload: serialize_odom(&sample).expect("odometry is finite"),
            retain: false,
        }
    }

    pub fn status(&self, online: bool) -> StatusSample {
        StatusSample {
            online,
            battery_pct: self.battery_pct.clamp(0.0, 100.0),
            watchdog_tripped: self.state.watchdog_tripped,
            uptime_s: self.state.clock,
            payload_kg: self.cfg.payload_kg,
            malformed_cmds: self.state.malformed_cmd_count,
        }
    }

    /// Retained status publish.
    pub fn status_message(&self, online: bool) -> Outbound {
        Outbound {
            topic: self.status_topic.clone(),
            payload: serialize_status(&self.status(online)).expect("status fields in range"),
            retain: true,
        }
    }
}
