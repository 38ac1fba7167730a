//! Robot and stack configuration, plus the flat `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! robot-id = alpha
//! payload-kg = 3
//! v-max-anchors = 0:0.60, 3:0.50, 6:0.45
//! ```
//!
//! Keys use the hyphenated field names below; underscores are accepted too.

use std::net::IpAddr;
use std::path::Path;

use crate::plant::{v_max_of_payload, CalibrationAnchors, PlantError};
use crate::ros::{validate_robot_id, MessageError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value {value:?} for `{key}`")]
    InvalidValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Message(#[from] MessageError),
}

/// Geometry, encoder, controller and calibration constants of one robot.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotConfig {
    /// Skid-calibrated track width used by both firmware IK and plant FK.
    pub track_width_effective: f64,
    pub wheel_radius: f64,
    pub ticks_per_rev: u32,
    /// Firmware control loop rate (Hz).
    pub control_rate: u32,
    /// Odometry publish rate (Hz); must divide `control_rate`.
    pub telemetry_rate: u32,
    /// Status publish rate (Hz); must divide `control_rate`.
    pub status_rate: u32,
    pub watchdog_timeout: f64,
    /// Proportional gain, duty per (m/s).
    pub kp: f64,
    /// Integral gain, duty per m.
    pub ki: f64,
    /// Control periods summed for the feedback speed estimate.
    pub speed_window: u32,
    pub payload_kg: f64,
    pub anchors: CalibrationAnchors,
    /// Motor first-order time constant (s).
    pub motor_tau: f64,
    /// Plant integration rate (Hz); must be a multiple of `control_rate`.
    pub plant_rate: u32,
    /// Std-dev of Gaussian noise on each encoder's observed speed (m/s).
    pub encoder_noise: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        let anchors = CalibrationAnchors::default();
        RobotConfig {
            track_width_effective: anchors.fitted_track_width(),
            wheel_radius: 0.1,
            ticks_per_rev: 900,
            control_rate: 100,
            telemetry_rate: 10,
            status_rate: 1,
            watchdog_timeout: 0.5,
            kp: 1.0,
            ki: 10.0,
            speed_window: 4,
            payload_kg: 3.0,
            anchors,
            motor_tau: 0.15,
            plant_rate: 1000,
            encoder_noise: 0.0,
        }
    }
}

impl RobotConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.anchors.validate()?;
        let positive = [
            ("track-width-effective", self.track_width_effective),
            ("wheel-radius", self.wheel_radius),
            ("watchdog-timeout", self.watchdog_timeout),
            ("kp", self.kp),
            ("ki", self.ki),
            ("motor-tau", self.motor_tau),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{key} must be positive, got {v}")));
            }
        }
        if !(self.encoder_noise >= 0.0 && self.encoder_noise.is_finite()) {
            return Err(ConfigError::Invalid("encoder-noise must be >= 0".into()));
        }
        let counts = [
            ("ticks-per-rev", self.ticks_per_rev),
            ("control-rate", self.control_rate),
            ("telemetry-rate", self.telemetry_rate),
            ("status-rate", self.status_rate),
            ("speed-window", self.speed_window),
            ("plant-rate", self.plant_rate),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{key} must be positive")));
            }
        }
        for (key, rate) in [("telemetry-rate", self.telemetry_rate), ("status-rate", self.status_rate)] {
            if rate > self.control_rate || self.control_rate % rate != 0 {
                return Err(ConfigError::Invalid(format!(
                    "{key} {rate} Hz must divide control-rate {} Hz",
                    self.control_rate
                )));
            }
        }
        if self.plant_rate % self.control_rate != 0 {
            return Err(ConfigError::Invalid("plant-rate must be a multiple of control-rate".into()));
        }
        if self.watchdog_timeout <= self.control_period() {
            return Err(ConfigError::Invalid("watchdog-timeout must exceed the control period".into()));
        }
        v_max_of_payload(self.payload_kg, &self.anchors)?;
        Ok(())
    }

    pub fn control_period(&self) -> f64 {
        1.0 / self.control_rate as f64
    }

    pub fn substeps_per_control(&self) -> u32 {
        self.plant_rate / self.control_rate
    }

    pub fn v_max(&self) -> Result<f64, PlantError> {
        v_max_of_payload(self.payload_kg, &self.anchors)
    }
}

/// Everything `run` and `scenario` need: the robot plus broker endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct StackConfig {
    pub robot: RobotConfig,
    pub robot_id: String,
    pub bind: IpAddr,
    pub tcp_port: u16,
    pub ws_port: u16,
    pub seed: u64,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            robot: RobotConfig::default(),
            robot_id: "alpha".into(),
            bind: IpAddr::from([127, 0, 0, 1]),
            tcp_port: 1883,
            ws_port: 9001,
            seed: 0,
        }
    }
}

impl StackConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_robot_id(&self.robot_id)?;
        self.robot.validate()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = StackConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (key, value) in parse_pairs(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.replace('_', "-");
        let bad = || ConfigError::InvalidValue {
            key: key.clone(),
            value: value.to_owned(),
        };
        let float = || value.parse::<f64>().map_err(|_| bad());
        let count = || value.parse::<u32>().map_err(|_| bad());
        let r = &mut self.robot;
        match key.as_str() {
            "robot-id" => self.robot_id = value.to_owned(),
            "bind" => self.bind = value.parse().map_err(|_| bad())?,
            "tcp-port" => self.tcp_port = value.parse().map_err(|_| bad())?,
            "ws-port" => self.ws_port = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "track-width-effective" => r.track_width_effective = float()?,
            "wheel-radius" => r.wheel_radius = float()?,
            "ticks-per-rev" => r.ticks_per_rev = count()?,
            "control-rate" => r.control_rate = count()?,
            "telemetry-rate" => r.telemetry_rate = count()?,
            "status-rate" => r.status_rate = count()?,
            "watchdog-timeout" => r.watchdog_timeout = float()?,
            "kp" => r.kp = float()?,
            "ki" => r.ki = float()?,
            "speed-window" => r.speed_window = count()?,
            "payload-kg" => r.payload_kg = float()?,
            "motor-tau" => r.motor_tau = float()?,
            "plant-rate" => r.plant_rate = count()?,
            "encoder-noise" => r.encoder_noise = float()?,
            "battery-endurance" => r.anchors.battery_endurance_s = float()?,
            "v-max-anchors" => {
                r.anchors.v_max = value
                    .split(',')
                    .map(|p| parse_point(p).ok_or_else(bad))
                    .collect::<Result<_, _>>()?;
            }
            "omega-max-anchor" => r.anchors.omega_max = parse_point(value).ok_or_else(bad)?,
            _ => return Err(ConfigError::UnknownKey(key)),
        }
        Ok(())
    }
}

fn parse_point(s: &str) -> Option<(f64, f64)> {
    let (m, v) = s.trim().split_once(':')?;
    Some((m.trim().parse().ok()?, v.trim().parse().ok()?))
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.push((k.to_owned(), v.to_owned()));
    }
    Ok(out)
}
