//! JSON rendering of the ROS2 message subset carried over MQTT, and the
//! `openscout/<robot-id>/<channel>` topic contract.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::geometry::wrap_angle;

pub const TOPIC_PREFIX: &str = "openscout";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MessageError {
    #[error("invalid robot id {0:?}")]
    InvalidRobotId(String),
    #[error("payload is not JSON: {0}")]
    Json(String),
    #[error("field {0} is not a number")]
    NonNumeric(&'static str),
    #[error("field {0} is not finite")]
    NonFinite(&'static str),
    #[error("battery percentage {0} outside [0, 100]")]
    BatteryOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    CmdVel,
    Odom,
    Status,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::CmdVel, Channel::Odom, Channel::Status];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::CmdVel => "cmd_vel",
            Channel::Odom => "odom",
            Channel::Status => "status",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn validate_robot_id(robot_id: &str) -> Result<(), MessageError> {
    if robot_id.is_empty() || robot_id.contains(['/', '+', '#', '\0']) {
        return Err(MessageError::InvalidRobotId(robot_id.to_owned()));
    }
    Ok(())
}

/// `openscout/<robot-id>/<channel>`.
pub fn topic_for(robot_id: &str, channel: Channel) -> Result<String, MessageError> {
    validate_robot_id(robot_id)?;
    Ok(format!("{TOPIC_PREFIX}/{robot_id}/{channel}"))
}

/// Planar body velocity. Only `linear.x` and `angular.z` of a ROS2 Twist
/// are meaningful for the base.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub linear_x: f64,
    pub angular_z: f64,
}

impl Twist {
    pub const ZERO: Twist = Twist {
        linear_x: 0.0,
        angular_z: 0.0,
    };

    pub fn new(linear_x: f64, angular_z: f64) -> Self {
        Twist {
            linear_x,
            angular_z,
        }
    }

    fn to_json(self) -> Value {
        json!({
            "linear": {"x": self.linear_x, "y": 0.0, "z": 0.0},
            "angular": {"x": 0.0, "y": 0.0, "z": self.angular_z},
        })
    }
}

fn finite(v: f64, field: &'static str) -> Result<f64, MessageError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MessageError::NonFinite(field))
    }
}

// Missing objects and fields read as 0; anything present must be numeric.
fn nested_number(doc: &Value, outer: &str, inner: &str, field: &'static str) -> Result<f64, MessageError> {
    let Some(obj) = doc.get(outer) else {
        return Ok(0.0);
    };
    if !obj.is_object() {
        return Err(MessageError::NonNumeric(field));
    }
    match obj.get(inner) {
        None => Ok(0.0),
        Some(v) => finite(v.as_f64().ok_or(MessageError::NonNumeric(field))?, field),
    }
}

fn parse_json(payload: &[u8]) -> Result<Value, MessageError> {
    serde_json::from_slice(payload).map_err(|e| MessageError::Json(e.to_string()))
}

pub fn parse_twist(payload: &[u8]) -> Result<Twist, MessageError> {
    let doc = parse_json(payload)?;
    if !doc.is_object() {
        return Err(MessageError::Json("top level is not an object".into()));
    }
    twist_from_json(&doc)
}

fn twist_from_json(doc: &Value) -> Result<Twist, MessageError> {
    Ok(Twist {
        linear_x: nested_number(doc, "linear", "x", "linear.x")?,
        angular_z: nested_number(doc, "angular", "z", "angular.z")?,
    })
}

pub fn serialize_twist(t: &Twist) -> Result<Vec<u8>, MessageError> {
    finite(t.linear_x, "linear.x")?;
    finite(t.angular_z, "angular.z")?;
    Ok(t.to_json().to_string().into_bytes())
}

/// Planar odometry estimate published by the robot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OdomSample {
    pub stamp: f64,
    pub x: f64,
    pub y: f64,
    /// Heading in (-pi, pi].
    pub theta: f64,
    pub twist: Twist,
}

pub fn serialize_odom(o: &OdomSample) -> Result<Vec<u8>, MessageError> {
    finite(o.stamp, "header.stamp")?;
    finite(o.x, "pose.x")?;
    finite(o.y, "pose.y")?;
    finite(o.theta, "pose.theta")?;
    finite(o.twist.linear_x, "twist.linear.x")?;
    finite(o.twist.angular_z, "twist.angular.z")?;
    let doc = json!({
        "header": {"stamp": o.stamp, "frame_id": "odom"},
        "pose": {"x": o.x, "y": o.y, "theta": wrap_angle(o.theta)},
        "twist": o.twist.to_json(),
    });
    Ok(doc.to_string().into_bytes())
}

pub fn parse_odom(payload: &[u8]) -> Result<OdomSample, MessageError> {
    let doc = parse_json(payload)?;
    let stamp = nested_number(&doc, "header", "stamp", "header.stamp")?;
    let x = nested_number(&doc, "pose", "x", "pose.x")?;
    let y = nested_number(&doc, "pose", "y", "pose.y")?;
    let theta = nested_number(&doc, "pose", "theta", "pose.theta")?;
    let twist = match doc.get("twist") {
        Some(t) => twist_from_json(t)?,
        None => Twist::ZERO,
    };
    Ok(OdomSample {
        stamp,
        x,
        y,
        theta,
        twist,
    })
}

/// Robot health, published retained on the status topic.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StatusSample {
    pub online: bool,
    pub battery_pct: f64,
    pub watchdog_tripped: bool,
    pub uptime_s: f64,
    pub payload_kg: f64,
    /// cmd_vel payloads the firmware could not parse.
    pub malformed_cmds: u64,
}

impl StatusSample {
    /// Will message registered by the robot: everything but `online` defaulted.
    pub fn offline() -> Self {
        StatusSample::default()
    }

    fn check(&self) -> Result<(), MessageError> {
        if !(0.0..=100.0).contains(&self.battery_pct) {
            return Err(MessageError::BatteryOutOfRange(self.battery_pct));
        }
        finite(self.uptime_s, "uptime_s")?;
        finite(self.payload_kg, "payload_kg")?;
        Ok(())
    }
}

pub fn serialize_status(s: &StatusSample) -> Result<Vec<u8>, MessageError> {
    s.check()?;
    serde_json::to_vec(s).map_err(|e| MessageError::Json(e.to_string()))
}

pub fn parse_status(payload: &[u8]) -> Result<StatusSample, MessageError> {
    let s: StatusSample =
        serde_json::from_slice(payload).map_err(|e| MessageError::Json(e.to_string()))?;
    s.check()?;
    Ok(s)
}

/// Payload of the retained will: `{"online":false}`.
pub fn offline_will_payload() -> Vec<u8> {
    br#"{"online":false}"#.to_vec()
}
