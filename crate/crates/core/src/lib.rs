//! Digital twin of a small skid-steer field robot.
//!
//! The stack is an MQTT v3.1.1 (QoS 0) broker and codec, a JSON subset of
//! the ROS2 `Twist`/`Odometry` messages, an emulation of the MCU control
//! loop and a calibrated plant model. Everything below [`net`] and
//! [`runtime`] is synchronous and deterministic; those two modules put the
//! same state machines on tokio sockets.

pub mod broker;
pub mod calibrate;
pub mod codec;
pub mod config;
pub mod firmware;
pub mod geometry;
pub mod net;
pub mod plant;
pub mod robot;
pub mod ros;
pub mod runtime;
pub mod scenario;
pub mod sim;

pub use broker::{Broker, BrokerConfig};
pub use codec::{Packet, QoS, TopicFilter};
pub use config::{ConfigError, RobotConfig, StackConfig};
pub use firmware::Firmware;
pub use geometry::{Pose, SidePair};
pub use plant::{CalibrationAnchors, Plant};
pub use robot::RobotNode;
pub use ros::{Channel, OdomSample, StatusSample, Twist};
pub use scenario::Scenario;
pub use sim::{TrajectoryRecord, World};
