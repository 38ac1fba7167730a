//! One simulated robot as an MQTT client: firmware + plant behind a
//! byte-level session, independent of how the bytes are carried.

use crate::codec::{
    encode_packet, CodecError, Connect, LastWill, Packet, PacketDecoder, Publish, QoS, Subscribe,
    DEFAULT_MAX_PACKET_SIZE,
};
use crate::config::RobotConfig;
use crate::firmware::{Firmware, Outbound, Sensors};
use crate::geometry::SidePair;
use crate::plant::{Plant, PlantError};
use crate::ros::{offline_will_payload, topic_for, Channel};

#[derive(Debug, thiserror::Error)]
pub enum RobotError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("broker refused the connection (CONNACK code {0})")]
    Refused(u8),
}

/// Keep-alive the robot announces in CONNECT (s).
pub const ROBOT_KEEP_ALIVE: u16 = 10;

#[derive(Debug, Clone)]
pub struct RobotNode {
    robot_id: String,
    firmware: Firmware,
    plant: Plant,
    decoder: PacketDecoder,
    inbox: Vec<Vec<u8>>,
    cmd_topic: String,
    status_topic: String,
    duty: SidePair<f64>,
    connected: bool,
}

impl RobotNode {
    pub fn new(cfg: &RobotConfig, robot_id: &str, seed: u64) -> Result<Self, RobotError> {
        cfg.validate()?;
        let cmd_topic = topic_for(robot_id, Channel::CmdVel).map_err(crate::config::ConfigError::from)?;
        let status_topic = topic_for(robot_id, Channel::Status).map_err(crate::config::ConfigError::from)?;
        Ok(RobotNode {
            robot_id: robot_id.to_owned(),
            firmware: Firmware::new(cfg, robot_id).map_err(crate::config::ConfigError::from)?,
            plant: Plant::new(cfg, seed)?,
            decoder: PacketDecoder::new(DEFAULT_MAX_PACKET_SIZE),
            inbox: Vec::new(),
            cmd_topic,
            status_topic,
            duty: SidePair::default(),
            connected: false,
        })
    }

    pub fn robot_id(&self) -> &str {
        &self.robot_id
    }

    pub fn firmware(&self) -> &Firmware {
        &self.firmware
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn duty(&self) -> SidePair<f64> {
        self.duty
    }

    /// CONNECT (offline will, retained on the status topic) followed by
    /// the cmd_vel SUBSCRIBE.
    pub fn connect_bytes(&self) -> Vec<u8> {
        let mut c = Connect::new(format!("openscout-{}", self.robot_id), ROBOT_KEEP_ALIVE);
        c.will = Some(LastWill {
            topic: self.status_topic.clone(),
            payload: offline_will_payload(),
            qos: QoS::AtMostOnce,
            retain: true,
        });
        let mut out = encode_packet(&Packet::Connect(c)).expect("valid connect");
        let sub = Subscribe {
            packet_id: 1,
            filters: vec![(self.cmd_topic.clone(), QoS::AtMostOnce)],
        };
        out.extend(encode_packet(&Packet::Subscribe(sub)).expect("valid subscribe"));
        out
    }

    /// Feeds bytes from the broker. cmd_vel payloads queue for the next tick.
    pub fn receive(&mut self, bytes: &[u8]) -> Result<(), RobotError> {
        self.decoder.feed(bytes);
        while let Some(p) = self.decoder.next_packet()? {
            match p {
                Packet::ConnAck(a) if a.code != 0 => return Err(RobotError::Refused(a.code)),
                Packet::ConnAck(_) => self.connected = true,
                Packet::Publish(p) if p.topic == self.cmd_topic => self.inbox.push(p.payload),
                _ => {}
            }
        }
        Ok(())
    }

    /// Advances one control period: the plant integrates under the duty
    /// from the previous tick, then the firmware runs on the new encoder
    /// counts. Returns the encoded telemetry for this tick.
    pub fn step(&mut self) -> Vec<u8> {
        let n = self.firmware.config().substeps_per_control();
        let deltas = self.plant.advance(self.duty, n);
        let inbox = std::mem::take(&mut self.inbox);
        let out = self.firmware.tick(
            &inbox,
            Sensors {
                tick_deltas: deltas,
                battery_pct: self.plant.state().battery_pct,
            },
        );
        self.duty = out.duty;
        encode_all(&out.publishes)
    }

    /// Retained offline status then DISCONNECT, so the will is not fired.
    pub fn shutdown_bytes(&self) -> Vec<u8> {
        let mut out = encode_all(&[self.firmware.status_message(false)]);
        out.extend(encode_packet(&Packet::Disconnect).expect("disconnect"));
        out
    }

    pub fn ping_bytes(&self) -> Vec<u8> {
        encode_packet(&Packet::PingReq).expect("pingreq")
    }

    pub fn set_payload(&mut self, payload_kg: f64) -> Result<(), PlantError> {
        self.plant.set_payload(payload_kg)?;
        self.firmware.set_payload(payload_kg)
    }
}

fn encode_all(msgs: &[Outbound]) -> Vec<u8> {
    let mut out = Vec::new();
    for m in msgs {
        let p = Packet::Publish(Publish::new(&m.topic, m.payload.clone(), m.retain));
        out.extend(encode_packet(&p).expect("telemetry fits a frame"));
    }
    out
}
