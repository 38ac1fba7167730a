//! Tokio transports around the sans-IO broker: TCP, MQTT-over-WebSocket
//! and in-process loopback, plus a small async client.
//!
//! The broker state machine lives in one task; every transport talks to it
//! through channels, so no lock guards broker state.

mod client;
mod server;

pub use client::{BrokerUrl, MqttClient};
pub use server::{serve, BrokerHandle, LoopbackConn, Outgoing, ServeConfig, ServerAddrs};

/// WebSocket path the broker accepts MQTT on.
pub const WS_PATH: &str = "/mqtt";
/// WebSocket subprotocol for MQTT.
pub const WS_SUBPROTOCOL: &str = "mqtt";

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("{context}: {error}")]
    Io {
        context: String,
        error: std::io::Error,
    },
    #[error("websocket: {0}")]
    WebSocket(#[from] tokio_tungstenite::tungstenite::Error),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
    #[error("invalid broker url `{0}`")]
    BadUrl(String),
    #[error("broker refused the connection (CONNACK code {0})")]
    Refused(u8),
    #[error("connection closed by broker")]
    Closed,
    #[error("unexpected packet: {0}")]
    Unexpected(String),
    #[error("broker task has stopped")]
    BrokerGone,
}

impl NetError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        NetError::Io {
            context: context.into(),
            error: source,
        }
    }
}
