use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::client::IntoClientRequest;
use tokio_tungstenite::tungstenite::http::HeaderValue;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use super::{NetError, WS_PATH, WS_SUBPROTOCOL};
use crate::codec::{
    encode_packet, Connect, Packet, PacketDecoder, Publish, QoS, Subscribe, Unsubscribe, DEFAULT_MAX_PACKET_SIZE,
};

/// `HOST:PORT` or `tcp://HOST:PORT` for plain MQTT, `ws://HOST:PORT[/mqtt]`
/// for MQTT over WebSocket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BrokerUrl {
    Tcp(String),
    Ws(String),
}

impl FromStr for BrokerUrl {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, NetError> {
        let bad = || NetError::BadUrl(s.to_owned());
        let host_port = |hp: &str| -> Result<String, NetError> {
            let (host, port) = hp.rsplit_once(':').ok_or_else(bad)?;
            if host.is_empty() || port.parse::<u16>().is_err() {
                return Err(bad());
            }
            Ok(hp.to_owned())
        };
        if let Some(rest) = s.strip_prefix("ws://") {
            let (hp, path) = match rest.find('/') {
                Some(i) => rest.split_at(i),
                None => (rest, WS_PATH),
            };
            host_port(hp)?;
            return Ok(BrokerUrl::Ws(format!("ws://{hp}{path}")));
        }
        let hp = s
            .strip_prefix("tcp://")
            .or_else(|| s.strip_prefix("mqtt://"))
            .unwrap_or(s);
        if hp.contains('/') {
            return Err(bad());
        }
        Ok(BrokerUrl::Tcp(host_port(hp)?))
    }
}

impl fmt::Display for BrokerUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BrokerUrl::Tcp(hp) => write!(f, "tcp://{hp}"),
            BrokerUrl::Ws(url) => f.write_str(url),
        }
    }
}

enum Transport {
    Tcp(TcpStream),
    Ws(Box<WebSocketStream<MaybeTlsStream<TcpStream>>>),
}

/// Minimal QoS 0 client over TCP or WebSocket.
pub struct MqttClient {
    transport: Transport,
    decoder: PacketDecoder,
    pending: VecDeque<Packet>,
    next_id: u16,
    buf: Vec<u8>,
}

impl fmt::Debug for MqttClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MqttClient").field("pending", &self.pending.len()).finish()
    }
}

impl MqttClient {
    /// Opens the transport, sends CONNECT and waits for an accepting CONNACK.
    pub async fn connect(url: &BrokerUrl, connect: Connect) -> Result<Self, NetError> {
        let transport = match url {
            BrokerUrl::Tcp(hp) => {
                let s = TcpStream::connect(hp)
                    .await
                    .map_err(|e| NetError::io(format!("connect {url}"), e))?;
                let _ = s.set_nodelay(true);
                Transport::Tcp(s)
            }
            BrokerUrl::Ws(u) => {
                let mut req = u.as_str().into_client_request()?;
                req.headers_mut()
                    .insert("Sec-WebSocket-Protocol", HeaderValue::from_static(WS_SUBPROTOCOL));
                let (ws, _) = tokio_tungstenite::connect_async(req).await?;
                Transport::Ws(Box::new(ws))
            }
        };
        let mut c = MqttClient {
            transport,
            decoder: PacketDecoder::new(DEFAULT_MAX_PACKET_SIZE),
            pending: VecDeque::new(),
            next_id: 0,
            buf: vec![0; 16 * 1024],
        };
        c.send(&Packet::Connect(connect)).await?;
        match c.recv().await? {
            Packet::ConnAck(a) if a.code == 0 => Ok(c),
            Packet::ConnAck(a) => Err(NetError::Refused(a.code)),
            other => Err(NetError::Unexpected(format!("{other:?}"))),
        }
    }

    pub async fn send(&mut self, p: &Packet) -> Result<(), NetError> {
        let bytes = encode_packet(p)?;
        self.send_raw(bytes).await
    }

    /// Writes bytes as-is; a WebSocket carries them in one binary frame.
    pub async fn send_raw(&mut self, bytes: Vec<u8>) -> Result<(), NetError> {
        match &mut self.transport {
            Transport::Tcp(s) => s.write_all(&bytes).await.map_err(|e| NetError::io("write", e)),
            Transport::Ws(ws) => Ok(ws.send(Message::binary(bytes)).await?),
        }
    }

    pub async fn publish(&mut self, topic: &str, payload: impl Into<Vec<u8>>, retain: bool) -> Result<(), NetError> {
        self.send(&Packet::Publish(Publish::new(topic, payload, retain))).await
    }

    fn packet_id(&mut self) -> u16 {
        self.next_id = self.next_id.wrapping_add(1).max(1);
        self.next_id
    }

    /// Subscribes at QoS 0 and returns the SUBACK codes. Publishes that
    /// arrive before the SUBACK stay queued for [`MqttClient::recv`].
    pub async fn subscribe(&mut self, filters: &[&str]) -> Result<Vec<u8>, NetError> {
        let packet_id = self.packet_id();
        let s = Subscribe {
            packet_id,
            filters: filters.iter().map(|f| (f.to_string(), QoS::AtMostOnce)).collect(),
        };
        self.send(&Packet::Subscribe(s)).await?;
        let mut early = VecDeque::new();
        let codes = loop {
            match self.recv().await? {
                Packet::SubAck(a) if a.packet_id == packet_id => break a.return_codes,
                p => early.push_back(p),
            }
        };
        early.append(&mut self.pending);
        self.pending = early;
        Ok(codes)
    }

    pub async fn unsubscribe(&mut self, filters: &[&str]) -> Result<(), NetError> {
        let packet_id = self.packet_id();
        let u = Unsubscribe {
            packet_id,
            filters: filters.iter().map(|f| f.to_string()).collect(),
        };
        self.send(&Packet::Unsubscribe(u)).await?;
        let mut early = VecDeque::new();
        loop {
            match self.recv().await? {
                Packet::UnsubAck(id) if id == packet_id => break,
                p => early.push_back(p),
            }
        }
        early.append(&mut self.pending);
        self.pending = early;
        Ok(())
    }

    /// Next packet from the broker. Cancel-safe.
    pub async fn recv(&mut self) -> Result<Packet, NetError> {
        loop {
            if let Some(p) = self.pending.pop_front() {
                return Ok(p);
            }
            if let Some(p) = self.decoder.next_packet()? {
                return Ok(p);
            }
            match &mut self.transport {
                Transport::Tcp(s) => {
                    let n = s.read(&mut self.buf).await.map_err(|e| NetError::io("read", e))?;
                    if n == 0 {
                        return Err(NetError::Closed);
                    }
                    self.decoder.feed(&self.buf[..n]);
                }
                Transport::Ws(ws) => match ws.next().await {
                    Some(Ok(Message::Binary(b))) => self.decoder.feed(&b),
                    Some(Ok(Message::Close(_))) | None => return Err(NetError::Closed),
                    Some(Ok(_)) => {}
                    Some(Err(e)) => return Err(e.into()),
                },
            }
        }
    }

    /// Next PUBLISH, skipping PINGRESP and acks.
    pub async fn next_publish(&mut self) -> Result<Publish, NetError> {
        loop {
            if let Packet::Publish(p) = self.recv().await? {
                return Ok(p);
            }
        }
    }

    /// Graceful DISCONNECT: the broker discards this client's will.
    pub async fn disconnect(mut self) -> Result<(), NetError> {
        self.send(&Packet::Disconnect).await?;
        match &mut self.transport {
            Transport::Tcp(s) => {
                let _ = s.shutdown().await;
            }
            Transport::Ws(ws) => {
                let _ = ws.close(None).await;
            }
        }
        Ok(())
    }
}
