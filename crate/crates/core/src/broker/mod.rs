//! Transport-agnostic MQTT broker core.
//!
//! The broker is a state machine: transports report opened connections,
//! received bytes, and lost connections; the broker answers with
//! [`Action`]s (bytes to write, connections to close). Time is passed in
//! explicitly so the same core runs under a wall clock or a virtual one.
//!
//! Delivery is QoS 0 only. A publish reaches every live session holding at
//! least one matching filter, exactly once per session.

mod retained;

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use crate::codec::{
    encode_packet, validate_filter, CodecError, ConnAck, Connect, LastWill, Packet, PacketDecoder,
    Publish, QoS, SubAck, Subscribe, TopicFilter, Unsubscribe, DEFAULT_MAX_PACKET_SIZE,
};

pub use retained::RetainedStore;

pub type ConnId = u64;

/// CONNACK return codes used by the broker.
pub mod connack {
    pub const ACCEPTED: u8 = 0;
    pub const UNACCEPTABLE_PROTOCOL: u8 = 1;
    pub const IDENTIFIER_REJECTED: u8 = 2;
}

pub const SUBACK_FAILURE: u8 = 0x80;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Send { conn: ConnId, bytes: Vec<u8> },
    Close { conn: ConnId },
}

#[derive(Debug, Clone, Copy)]
pub struct BrokerConfig {
    pub max_packet_size: usize,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            max_packet_size: DEFAULT_MAX_PACKET_SIZE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    pub client_id: String,
    pub subscriptions: Vec<TopicFilter>,
    pub keep_alive: u16,
    pub last_activity: Duration,
    pub will: Option<LastWill>,
}

impl Session {
    fn matches(&self, topic: &str) -> bool {
        self.subscriptions.iter().any(|f| f.matches(topic))
    }

    fn expired(&self, now: Duration) -> bool {
        // silent for longer than 1.5 x keep-alive
        self.keep_alive != 0
            && now.saturating_sub(self.last_activity)
                > Duration::from_millis(self.keep_alive as u64 * 1500)
    }
}

#[derive(Debug)]
struct Connection {
    decoder: PacketDecoder,
    session: Option<Session>,
}

/// Observable broker state, keyed by client id. Used to compare runs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BrokerSnapshot {
    pub sessions: BTreeMap<String, SessionSnapshot>,
    pub retained: BTreeMap<String, Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSnapshot {
    pub subscriptions: Vec<String>,
    pub keep_alive: u16,
    pub will: Option<LastWill>,
}

#[derive(Debug, Default)]
pub struct Broker {
    config: BrokerConfig,
    conns: BTreeMap<ConnId, Connection>,
    client_ids: HashMap<String, ConnId>,
    retained: RetainedStore,
    auto_ids: u64,
}

enum Close {
    /// DISCONNECT received: the will is discarded.
    Graceful,
    /// Transport loss, protocol violation, keep-alive expiry or takeover.
    Abrupt,
    /// Rejected before a session existed.
    Rejected,
}

impl Broker {
    pub fn new(config: BrokerConfig) -> Self {
        Broker {
            config,
            ..Default::default()
        }
    }

    pub fn retained(&self) -> &RetainedStore {
        &self.retained
    }

    pub fn session(&self, client_id: &str) -> Option<&Session> {
        let conn = self.client_ids.get(client_id)?;
        self.conns.get(conn)?.session.as_ref()
    }

    pub fn session_count(&self) -> usize {
        self.client_ids.len()
    }

    pub fn is_open(&self, conn: ConnId) -> bool {
        self.conns.contains_key(&conn)
    }

    pub fn snapshot(&self) -> BrokerSnapshot {
        let sessions = self
            .conns
            .values()
            .filter_map(|c| c.session.as_ref())
            .map(|s| {
                (
                    s.client_id.clone(),
                    SessionSnapshot {
                        subscriptions: s.subscriptions.iter().map(|f| f.as_str().to_owned()).collect(),
                        keep_alive: s.keep_alive,
                        will: s.will.clone(),
                    },
                )
            })
            .collect();
        BrokerSnapshot {
            sessions,
            retained: self
                .retained
                .iter()
                .map(|(t, p)| (t.to_owned(), p.to_vec()))
                .collect(),
        }
    }

    /// Registers a freshly accepted transport connection.
    pub fn open(&mut self, conn: ConnId) {
        self.conns.insert(
            conn,
            Connection {
                decoder: PacketDecoder::new(self.config.max_packet_size),
                session: None,
            },
        );
    }

    /// Feeds bytes received on `conn`. Bytes for unknown or closed
    /// connections are dropped.
    pub fn handle_bytes(&mut self, conn: ConnId, data: &[u8], now: Duration) -> Vec<Action> {
        let mut actions = Vec::new();
        let Some(c) = self.conns.get_mut(&conn) else {
            return actions;
        };
        c.decoder.feed(data);
        // a packet may close the connection, so look it up every time
        while let Some(c) = self.conns.get_mut(&conn) {
            match c.decoder.next_packet() {
                Ok(Some(packet)) => self.handle_packet(conn, packet, now, &mut actions),
                Ok(None) => break,
                Err(err) => {
                    self.protocol_error(conn, err, &mut actions);
                    break;
                }
            }
        }
        actions
    }

    /// The transport for `conn` went away without a DISCONNECT.
    pub fn connection_lost(&mut self, conn: ConnId) -> Vec<Action> {
        let mut actions = Vec::new();
        if self.conns.contains_key(&conn) {
            self.close(conn, Close::Abrupt, &mut actions);
            // the transport is already gone
            actions.retain(|a| *a != Action::Close { conn });
        }
        actions
    }

    /// Closes sessions silent for longer than 1.5 x their keep-alive and
    /// publishes their wills.
    pub fn keepalive_sweep(&mut self, now: Duration) -> Vec<Action> {
        let expired: Vec<ConnId> = self
            .conns
            .iter()
            .filter(|(_, c)| c.session.as_ref().is_some_and(|s| s.expired(now)))
            .map(|(&id, _)| id)
            .collect();
        let mut actions = Vec::new();
        for conn in expired {
            self.close(conn, Close::Abrupt, &mut actions);
        }
        actions
    }

    fn protocol_error(&mut self, conn: ConnId, err: CodecError, actions: &mut Vec<Action>) {
        let has_session = self.conns.get(&conn).is_some_and(|c| c.session.is_some());
        if has_session {
            tracing::debug!(conn, %err, "protocol violation, closing");
            self.close(conn, Close::Abrupt, actions);
        } else if let CodecError::UnsupportedProtocol { .. } = err {
            send(actions, conn, &connack(connack::UNACCEPTABLE_PROTOCOL));
            self.close(conn, Close::Rejected, actions);
        } else {
            self.close(conn, Close::Rejected, actions);
        }
    }

    fn handle_packet(&mut self, conn: ConnId, packet: Packet, now: Duration, actions: &mut Vec<Action>) {
        let Some(c) = self.conns.get_mut(&conn) else {
            return;
        };
        let Some(session) = c.session.as_mut() else {
            match packet {
                Packet::Connect(connect) => self.session_connect(conn, connect, now, actions),
                // first packet must be CONNECT
                _ => self.close(conn, Close::Rejected, actions),
            }
            return;
        };
        session.last_activity = session.last_activity.max(now);
        match packet {
            Packet::Publish(p) => self.handle_publish(conn, p, actions),
            Packet::Subscribe(s) => self.handle_subscribe(conn, s, actions),
            Packet::Unsubscribe(u) => self.handle_unsubscribe(conn, u, actions),
            Packet::PingReq => send(actions, conn, &Packet::PingResp),
            Packet::Disconnect => self.close(conn, Close::Graceful, actions),
            Packet::Connect(_)
            | Packet::ConnAck(_)
            | Packet::SubAck(_)
            | Packet::UnsubAck(_)
            | Packet::PingResp => self.close(conn, Close::Abrupt, actions),
        }
    }

    fn session_connect(&mut self, conn: ConnId, c: Connect, now: Duration, actions: &mut Vec<Action>) {
        let client_id = if c.client_id.is_empty() {
            if !c.clean_session {
                send(actions, conn, &connack(connack::IDENTIFIER_REJECTED));
                self.close(conn, Close::Rejected, actions);
                return;
            }
            self.auto_ids += 1;
            format!("auto-{}", self.auto_ids)
        } else {
            c.client_id
        };
        if let Some(&old) = self.client_ids.get(&client_id) {
            tracing::debug!(%client_id, old, new = conn, "session takeover");
            self.close(old, Close::Abrupt, actions);
        }
        self.client_ids.insert(client_id.clone(), conn);
        if let Some(entry) = self.conns.get_mut(&conn) {
            entry.session = Some(Session {
                client_id,
                subscriptions: Vec::new(),
                keep_alive: c.keep_alive,
                last_activity: now,
                will: c.will,
            });
        }
        // CleanSession=0 is accepted but never resumes state.
        send(actions, conn, &connack(connack::ACCEPTED));
    }

    fn handle_publish(&mut self, conn: ConnId, p: Publish, actions: &mut Vec<Action>) {
        if p.qos != QoS::AtMostOnce {
            self.close(conn, Close::Abrupt, actions);
            return;
        }
        self.route(p.topic, p.payload, p.retain, actions);
    }

    /// Updates the retained store and forwards to matching sessions.
    fn route(&mut self, topic: String, payload: Vec<u8>, retain: bool, actions: &mut Vec<Action>) {
        if retain {
            self.retained.set(&topic, &payload);
        }
        let targets: Vec<ConnId> = self
            .conns
            .iter()
            .filter(|(_, c)| c.session.as_ref().is_some_and(|s| s.matches(&topic)))
            .map(|(&id, _)| id)
            .collect();
        if targets.is_empty() {
            return;
        }
        let out = Packet::Publish(Publish::new(topic, payload, false));
        let bytes = encode_packet(&out).expect("decoded publish re-encodes");
        for conn in targets {
            actions.push(Action::Send {
                conn,
                bytes: bytes.clone(),
            });
        }
    }

    fn handle_subscribe(&mut self, conn: ConnId, s: Subscribe, actions: &mut Vec<Action>) {
        let Some(session) = self.conns.get_mut(&conn).and_then(|c| c.session.as_mut()) else {
            return;
        };
        let mut granted = Vec::new();
        let mut return_codes = Vec::with_capacity(s.filters.len());
        for (raw, _requested) in &s.filters {
            match validate_filter(raw) {
                Ok(filter) => {
                    match session.subscriptions.iter_mut().find(|f| f.as_str() == raw) {
                        Some(existing) => *existing = filter.clone(),
                        None => session.subscriptions.push(filter.clone()),
                    }
                    granted.push(filter);
                    return_codes.push(QoS::AtMostOnce as u8);
                }
                Err(_) => return_codes.push(SUBACK_FAILURE),
            }
        }
        send(
            actions,
            conn,
            &Packet::SubAck(SubAck {
                packet_id: s.packet_id,
                return_codes,
            }),
        );
        for (topic, payload) in self.retained.iter() {
            if granted.iter().any(|f| f.matches(topic)) {
                send(
                    actions,
                    conn,
                    &Packet::Publish(Publish::new(topic, payload.to_vec(), true)),
                );
            }
        }
    }

    fn handle_unsubscribe(&mut self, conn: ConnId, u: Unsubscribe, actions: &mut Vec<Action>) {
        if let Some(session) = self.conns.get_mut(&conn).and_then(|c| c.session.as_mut()) {
            session
                .subscriptions
                .retain(|f| !u.filters.iter().any(|raw| raw == f.as_str()));
        }
        send(actions, conn, &Packet::UnsubAck(u.packet_id));
    }

    fn close(&mut self, conn: ConnId, how: Close, actions: &mut Vec<Action>) {
        let Some(c) = self.conns.remove(&conn) else {
            return;
        };
        actions.push(Action::Close { conn });
        let Some(session) = c.session else {
            return;
        };
        if self.client_ids.get(&session.client_id) == Some(&conn) {
            self.client_ids.remove(&session.client_id);
        }
        match how {
            Close::Abrupt => {
                if let Some(will) = session.will {
                    self.route(will.topic, will.payload, will.retain, actions);
                }
            }
            Close::Graceful | Close::Rejected => {}
        }
    }
}

fn connack(code: u8) -> Packet {
    Packet::ConnAck(ConnAck {
        session_present: false,
        code,
    })
}

fn send(actions: &mut Vec<Action>, conn: ConnId, p: &Packet) {
    actions.push(Action::Send {
        conn,
        bytes: encode_packet(p).expect("broker-built packets are valid"),
    });
}
