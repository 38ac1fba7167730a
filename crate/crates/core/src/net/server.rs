use std::collections::HashMap;
use std::net::{IpAddr, SocketAddr};
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::Instant;
use tokio_tungstenite::tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tokio_tungstenite::tungstenite::http::{HeaderValue, StatusCode};
use tokio_tungstenite::tungstenite::Message;

use super::{NetError, WS_PATH, WS_SUBPROTOCOL};
use crate::broker::{Action, Broker, BrokerConfig, BrokerSnapshot, ConnId};

const SWEEP_INTERVAL: Duration = Duration::from_millis(250);

/// Broker-to-transport message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outgoing {
    Bytes(Vec<u8>),
    Close,
}

enum Event {
    Open {
        conn: ConnId,
        tx: mpsc::UnboundedSender<Outgoing>,
    },
    Bytes {
        conn: ConnId,
        data: Vec<u8>,
    },
    Lost {
        conn: ConnId,
    },
    Snapshot(oneshot::Sender<BrokerSnapshot>),
    Shutdown,
}

/// Cloneable handle to the broker task.
#[derive(Debug, Clone)]
pub struct BrokerHandle {
    events: mpsc::UnboundedSender<Event>,
    next_conn: std::sync::Arc<std::sync::atomic::AtomicU64>,
}

impl BrokerHandle {
    /// Spawns the broker event loop on the current runtime.
    pub fn spawn(config: BrokerConfig) -> (Self, JoinHandle<()>) {
        let (tx, rx) = mpsc::unbounded_channel();
        let task = tokio::spawn(event_loop(Broker::new(config), rx));
        let handle = BrokerHandle {
            events: tx,
            next_conn: Default::default(),
        };
        (handle, task)
    }

    fn open(&self) -> Result<(ConnId, mpsc::UnboundedReceiver<Outgoing>), NetError> {
        let conn = self.next_conn.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        let (tx, rx) = mpsc::unbounded_channel();
        self.events
            .send(Event::Open { conn, tx })
            .map_err(|_| NetError::BrokerGone)?;
        Ok((conn, rx))
    }

    /// An in-process connection: bytes in through [`LoopbackConn::send`],
    /// broker output on [`LoopbackConn::rx`].
    pub fn connect_loopback(&self) -> Result<LoopbackConn, NetError> {
        let (conn, rx) = self.open()?;
        Ok(LoopbackConn {
            conn,
            events: self.events.clone(),
            rx,
        })
    }

    pub async fn snapshot(&self) -> Result<BrokerSnapshot, NetError> {
        let (tx, rx) = oneshot::channel();
        self.events
            .send(Event::Snapshot(tx))
            .map_err(|_| NetError::BrokerGone)?;
        rx.await.map_err(|_| NetError::BrokerGone)
    }

    /// Stops the event loop; open connections are dropped without wills.
    pub fn shutdown(&self) {
        let _ = self.events.send(Event::Shutdown);
    }

    fn bytes(&self, conn: ConnId, data: Vec<u8>) -> bool {
        self.events.send(Event::Bytes { conn, data }).is_ok()
    }

    fn lost(&self, conn: ConnId) {
        let _ = self.events.send(Event::Lost { conn });
    }
}

#[derive(Debug)]
pub struct LoopbackConn {
    conn: ConnId,
    events: mpsc::UnboundedSender<Event>,
    pub rx: mpsc::UnboundedReceiver<Outgoing>,
}

impl LoopbackConn {
    pub fn send(&self, data: Vec<u8>) -> Result<(), NetError> {
        if data.is_empty() {
            return Ok(());
        }
        self.events
            .send(Event::Bytes { conn: self.conn, data })
            .map_err(|_| NetError::BrokerGone)
    }

    /// Simulates the transport dropping without DISCONNECT.
    pub fn drop_abruptly(self) {
        let _ = self.events.send(Event::Lost { conn: self.conn });
    }
}

async fn event_loop(mut broker: Broker, mut rx: mpsc::UnboundedReceiver<Event>) {
    let start = Instant::now();
    let mut peers: HashMap<ConnId, mpsc::UnboundedSender<Outgoing>> = HashMap::new();
    let mut sweep = tokio::time::interval(SWEEP_INTERVAL);
    sweep.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        let actions = tokio::select! {
            ev = rx.recv() => match ev {
                None | Some(Event::Shutdown) => break,
                Some(Event::Open { conn, tx }) => {
                    broker.open(conn);
                    peers.insert(conn, tx);
                    continue;
                }
                Some(Event::Bytes { conn, data }) => broker.handle_bytes(conn, &data, start.elapsed()),
                Some(Event::Lost { conn }) => {
                    peers.remove(&conn);
                    broker.connection_lost(conn)
                }
                Some(Event::Snapshot(reply)) => {
                    let _ = reply.send(broker.snapshot());
                    continue;
                }
            },
            _ = sweep.tick() => broker.keepalive_sweep(start.elapsed()),
        };
        for a in actions {
            match a {
                Action::Send { conn, bytes } => {
                    if let Some(tx) = peers.get(&conn) {
                        let _ = tx.send(Outgoing::Bytes(bytes));
                    }
                }
                Action::Close { conn } => {
                    if let Some(tx) = peers.remove(&conn) {
                        let _ = tx.send(Outgoing::Close);
                    }
                }
            }
        }
    }
    tracing::debug!("broker event loop stopped");
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub bind: IpAddr,
    /// 0 picks a free port.
    pub tcp_port: u16,
    pub ws_port: u16,
    pub broker: BrokerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerAddrs {
    pub tcp: SocketAddr,
    pub ws: SocketAddr,
}

/// Binds both listeners and starts accepting. Fails fast if a port is taken.
pub async fn serve(cfg: &ServeConfig) -> Result<(BrokerHandle, ServerAddrs), NetError> {
    let tcp = TcpListener::bind((cfg.bind, cfg.tcp_port))
        .await
        .map_err(|e| NetError::io(format!("bind tcp {}:{}", cfg.bind, cfg.tcp_port), e))?;
    let ws = TcpListener::bind((cfg.bind, cfg.ws_port))
        .await
        .map_err(|e| NetError::io(format!("bind websocket {}:{}", cfg.bind, cfg.ws_port), e))?;
    let addrs = ServerAddrs {
        tcp: tcp.local_addr().map_err(|e| NetError::io("tcp local addr", e))?,
        ws: ws.local_addr().map_err(|e| NetError::io("ws local addr", e))?,
    };
    let (handle, _task) = BrokerHandle::spawn(cfg.broker);
    tokio::spawn(accept_loop(tcp, handle.clone(), false));
    tokio::spawn(accept_loop(ws, handle.clone(), true));
    Ok((handle, addrs))
}

async fn accept_loop(listener: TcpListener, handle: BrokerHandle, websocket: bool) {
    loop {
        let accepted = tokio::select! {
            r = listener.accept() => r,
            _ = handle.events.closed() => break,
        };
        let (stream, peer) = match accepted {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!("accept failed: {e}");
                tokio::time::sleep(Duration::from_millis(50)).await;
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        let h = handle.clone();
        tokio::spawn(async move {
            let r = if websocket {
                serve_ws(stream, h).await
            } else {
                serve_tcp(stream, h).await
            };
            if let Err(e) = r {
                tracing::debug!("connection from {peer}: {e}");
            }
        });
    }
}

async fn serve_tcp(stream: TcpStream, handle: BrokerHandle) -> Result<(), NetError> {
    let (conn, mut out) = handle.open()?;
    let (mut rd, mut wr) = stream.into_split();
    let mut writer = tokio::spawn(async move {
        while let Some(Outgoing::Bytes(b)) = out.recv().await {
            if wr.write_all(&b).await.is_err() {
                break;
            }
        }
        let _ = wr.shutdown().await;
    });
    let mut buf = vec![0u8; 16 * 1024];
    loop {
        tokio::select! {
            r = rd.read(&mut buf) => match r {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if !handle.bytes(conn, buf[..n].to_vec()) {
                        break;
                    }
                }
            },
            // broker closed the connection
            _ = &mut writer => break,
        }
    }
    handle.lost(conn);
    writer.abort();
    Ok(())
}

// the signature is fixed by tungstenite's handshake callback
#[allow(clippy::result_large_err)]
fn ws_handshake(req: &Request, mut resp: Response) -> Result<Response, ErrorResponse> {
    if req.uri().path() != WS_PATH {
        let mut e = ErrorResponse::new(Some(format!("MQTT is served on {WS_PATH}")));
        *e.status_mut() = StatusCode::NOT_FOUND;
        return Err(e);
    }
    let offered = req
        .headers()
        .get_all("Sec-WebSocket-Protocol")
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .any(|p| p.trim().eq_ignore_ascii_case(WS_SUBPROTOCOL));
    if offered {
        resp.headers_mut()
            .insert("Sec-WebSocket-Protocol", HeaderValue::from_static(WS_SUBPROTOCOL));
    }
    Ok(resp)
}

async fn serve_ws(stream: TcpStream, handle: BrokerHandle) -> Result<(), NetError> {
    let ws = tokio_tungstenite::accept_hdr_async(stream, ws_handshake).await?;
    let (conn, mut out) = handle.open()?;
    let (mut sink, mut source) = ws.split();
    loop {
        tokio::select! {
            msg = out.recv() => match msg {
                Some(Outgoing::Bytes(b)) => {
                    if sink.send(Message::binary(b)).await.is_err() {
                        break;
                    }
                }
                Some(Outgoing::Close) | None => {
                    let _ = sink.close().await;
                    break;
                }
            },
            msg = source.next() => match msg {
                Some(Ok(Message::Binary(b))) => {
                    if !handle.bytes(conn, b.to_vec()) {
                        break;
                    }
                }
                Some(Ok(Message::Ping(_) | Message::Pong(_) | Message::Frame(_))) => {}
                // MQTT over WebSocket is binary-only
                Some(Ok(Message::Text(_))) | Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
            },
        }
    }
    handle.lost(conn);
    Ok(())
}
