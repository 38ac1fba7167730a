use super::topic::validate_topic_name;
use super::{
    decode_remaining_length, write_remaining_length, CodecError, DEFAULT_MAX_PACKET_SIZE,
    PROTOCOL_LEVEL, PROTOCOL_NAME,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(u8)]
pub enum QoS {
    #[default]
    AtMostOnce = 0,
    AtLeastOnce = 1,
    ExactlyOnce = 2,
}

impl TryFrom<u8> for QoS {
    type Error = CodecError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(QoS::AtMostOnce),
            1 => Ok(QoS::AtLeastOnce),
            2 => Ok(QoS::ExactlyOnce),
            q => Err(CodecError::InvalidQoS(q)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LastWill {
    pub topic: String,
    pub payload: Vec<u8>,
    pub qos: QoS,
    pub retain: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Connect {
    pub client_id: String,
    pub clean_session: bool,
    pub keep_alive: u16,
    pub will: Option<LastWill>,
    pub username: Option<String>,
    pub password: Option<Vec<u8>>,
}

impl Connect {
    pub fn new(client_id: impl Into<String>, keep_alive: u16) -> Self {
        Connect {
            client_id: client_id.into(),
            clean_session: true,
            keep_alive,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnAck {
    pub session_present: bool,
    pub code: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Publish {
    pub dup: bool,
    pub qos: QoS,
    pub retain: bool,
    pub topic: String,
    /// Present iff `qos > 0`.
    pub packet_id: Option<u16>,
    pub payload: Vec<u8>,
}

impl Publish {
    /// A QoS 0 publish.
    pub fn new(topic: impl Into<String>, payload: impl Into<Vec<u8>>, retain: bool) -> Self {
        Publish {
            topic: topic.into(),
            payload: payload.into(),
            retain,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscribe {
    pub packet_id: u16,
    /// Filters are carried verbatim; the broker validates each one.
    pub filters: Vec<(String, QoS)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubAck {
    pub packet_id: u16,
    pub return_codes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unsubscribe {
    pub packet_id: u16,
    pub filters: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Connect(Connect),
    ConnAck(ConnAck),
    Publish(Publish),
    Subscribe(Subscribe),
    SubAck(SubAck),
    Unsubscribe(Unsubscribe),
    UnsubAck(u16),
    PingReq,
    PingResp,
    Disconnect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Connect = 1,
    ConnAck = 2,
    Publish = 3,
    Subscribe = 8,
    SubAck = 9,
    Unsubscribe = 10,
    UnsubAck = 11,
    PingReq = 12,
    PingResp = 13,
    Disconnect = 14,
}

impl Packet {
    pub fn kind(&self) -> PacketKind {
        match self {
            Packet::Connect(_) => PacketKind::Connect,
            Packet::ConnAck(_) => PacketKind::ConnAck,
            Packet::Publish(_) => PacketKind::Publish,
            Packet::Subscribe(_) => PacketKind::Subscribe,
            Packet::SubAck(_) => PacketKind::SubAck,
            Packet::Unsubscribe(_) => PacketKind::Unsubscribe,
            Packet::UnsubAck(_) => PacketKind::UnsubAck,
            Packet::PingReq => PacketKind::PingReq,
            Packet::PingResp => PacketKind::PingResp,
            Packet::Disconnect => PacketKind::Disconnect,
        }
    }
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) -> Result<(), CodecError> {
    let len = u16::try_from(b.len()).map_err(|_| CodecError::FieldTooLong(b.len()))?;
    put_u16(out, len);
    out.extend_from_slice(b);
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), CodecError> {
    put_bytes(out, s.as_bytes())
}

fn check_packet_id(id: u16) -> Result<(), CodecError> {
    if id == 0 {
        return Err(CodecError::Malformed("packet identifier must be non-zero"));
    }
    Ok(())
}

/// Serialises a packet into a complete MQTT frame.
pub fn encode_packet(p: &Packet) -> Result<Vec<u8>, CodecError> {
    let mut body = Vec::new();
    let header: u8 = match p {
        Packet::Connect(c) => {
            put_str(&mut body, PROTOCOL_NAME)?;
            body.push(PROTOCOL_LEVEL);
            let mut flags = 0u8;
            if c.clean_session {
                flags |= 0x02;
            }
            if let Some(w) = &c.will {
                validate_topic_name(&w.topic)?;
                flags |= 0x04 | ((w.qos as u8) << 3);
                if w.retain {
                    flags |= 0x20;
                }
            }
            if c.password.is_some() {
                if c.username.is_none() {
                    return Err(CodecError::Malformed("password without username"));
                }
                flags |= 0x40;
            }
            if c.username.is_some() {
                flags |= 0x80;
            }
            body.push(flags);
            put_u16(&mut body, c.keep_alive);
            put_str(&mut body, &c.client_id)?;
            if let Some(w) = &c.will {
                put_str(&mut body, &w.topic)?;
                put_bytes(&mut body, &w.payload)?;
            }
            if let Some(u) = &c.username {
                put_str(&mut body, u)?;
            }
            if let Some(pw) = &c.password {
                put_bytes(&mut body, pw)?;
            }
            0x10
        }
        Packet::ConnAck(a) => {
            body.push(a.session_present as u8);
            body.push(a.code);
            0x20
        }
        Packet::Publish(p) => {
            validate_topic_name(&p.topic)?;
            put_str(&mut body, &p.topic)?;
            match (p.qos, p.packet_id) {
                (QoS::AtMostOnce, None) => {
                    if p.dup {
                        return Err(CodecError::Malformed("DUP set on a QoS 0 publish"));
                    }
                }
                (QoS::AtMostOnce, Some(_)) => {
                    return Err(CodecError::Malformed("packet identifier on a QoS 0 publish"))
                }
                (_, Some(id)) => {
                    check_packet_id(id)?;
                    put_u16(&mut body, id);
                }
                (_, None) => return Err(CodecError::Malformed("QoS > 0 publish needs an identifier")),
            }
            body.extend_from_slice(&p.payload);
            0x30 | ((p.dup as u8) << 3) | ((p.qos as u8) << 1) | p.retain as u8
        }
        Packet::Subscribe(s) => {
            check_packet_id(s.packet_id)?;
            if s.filters.is_empty() {
                return Err(CodecError::Malformed("SUBSCRIBE without filters"));
            }
            put_u16(&mut body, s.packet_id);
            for (f, q) in &s.filters {
                put_str(&mut body, f)?;
                body.push(*q as u8);
            }
            0x82
        }
        Packet::SubAck(a) => {
            put_u16(&mut body, a.packet_id);
            for &code in &a.return_codes {
                if !matches!(code, 0x00 | 0x01 | 0x02 | 0x80) {
                    return Err(CodecError::Malformed("invalid SUBACK return code"));
                }
                body.push(code);
            }
            0x90
        }
        Packet::Unsubscribe(u) => {
            check_packet_id(u.packet_id)?;
            if u.filters.is_empty() {
                return Err(CodecError::Malformed("UNSUBSCRIBE without filters"));
            }
            put_u16(&mut body, u.packet_id);
            for f in &u.filters {
                put_str(&mut body, f)?;
            }
            0xA2
        }
        Packet::UnsubAck(id) => {
            put_u16(&mut body, *id);
            0xB0
        }
        Packet::PingReq => 0xC0,
        Packet::PingResp => 0xD0,
        Packet::Disconnect => 0xE0,
    };
    let mut out = Vec::with_capacity(body.len() + 5);
    out.push(header);
    write_remaining_length(&mut out, body.len())?;
    out.extend_from_slice(&body);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8, CodecError> {
        let (&b, rest) = self
            .buf
            .split_first()
            .ok_or(CodecError::Malformed("unexpected end of packet"))?;
        self.buf = rest;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let len = self.u16()? as usize;
        if len > self.buf.len() {
            return Err(CodecError::Malformed("length prefix crosses packet boundary"));
        }
        let (head, rest) = self.buf.split_at(len);
        self.buf = rest;
        Ok(head)
    }

    fn string(&mut self) -> Result<String, CodecError> {
        let raw = self.bytes()?;
        let s = std::str::from_utf8(raw).map_err(|_| CodecError::InvalidUtf8)?;
        if s.contains('\0') {
            return Err(CodecError::Malformed("NUL character in string"));
        }
        Ok(s.to_owned())
    }

    fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    fn finish(self) -> Result<(), CodecError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(CodecError::Malformed("trailing bytes after packet body"))
        }
    }
}

/// [`decode_packet_with_limit`] using [`DEFAULT_MAX_PACKET_SIZE`].
pub fn decode_packet(bytes: &[u8]) -> Result<Option<(Packet, usize)>, CodecError> {
    decode_packet_with_limit(bytes, DEFAULT_MAX_PACKET_SIZE)
}

/// Decodes one frame from the front of `bytes`.
///
/// `Ok(None)` means the frame is incomplete and nothing was consumed.
/// Oversized frames are rejected as soon as their header is readable.
pub fn decode_packet_with_limit(
    bytes: &[u8],
    max_packet_size: usize,
) -> Result<Option<(Packet, usize)>, CodecError> {
    let Some(&first) = bytes.first() else {
        return Ok(None);
    };
    let kind = first >> 4;
    let flags = first & 0x0F;
    // Check the type before waiting for the body so junk fails fast.
    let expected_flags = match kind {
        1 | 2 | 9 | 11 | 12 | 13 | 14 => Some(0),
        8 | 10 => Some(0b0010),
        3 => None,
        other => return Err(CodecError::UnknownPacketType(other)),
    };
    if let Some(expected) = expected_flags {
        if flags != expected {
            return Err(CodecError::ReservedFlags { kind, flags });
        }
    }
    let Some((remaining, len_bytes)) = decode_remaining_length(&bytes[1..])? else {
        return Ok(None);
    };
    let total = 1 + len_bytes + remaining;
    if total > max_packet_size {
        return Err(CodecError::PacketTooLarge {
            size: total,
            max: max_packet_size,
        });
    }
    if bytes.len() < total {
        return Ok(None);
    }
    let mut r = Reader {
        buf: &bytes[1 + len_bytes..total],
    };
    let packet = match kind {
        1 => Packet::Connect(decode_connect(&mut r)?),
        2 => {
            let ack_flags = r.u8()?;
            if ack_flags & 0xFE != 0 {
                return Err(CodecError::Malformed("reserved CONNACK flags set"));
            }
            let code = r.u8()?;
            r.finish()?;
            Packet::ConnAck(ConnAck {
                session_present: ack_flags == 1,
                code,
            })
        }
        3 => {
            let dup = flags & 0x08 != 0;
            let qos = QoS::try_from((flags >> 1) & 0x03)
                .map_err(|_| CodecError::ReservedFlags { kind, flags })?;
            let retain = flags & 0x01 != 0;
            if qos == QoS::AtMostOnce && dup {
                return Err(CodecError::ReservedFlags { kind, flags });
            }
            let topic = r.string()?;
            validate_topic_name(&topic)?;
            let packet_id = if qos == QoS::AtMostOnce {
                None
            } else {
                let id = r.u16()?;
                check_packet_id(id)?;
                Some(id)
            };
            Packet::Publish(Publish {
                dup,
                qos,
                retain,
                topic,
                packet_id,
                payload: r.rest().to_vec(),
            })
        }
        8 => {
            let packet_id = r.u16()?;
            check_packet_id(packet_id)?;
            let mut filters = Vec::new();
            while !r.is_empty() {
                let f = r.string()?;
                let requested = r.u8()?;
                if requested & 0xFC != 0 {
                    return Err(CodecError::Malformed("reserved bits in requested QoS"));
                }
                filters.push((f, QoS::try_from(requested)?));
            }
            if filters.is_empty() {
                return Err(CodecError::Malformed("SUBSCRIBE without filters"));
            }
            Packet::Subscribe(Subscribe { packet_id, filters })
        }
        9 => {
            let packet_id = r.u16()?;
            let return_codes = r.rest().to_vec();
            if return_codes
                .iter()
                .any(|c| !matches!(c, 0x00 | 0x01 | 0x02 | 0x80))
            {
                return Err(CodecError::Malformed("invalid SUBACK return code"));
            }
            Packet::SubAck(SubAck {
                packet_id,
                return_codes,
            })
        }
        10 => {
            let packet_id = r.u16()?;
            check_packet_id(packet_id)?;
            let mut filters = Vec::new();
            while !r.is_empty() {
                filters.push(r.string()?);
            }
            if filters.is_empty() {
                return Err(CodecError::Malformed("UNSUBSCRIBE without filters"));
            }
            Packet::Unsubscribe(Unsubscribe { packet_id, filters })
        }
        11 => {
            let id = r.u16()?;
            r.finish()?;
            Packet::UnsubAck(id)
        }
        12..=14 => {
            r.finish()?;
            match kind {
                12 => Packet::PingReq,
                13 => Packet::PingResp,
                _ => Packet::Disconnect,
            }
        }
        _ => unreachable!("packet type filtered above"),
    };
    Ok(Some((packet, total)))
}

fn decode_connect(r: &mut Reader<'_>) -> Result<Connect, CodecError> {
    let name = r.string()?;
    let level = r.u8()?;
    if name != PROTOCOL_NAME || level != PROTOCOL_LEVEL {
        return Err(CodecError::UnsupportedProtocol { name, level });
    }
    let flags = r.u8()?;
    if flags & 0x01 != 0 {
        return Err(CodecError::Malformed("reserved CONNECT flag set"));
    }
    let clean_session = flags & 0x02 != 0;
    let will_flag = flags & 0x04 != 0;
    let will_qos = (flags >> 3) & 0x03;
    let will_retain = flags & 0x20 != 0;
    let has_password = flags & 0x40 != 0;
    let has_username = flags & 0x80 != 0;
    if !will_flag && (will_qos != 0 || will_retain) {
        return Err(CodecError::Malformed("will QoS/retain set without will flag"));
    }
    if has_password && !has_username {
        return Err(CodecError::Malformed("password without username"));
    }
    let keep_alive = r.u16()?;
    let client_id = r.string()?;
    let will = if will_flag {
        let topic = r.string()?;
        validate_topic_name(&topic)?;
        let payload = r.bytes()?.to_vec();
        Some(LastWill {
            topic,
            payload,
            qos: QoS::try_from(will_qos)?,
            retain: will_retain,
        })
    } else {
        None
    };
    let username = if has_username { Some(r.string()?) } else { None };
    let password = if has_password {
        Some(r.bytes()?.to_vec())
    } else {
        None
    };
    Ok(Connect {
        client_id,
        clean_session,
        keep_alive,
        will,
        username,
        password,
    })
}

/// Reassembles packets from an arbitrarily fragmented byte stream.
#[derive(Debug, Clone)]
pub struct PacketDecoder {
    buf: Vec<u8>,
    start: usize,
    max_packet_size: usize,
}

impl Default for PacketDecoder {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_PACKET_SIZE)
    }
}

impl PacketDecoder {
    pub fn new(max_packet_size: usize) -> Self {
        PacketDecoder {
            buf: Vec::new(),
            start: 0,
            max_packet_size,
        }
    }

    pub fn feed(&mut self, data: &[u8]) {
        if self.start > 0 && self.start * 2 >= self.buf.len() {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        self.buf.extend_from_slice(data);
    }

    /// Next complete packet, if one is buffered.
    pub fn next_packet(&mut self) -> Result<Option<Packet>, CodecError> {
        match decode_packet_with_limit(&self.buf[self.start..], self.max_packet_size)? {
            Some((packet, used)) => {
                self.start += used;
                if self.start == self.buf.len() {
                    self.buf.clear();
                    self.start = 0;
                }
                Ok(Some(packet))
            }
            None => Ok(None),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len() - self.start
    }
}
