//! MQTT v3.1.1 wire codec (subset).
//!
//! Pure functions over byte slices: remaining-length varints, control
//! packet framing, topic-name validation and wildcard filter matching.
//! Nothing in here allocates state between calls except [`PacketDecoder`],
//! which buffers a byte stream until whole frames are available.

mod packet;
mod topic;

pub use packet::{
    decode_packet, decode_packet_with_limit, encode_packet, ConnAck, Connect, LastWill, Packet,
    PacketDecoder, PacketKind, Publish, QoS, SubAck, Subscribe, Unsubscribe,
};
pub use topic::{topic_matches, validate_filter, validate_topic_name, FilterLevel, TopicFilter};

/// Largest value representable by the four-byte remaining-length field.
pub const MAX_REMAINING_LENGTH: usize = 268_435_455;

/// Default upper bound on a whole frame accepted by the decoder (1 MiB).
pub const DEFAULT_MAX_PACKET_SIZE: usize = 1024 * 1024;

/// Protocol name carried in CONNECT.
pub const PROTOCOL_NAME: &str = "MQTT";

/// Protocol level for MQTT v3.1.1.
pub const PROTOCOL_LEVEL: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("remaining length {0} exceeds the 268435455 byte limit")]
    RemainingLengthTooLarge(usize),
    #[error("malformed remaining length: more than four bytes")]
    MalformedRemainingLength,
    #[error("frame of {size} bytes exceeds the configured maximum of {max}")]
    PacketTooLarge { size: usize, max: usize },
    #[error("unknown or unsupported packet type {0}")]
    UnknownPacketType(u8),
    #[error("reserved fixed-header flags violated for packet type {kind}: {flags:#06b}")]
    ReservedFlags { kind: u8, flags: u8 },
    #[error("unsupported protocol {name:?} level {level}")]
    UnsupportedProtocol { name: String, level: u8 },
    #[error("string is not valid UTF-8")]
    InvalidUtf8,
    #[error("invalid topic name {0:?}")]
    InvalidTopicName(String),
    #[error("invalid topic filter {0:?}")]
    InvalidFilter(String),
    #[error("invalid QoS level {0}")]
    InvalidQoS(u8),
    #[error("malformed packet: {0}")]
    Malformed(&'static str),
    #[error("field of {0} bytes does not fit a 16-bit length prefix")]
    FieldTooLong(usize),
}

/// Encodes `n` as an MQTT remaining-length varint (base-128, little-endian,
/// continuation flag in the high bit).
pub fn encode_remaining_length(n: usize) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(4);
    write_remaining_length(&mut out, n)?;
    Ok(out)
}

pub(crate) fn write_remaining_length(out: &mut Vec<u8>, n: usize) -> Result<(), CodecError> {
    if n > MAX_REMAINING_LENGTH {
        return Err(CodecError::RemainingLengthTooLarge(n));
    }
    let mut x = n;
    loop {
        let mut byte = (x % 128) as u8;
        x /= 128;
        if x > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if x == 0 {
            return Ok(());
        }
    }
}

/// Decodes a remaining-length varint from the front of `bytes`.
///
/// Returns `Ok(None)` when the input ends before the varint does, and
/// `(value, consumed)` otherwise.
pub fn decode_remaining_length(bytes: &[u8]) -> Result<Option<(usize, usize)>, CodecError> {
    let mut value = 0usize;
    let mut multiplier = 1usize;
    for (i, &byte) in bytes.iter().enumerate() {
        if i == 4 {
            return Err(CodecError::MalformedRemainingLength);
        }
        value += (byte & 0x7F) as usize * multiplier;
        if byte & 0x80 == 0 {
            return Ok(Some((value, i + 1)));
        }
        multiplier *= 128;
    }
    if bytes.len() >= 4 {
        return Err(CodecError::MalformedRemainingLength);
    }
    Ok(None)
}

/// Number of bytes [`encode_remaining_length`] produces for `n`.
pub fn remaining_length_len(n: usize) -> usize {
    match n {
        0..=127 => 1,
        128..=16_383 => 2,
        16_384..=2_097_151 => 3,
        _ => 4,
    }
}
