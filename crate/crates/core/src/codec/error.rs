use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("variable byte integer {0} exceeds 268435455")]
    VarIntOutOfRange(u32),
    #[error("QoS 1 publish requires a packet identifier")]
    MissingPacketId,
    #[error("QoS 0 publish must not carry a packet identifier")]
    UnexpectedPacketId,
    #[error("packet identifier must be nonzero")]
    ZeroPacketId,
    #[error("DUP flag requires QoS > 0")]
    DupWithoutQos,
    #[error("string field of {0} bytes exceeds 65535")]
    StringTooLong(usize),
    #[error("remaining length {0} exceeds 268435455")]
    PacketTooLarge(usize),
    #[error("properties are only encodable at protocol level 5")]
    PropertiesRequireV5,
    #[error("UNSUBACK reason codes are only encodable at protocol level 5")]
    ReasonCodesRequireV5,
    #[error("{0} must carry at least one entry")]
    EmptyEntryList(&'static str),
}

/// Decoder failures. Every variant other than [`DecodeError::Incomplete`] is
/// a malformed packet and fatal to the connection.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("need more bytes")]
    Incomplete,
    #[error("malformed variable byte integer")]
    MalformedVarInt,
    #[error("reserved packet type {0}")]
    UnknownPacketType(u8),
    #[error("packet type {0} is not supported")]
    UnsupportedPacketType(u8),
    #[error("invalid fixed-header flags {flags:#06b} for packet type {packet_type}")]
    InvalidFlags { packet_type: u8, flags: u8 },
    #[error("QoS {0} is not supported")]
    UnsupportedQos(u8),
    #[error("unsupported protocol level {0}")]
    UnsupportedProtocolLevel(u8),
    #[error("remaining length {len} exceeds limit {max}")]
    PacketTooLarge { len: usize, max: usize },
    #[error("invalid UTF-8 in string field")]
    InvalidUtf8,
    #[error("malformed packet: {0}")]
    Malformed(&'static str),
}

impl DecodeError {
    pub fn is_incomplete(&self) -> bool {
        matches!(self, DecodeError::Incomplete)
    }
}
