//! MQTT wire codec for protocol levels 4 (3.1.1) and 5 (5.0, minimal subset).
//!
//! Encoding and decoding are pure functions over byte slices. The decoder
//! distinguishes "need more bytes" from malformed input so a streaming reader
//! can buffer partial frames.

mod decode;
mod encode;
mod error;
mod packet;
mod varint;

pub use decode::{decode_packet, decode_packet_with_limit, DEFAULT_MAX_REMAINING_LENGTH};
pub use encode::{encode_packet, write_packet};
pub use error::{DecodeError, EncodeError};
pub use packet::{
    Connack, Connect, Packet, ProtocolLevel, Puback, Publish, QoS, Suback, Subscribe, Unsuback,
    Unsubscribe,
};
pub use varint::{decode_varint, encode_varint, VarInt, VARINT_MAX};
