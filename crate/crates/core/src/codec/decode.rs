use bytes::Bytes;

use super::error::DecodeError;
use super::packet::*;
use super::varint::decode_varint;
use crate::topic::{TopicFilter, TopicName};

/// Default cap on the remaining length accepted by the decoder (1 MiB).
pub const DEFAULT_MAX_REMAINING_LENGTH: usize = 1024 * 1024;

/// Decodes one packet from the front of `buf` using the default size limit.
///
/// Returns the packet and the number of bytes consumed. A buffer holding only
/// part of a packet yields [`DecodeError::Incomplete`]. CONNECT is decoded at
/// the level it declares; every other packet at `level`.
pub fn decode_packet(buf: &[u8], level: ProtocolLevel) -> Result<(Packet, usize), DecodeError> {
    decode_packet_with_limit(buf, level, DEFAULT_MAX_REMAINING_LENGTH)
}

pub fn decode_packet_with_limit(
    buf: &[u8],
    level: ProtocolLevel,
    max_remaining_length: usize,
) -> Result<(Packet, usize), DecodeError> {
    let Some(&first) = buf.first() else {
        return Err(DecodeError::Incomplete);
    };
    let packet_type = first >> 4;
    let flags = first & 0x0F;
    check_header(packet_type, flags)?;

    let (remaining, len_bytes) = decode_varint(&buf[1..])?;
    let remaining = remaining.get() as usize;
    if remaining > max_remaining_length {
        return Err(DecodeError::PacketTooLarge {
            len: remaining,
            max: max_remaining_length,
        });
    }
    let header_len = 1 + len_bytes;
    let total = header_len + remaining;
    if buf.len() < total {
        return Err(DecodeError::Incomplete);
    }

    let mut r = Reader::new(&buf[header_len..total]);
    let packet = match packet_type {
        kind::CONNECT => Packet::Connect(decode_connect(&mut r)?),
        kind::CONNACK => {
            let ack_flags = r.u8()?;
            if ack_flags & 0xFE != 0 {
                return Err(DecodeError::Malformed("reserved CONNACK flag bits set"));
            }
            let code = r.u8()?;
            if level.is_v5() {
                r.skip_properties()?;
            }
            Packet::Connack(Connack {
                session_present: ack_flags & 1 == 1,
                code,
            })
        }
        kind::PUBLISH => Packet::Publish(decode_publish(&mut r, flags, level)?),
        kind::PUBACK => {
            let packet_id = r.packet_id()?;
            // 5.0 may append a reason code and properties; both are ignored.
            if level.is_v5() && r.remaining() > 0 {
                r.u8()?;
                if r.remaining() > 0 {
                    r.skip_properties()?;
                }
            }
            Packet::Puback(Puback { packet_id })
        }
        kind::SUBSCRIBE => {
            let packet_id = r.packet_id()?;
            if level.is_v5() {
                r.skip_properties()?;
            }
            let mut entries = Vec::new();
            while r.remaining() > 0 {
                let filter = TopicFilter::parse(r.string()?)
                    .map_err(|_| DecodeError::Malformed("invalid topic filter"))?;
                let options = r.u8()?;
                let reserved = if level.is_v5() {
                    0b1100_0000
                } else {
                    0b1111_1100
                };
                if options & reserved != 0 {
                    return Err(DecodeError::Malformed(
                        "reserved subscription option bits set",
                    ));
                }
                entries.push((filter, qos_from_bits(options & 0b11)?));
            }
            if entries.is_empty() {
                return Err(DecodeError::Malformed("SUBSCRIBE without entries"));
            }
            Packet::Subscribe(Subscribe { packet_id, entries })
        }
        kind::SUBACK => {
            let packet_id = r.packet_id()?;
            if level.is_v5() {
                r.skip_properties()?;
            }
            Packet::Suback(Suback {
                packet_id,
                reason_codes: r.rest().to_vec(),
            })
        }
        kind::UNSUBSCRIBE => {
            let packet_id = r.packet_id()?;
            if level.is_v5() {
                r.skip_properties()?;
            }
            let mut filters = Vec::new();
            while r.remaining() > 0 {
                filters.push(
                    TopicFilter::parse(r.string()?)
                        .map_err(|_| DecodeError::Malformed("invalid topic filter"))?,
                );
            }
            if filters.is_empty() {
                return Err(DecodeError::Malformed("UNSUBSCRIBE without entries"));
            }
            Packet::Unsubscribe(Unsubscribe { packet_id, filters })
        }
        kind::UNSUBACK => {
            let packet_id = r.packet_id()?;
            let reason_codes = if level.is_v5() {
                r.skip_properties()?;
                r.rest().to_vec()
            } else {
                Vec::new()
            };
            Packet::Unsuback(Unsuback {
                packet_id,
                reason_codes,
            })
        }
        kind::PINGREQ => Packet::Pingreq,
        kind::PINGRESP => Packet::Pingresp,
        kind::DISCONNECT => {
            if level.is_v5() && r.remaining() > 0 {
                r.u8()?;
                if r.remaining() > 0 {
                    r.skip_properties()?;
                }
            }
            Packet::Disconnect
        }
        _ => unreachable!("rejected by check_header"),
    };
    if r.remaining() != 0 {
        return Err(DecodeError::Malformed("trailing bytes after packet body"));
    }
    Ok((packet, total))
}

fn check_header(packet_type: u8, flags: u8) -> Result<(), DecodeError> {
    let expected = match packet_type {
        0 => return Err(DecodeError::UnknownPacketType(0)),
        kind::PUBLISH => {
            return match (flags >> 1) & 0b11 {
                3 => Err(DecodeError::InvalidFlags { packet_type, flags }),
                2 => Err(DecodeError::UnsupportedQos(2)),
                0 if flags & 0b1000 != 0 => Err(DecodeError::InvalidFlags { packet_type, flags }),
                _ => Ok(()),
            }
        }
        kind::SUBSCRIBE | kind::UNSUBSCRIBE => 0b0010,
        kind::CONNECT
        | kind::CONNACK
        | kind::PUBACK
        | kind::SUBACK
        | kind::UNSUBACK
        | kind::PINGREQ
        | kind::PINGRESP
        | kind::DISCONNECT => 0,
        // PUBREC / PUBREL / PUBCOMP (QoS 2 flow) and AUTH
        other => return Err(DecodeError::UnsupportedPacketType(other)),
    };
    if flags != expected {
        return Err(DecodeError::InvalidFlags { packet_type, flags });
    }
    Ok(())
}

fn qos_from_bits(bits: u8) -> Result<QoS, DecodeError> {
    match bits {
        0 => Ok(QoS::AtMostOnce),
        1 => Ok(QoS::AtLeastOnce),
        2 => Err(DecodeError::UnsupportedQos(2)),
        _ => Err(DecodeError::Malformed("QoS 3")),
    }
}

fn decode_connect(r: &mut Reader<'_>) -> Result<Connect, DecodeError> {
    if r.string()? != "MQTT" {
        return Err(DecodeError::Malformed("protocol name is not MQTT"));
    }
    let protocol_level = match r.u8()? {
        4 => ProtocolLevel::V311,
        5 => ProtocolLevel::V5,
        other => return Err(DecodeError::UnsupportedProtocolLevel(other)),
    };
    let flags = r.u8()?;
    if flags & 0b1 != 0 {
        return Err(DecodeError::Malformed("reserved CONNECT flag set"));
    }
    let will = flags & 0b0000_0100 != 0;
    let will_qos = (flags >> 3) & 0b11;
    if will_qos == 3 || (!will && (will_qos != 0 || flags & 0b0010_0000 != 0)) {
        return Err(DecodeError::Malformed("inconsistent will flags"));
    }
    let keep_alive = r.u16()?;
    if protocol_level.is_v5() {
        r.skip_properties()?;
    }
    let client_id = r.string()?.to_owned();
    // Will message, user name and password are parsed and dropped.
    if will {
        if protocol_level.is_v5() {
            r.skip_properties()?;
        }
        r.string()?;
        r.binary()?;
    }
    if flags & 0b1000_0000 != 0 {
        r.string()?;
    }
    if flags & 0b0100_0000 != 0 {
        r.binary()?;
    }
    Ok(Connect {
        protocol_level,
        client_id,
        keep_alive,
        clean_start: flags & 0b10 != 0,
    })
}

fn decode_publish(
    r: &mut Reader<'_>,
    flags: u8,
    level: ProtocolLevel,
) -> Result<Publish, DecodeError> {
    let qos = qos_from_bits((flags >> 1) & 0b11)?;
    let topic = TopicName::parse(r.string()?)
        .map_err(|_| DecodeError::Malformed("invalid topic name in PUBLISH"))?;
    let packet_id = match qos {
        QoS::AtMostOnce => None,
        QoS::AtLeastOnce => Some(r.packet_id()?),
    };
    let properties = if level.is_v5() {
        let len = r.varint()?;
        Bytes::copy_from_slice(r.take(len)?)
    } else {
        Bytes::new()
    };
    Ok(Publish {
        topic,
        qos,
        retain: flags & 1 == 1,
        dup: flags & 0b1000 != 0,
        packet_id,
        payload: Bytes::copy_from_slice(r.rest()),
        properties,
    })
}

/// Cursor over a complete packet body. Running out of bytes here means the
/// remaining length lied, which is malformed rather than incomplete.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Malformed("field overruns remaining length"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn packet_id(&mut self) -> Result<u16, DecodeError> {
        match self.u16()? {
            0 => Err(DecodeError::Malformed("zero packet identifier")),
            id => Ok(id),
        }
    }

    fn varint(&mut self) -> Result<usize, DecodeError> {
        match decode_varint(&self.buf[self.pos..]) {
            Ok((v, n)) => {
                self.pos += n;
                Ok(v.get() as usize)
            }
            Err(DecodeError::Incomplete) => {
                Err(DecodeError::Malformed("truncated property length"))
            }
            Err(e) => Err(e),
        }
    }

    fn binary(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u16()? as usize;
        self.take(len)
    }

    fn string(&mut self) -> Result<&'a str, DecodeError> {
        let s = std::str::from_utf8(self.binary()?).map_err(|_| DecodeError::InvalidUtf8)?;
        if s.contains('\0') {
            return Err(DecodeError::Malformed("NUL in string field"));
        }
        Ok(s)
    }

    fn skip_properties(&mut self) -> Result<(), DecodeError> {
        let len = self.varint()?;
        self.take(len).map(|_| ())
    }
}
