use bytes::{BufMut, BytesMut};

use super::error::EncodeError;
use super::packet::{kind, Packet, ProtocolLevel, Publish, QoS};
use super::varint::{put_varint, varint_len, VarInt, VARINT_MAX};

const PROTOCOL_NAME: &[u8] = b"MQTT";

/// Encodes `packet` into a freshly allocated buffer.
pub fn encode_packet(packet: &Packet, level: ProtocolLevel) -> Result<Vec<u8>, EncodeError> {
    let mut buf = BytesMut::new();
    write_packet(packet, level, &mut buf)?;
    Ok(buf.to_vec())
}

/// Appends the encoding of `packet` to `buf`. On error nothing is written.
pub fn write_packet(
    packet: &Packet,
    level: ProtocolLevel,
    buf: &mut BytesMut,
) -> Result<(), EncodeError> {
    validate(packet, level)?;
    let remaining = remaining_length(packet, level)?;
    let remaining =
        VarInt::new(remaining as u32).map_err(|_| EncodeError::PacketTooLarge(remaining))?;
    buf.reserve(1 + remaining.encoded_len() + remaining.get() as usize);
    buf.put_u8(first_byte(packet));
    put_varint(buf, remaining);
    let v5 = level.is_v5();

    match packet {
        Packet::Connect(c) => {
            put_bytes(buf, PROTOCOL_NAME);
            buf.put_u8(c.protocol_level.as_u8());
            buf.put_u8(if c.clean_start { 0b0000_0010 } else { 0 });
            buf.put_u16(c.keep_alive);
            if c.protocol_level.is_v5() {
                buf.put_u8(0);
            }
            put_bytes(buf, c.client_id.as_bytes());
        }
        Packet::Connack(c) => {
            buf.put_u8(u8::from(c.session_present));
            buf.put_u8(c.code);
            if v5 {
                buf.put_u8(0);
            }
        }
        Packet::Publish(p) => {
            put_bytes(buf, p.topic.as_str().as_bytes());
            if let Some(id) = p.packet_id {
                buf.put_u16(id);
            }
            if v5 {
                put_varint(buf, VarInt::new(p.properties.len() as u32)?);
                buf.put_slice(&p.properties);
            }
            buf.put_slice(&p.payload);
        }
        Packet::Puback(a) => buf.put_u16(a.packet_id),
        Packet::Subscribe(s) => {
            buf.put_u16(s.packet_id);
            if v5 {
                buf.put_u8(0);
            }
            for (filter, qos) in &s.entries {
                put_bytes(buf, filter.as_str().as_bytes());
                buf.put_u8(qos.as_u8());
            }
        }
        Packet::Suback(s) => {
            buf.put_u16(s.packet_id);
            if v5 {
                buf.put_u8(0);
            }
            buf.put_slice(&s.reason_codes);
        }
        Packet::Unsubscribe(u) => {
            buf.put_u16(u.packet_id);
            if v5 {
                buf.put_u8(0);
            }
            for filter in &u.filters {
                put_bytes(buf, filter.as_str().as_bytes());
            }
        }
        Packet::Unsuback(u) => {
            buf.put_u16(u.packet_id);
            if v5 {
                buf.put_u8(0);
                buf.put_slice(&u.reason_codes);
            }
        }
        Packet::Pingreq | Packet::Pingresp | Packet::Disconnect => {}
    }
    Ok(())
}

fn first_byte(packet: &Packet) -> u8 {
    match packet {
        Packet::Connect(_) => kind::CONNECT << 4,
        Packet::Connack(_) => kind::CONNACK << 4,
        Packet::Publish(p) => {
            (kind::PUBLISH << 4)
                | (u8::from(p.dup) << 3)
                | (p.qos.as_u8() << 1)
                | u8::from(p.retain)
        }
        Packet::Puback(_) => kind::PUBACK << 4,
        Packet::Subscribe(_) => (kind::SUBSCRIBE << 4) | 0b0010,
        Packet::Suback(_) => kind::SUBACK << 4,
        Packet::Unsubscribe(_) => (kind::UNSUBSCRIBE << 4) | 0b0010,
        Packet::Unsuback(_) => kind::UNSUBACK << 4,
        Packet::Pingreq => kind::PINGREQ << 4,
        Packet::Pingresp => kind::PINGRESP << 4,
        Packet::Disconnect => kind::DISCONNECT << 4,
    }
}

fn validate(packet: &Packet, level: ProtocolLevel) -> Result<(), EncodeError> {
    match packet {
        Packet::Connect(c) => check_str(c.client_id.len()),
        Packet::Publish(p) => validate_publish(p, level),
        Packet::Puback(a) => check_id(a.packet_id),
        Packet::Subscribe(s) => {
            check_id(s.packet_id)?;
            if s.entries.is_empty() {
                return Err(EncodeError::EmptyEntryList("SUBSCRIBE"));
            }
            s.entries
                .iter()
                .try_for_each(|(f, _)| check_str(f.as_str().len()))
        }
        Packet::Suback(s) => check_id(s.packet_id),
        Packet::Unsubscribe(u) => {
            check_id(u.packet_id)?;
            if u.filters.is_empty() {
                return Err(EncodeError::EmptyEntryList("UNSUBSCRIBE"));
            }
            u.filters
                .iter()
                .try_for_each(|f| check_str(f.as_str().len()))
        }
        Packet::Unsuback(u) => {
            check_id(u.packet_id)?;
            if !level.is_v5() && !u.reason_codes.is_empty() {
                return Err(EncodeError::ReasonCodesRequireV5);
            }
            Ok(())
        }
        Packet::Connack(_) | Packet::Pingreq | Packet::Pingresp | Packet::Disconnect => Ok(()),
    }
}

fn validate_publish(p: &Publish, level: ProtocolLevel) -> Result<(), EncodeError> {
    match (p.qos, p.packet_id) {
        (QoS::AtLeastOnce, None) => return Err(EncodeError::MissingPacketId),
        (QoS::AtLeastOnce, Some(0)) => return Err(EncodeError::ZeroPacketId),
        (QoS::AtMostOnce, Some(_)) => return Err(EncodeError::UnexpectedPacketId),
        _ => {}
    }
    if p.dup && p.qos == QoS::AtMostOnce {
        return Err(EncodeError::DupWithoutQos);
    }
    if !level.is_v5() && !p.properties.is_empty() {
        return Err(EncodeError::PropertiesRequireV5);
    }
    if p.properties.len() > VARINT_MAX as usize {
        return Err(EncodeError::VarIntOutOfRange(
            p.properties.len().min(u32::MAX as usize) as u32,
        ));
    }
    check_str(p.topic.as_str().len())
}

fn check_id(id: u16) -> Result<(), EncodeError> {
    if id == 0 {
        Err(EncodeError::ZeroPacketId)
    } else {
        Ok(())
    }
}

fn check_str(len: usize) -> Result<(), EncodeError> {
    if len > u16::MAX as usize {
        Err(EncodeError::StringTooLong(len))
    } else {
        Ok(())
    }
}

fn remaining_length(packet: &Packet, level: ProtocolLevel) -> Result<usize, EncodeError> {
    let props = usize::from(level.is_v5());
    let len = match packet {
        Packet::Connect(c) => {
            2 + PROTOCOL_NAME.len()
                + 1
                + 1
                + 2
                + usize::from(c.protocol_level.is_v5())
                + 2
                + c.client_id.len()
        }
        Packet::Connack(_) => 2 + props,
        Packet::Publish(p) => {
            let prop_block = if level.is_v5() {
                varint_len(p.properties.len() as u32) + p.properties.len()
            } else {
                0
            };
            2 + p.topic.as_str().len()
                + if p.packet_id.is_some() { 2 } else { 0 }
                + prop_block
                + p.payload.len()
        }
        Packet::Puback(_) => 2,
        Packet::Subscribe(s) => {
            2 + props
                + s.entries
                    .iter()
                    .map(|(f, _)| 3 + f.as_str().len())
                    .sum::<usize>()
        }
        Packet::Suback(s) => 2 + props + s.reason_codes.len(),
        Packet::Unsubscribe(u) => {
            2 + props
                + u.filters
                    .iter()
                    .map(|f| 2 + f.as_str().len())
                    .sum::<usize>()
        }
        Packet::Unsuback(u) => {
            2 + if level.is_v5() {
                1 + u.reason_codes.len()
            } else {
                0
            }
        }
        Packet::Pingreq | Packet::Pingresp | Packet::Disconnect => 0,
    };
    if len > VARINT_MAX as usize {
        return Err(EncodeError::PacketTooLarge(len));
    }
    Ok(len)
}

fn put_bytes(buf: &mut BytesMut, bytes: &[u8]) {
    buf.put_u16(bytes.len() as u16);
    buf.put_slice(bytes);
}
