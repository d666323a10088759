//! Variable Byte Integer: the remaining-length and property-length encoding.

use bytes::BufMut;

use super::error::{DecodeError, EncodeError};

/// Largest value a four-byte variable byte integer can carry.
pub const VARINT_MAX: u32 = 268_435_455;

/// A value in `0..=VARINT_MAX`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VarInt(u32);

impl VarInt {
    pub fn new(value: u32) -> Result<Self, EncodeError> {
        if value > VARINT_MAX {
            return Err(EncodeError::VarIntOutOfRange(value));
        }
        Ok(VarInt(value))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Number of bytes the minimal encoding occupies.
    pub fn encoded_len(self) -> usize {
        varint_len(self.0)
    }
}

impl TryFrom<u32> for VarInt {
    type Error = EncodeError;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        VarInt::new(value)
    }
}

impl From<VarInt> for u32 {
    fn from(v: VarInt) -> u32 {
        v.0
    }
}

pub(crate) fn varint_len(value: u32) -> usize {
    match value {
        0..=127 => 1,
        128..=16_383 => 2,
        16_384..=2_097_151 => 3,
        _ => 4,
    }
}

/// Encodes `value` in the minimal number of continuation-bit bytes.
pub fn encode_varint(value: u32) -> Result<Vec<u8>, EncodeError> {
    let v = VarInt::new(value)?;
    let mut out = Vec::with_capacity(v.encoded_len());
    put_varint(&mut out, v);
    Ok(out)
}

pub(crate) fn put_varint(buf: &mut impl BufMut, value: VarInt) {
    let mut x = value.0;
    loop {
        let mut byte = (x & 0x7F) as u8;
        x >>= 7;
        if x > 0 {
            byte |= 0x80;
        }
        buf.put_u8(byte);
        if x == 0 {
            break;
        }
    }
}

/// Decodes a variable byte integer from the front of `buf`, returning the
/// value and the number of bytes it occupied.
///
/// A buffer that ends while the continuation bit is still set yields
/// [`DecodeError::Incomplete`]; a fifth byte is never read.
pub fn decode_varint(buf: &[u8]) -> Result<(VarInt, usize), DecodeError> {
    let mut value: u32 = 0;
    for i in 0..4 {
        let Some(&byte) = buf.get(i) else {
            return Err(DecodeError::Incomplete);
        };
        value |= u32::from(byte & 0x7F) << (7 * i);
        if byte & 0x80 == 0 {
            return Ok((VarInt(value), i + 1));
        }
    }
    Err(DecodeError::MalformedVarInt)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-executed continuation algorithm: emit low 7 bits, set the high
    /// bit when more bits remain.
    const VECTORS: &[(u32, &[u8])] = &[
        (0, &[0x00]),
        (127, &[0x7F]),
        (128, &[0x80, 0x01]),
        (16_383, &[0xFF, 0x7F]),
        (16_384, &[0x80, 0x80, 0x01]),
        (2_097_151, &[0xFF, 0xFF, 0x7F]),
        (2_097_152, &[0x80, 0x80, 0x80, 0x01]),
        (268_435_455, &[0xFF, 0xFF, 0xFF, 0x7F]),
    ];

    #[test]
    fn boundary_vectors() {
        for &(value, bytes) in VECTORS {
            assert_eq!(encode_varint(value).unwrap(), bytes, "encode {value}");
            let (v, n) = decode_varint(bytes).unwrap();
            assert_eq!((v.get(), n), (value, bytes.len()), "decode {value}");
            assert_eq!(VarInt::new(value).unwrap().encoded_len(), bytes.len());
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(matches!(
            encode_varint(268_435_456),
            Err(EncodeError::VarIntOutOfRange(268_435_456))
        ));
    }

    #[test]
    fn five_bytes_is_malformed() {
        assert_eq!(
            decode_varint(&[0x80, 0x80, 0x80, 0x80, 0x01]),
            Err(DecodeError::MalformedVarInt)
        );
    }

    #[test]
    fn truncated_is_incomplete() {
        assert_eq!(decode_varint(&[]), Err(DecodeError::Incomplete));
        assert_eq!(decode_varint(&[0x80]), Err(DecodeError::Incomplete));
        assert_eq!(
            decode_varint(&[0xFF, 0xFF, 0xFF]),
            Err(DecodeError::Incomplete)
        );
    }

    #[test]
    fn trailing_bytes_ignored() {
        assert_eq!(decode_varint(&[0x05, 0xAA]).unwrap(), (VarInt(5), 1));
    }
}
