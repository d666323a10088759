use bytes::{BufMut, Bytes, BytesMut};

/// Sender identity and send time recovered from a sequenced payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SequenceTag {
    pub worker: u32,
    pub seq: u64,
    /// Send time in microseconds since the Unix epoch.
    pub sent_at_us: u64,
}

/// Prefixes `base` with `seq=<worker>:<n>;ts=<micros>;`.
pub fn sequenced_payload(tag: SequenceTag, base: &[u8]) -> Bytes {
    let head = format!("seq={}:{};ts={};", tag.worker, tag.seq, tag.sent_at_us);
    let mut buf = BytesMut::with_capacity(head.len() + base.len());
    buf.put_slice(head.as_bytes());
    buf.put_slice(base);
    buf.freeze()
}

/// Parses the prefix written by [`sequenced_payload`]. Returns the tag and
/// the length of the prefix.
pub fn parse_sequence_tag(payload: &[u8]) -> Option<(SequenceTag, usize)> {
    let rest = payload.strip_prefix(b"seq=")?;
    let (worker, rest) = take_number(rest, b':')?;
    let (seq, rest) = take_number(rest, b';')?;
    let rest = rest.strip_prefix(b"ts=")?;
    let (sent_at_us, rest) = take_number(rest, b';')?;
    let worker = u32::try_from(worker).ok()?;
    Some((
        SequenceTag {
            worker,
            seq,
            sent_at_us,
        },
        payload.len() - rest.len(),
    ))
}

fn take_number(buf: &[u8], end: u8) -> Option<(u64, &[u8])> {
    let stop = buf.iter().position(|&b| b == end)?;
    if stop == 0 || stop > 20 {
        return None;
    }
    let digits = std::str::from_utf8(&buf[..stop]).ok()?;
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((digits.parse().ok()?, &buf[stop + 1..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let tag = SequenceTag {
            worker: 3,
            seq: 17,
            sent_at_us: 1_700_000_000_123_456,
        };
        let p = sequenced_payload(tag, b"MOVE_TO_TARGET#29:3");
        assert_eq!(&p[..], b"seq=3:17;ts=1700000000123456;MOVE_TO_TARGET#29:3");
        let (parsed, head) = parse_sequence_tag(&p).unwrap();
        assert_eq!(parsed, tag);
        assert_eq!(&p[head..], b"MOVE_TO_TARGET#29:3");
    }

    #[test]
    fn rejects_untagged() {
        assert_eq!(parse_sequence_tag(b"MOVE_TO_TARGET#29:3"), None);
        assert_eq!(parse_sequence_tag(b"seq=:1;ts=2;"), None);
        assert_eq!(parse_sequence_tag(b"seq=1:x;ts=2;"), None);
        assert_eq!(parse_sequence_tag(b"seq=1:2;"), None);
        assert_eq!(parse_sequence_tag(b"seq=99999999999:2;ts=3;"), None);
    }
}
