//! Framed packet I/O over TCP, plus the minimal client handshake used by the
//! publisher fleet and the verifier.

use std::time::Duration;

use bytes::{Buf, BytesMut};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

use crate::codec::{
    decode_packet_with_limit, write_packet, Connect, DecodeError, EncodeError, Packet,
    ProtocolLevel, QoS, Subscribe, DEFAULT_MAX_REMAINING_LENGTH,
};
use crate::topic::TopicFilter;

const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
    #[error("encode: {0}")]
    Encode(#[from] EncodeError),
    #[error("connection closed by peer")]
    Closed,
    #[error("connection refused with code {0:#04x}")]
    Refused(u8),
    #[error("subscription to {0} rejected")]
    SubscriptionRejected(String),
    #[error("protocol violation: expected {expected}, got {got}")]
    Unexpected {
        expected: &'static str,
        got: &'static str,
    },
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
}

/// Buffered packet reader. [`read_packet`](Self::read_packet) is cancel-safe.
#[derive(Debug)]
pub struct PacketReader<R> {
    inner: R,
    buf: BytesMut,
    level: ProtocolLevel,
    max_remaining_length: usize,
}

impl<R: AsyncRead + Unpin> PacketReader<R> {
    pub fn new(inner: R, level: ProtocolLevel) -> Self {
        PacketReader {
            inner,
            buf: BytesMut::with_capacity(8 * 1024),
            level,
            max_remaining_length: DEFAULT_MAX_REMAINING_LENGTH,
        }
    }

    pub fn with_max_remaining_length(mut self, max: usize) -> Self {
        self.max_remaining_length = max;
        self
    }

    pub fn set_level(&mut self, level: ProtocolLevel) {
        self.level = level;
    }

    /// Decodes a packet already sitting in the buffer, without I/O.
    pub fn try_next(&mut self) -> Result<Option<Packet>, DecodeError> {
        match decode_packet_with_limit(&self.buf, self.level, self.max_remaining_length) {
            Ok((packet, n)) => {
                self.buf.advance(n);
                Ok(Some(packet))
            }
            Err(DecodeError::Incomplete) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Next packet, or `None` on a clean end of stream between packets.
    pub async fn read_packet(&mut self) -> Result<Option<Packet>, ClientError> {
        loop {
            if let Some(p) = self.try_next()? {
                return Ok(Some(p));
            }
            self.buf.reserve(4096);
            if self.inner.read_buf(&mut self.buf).await? == 0 {
                return if self.buf.is_empty() {
                    Ok(None)
                } else {
                    Err(ClientError::Closed)
                };
            }
        }
    }
}

/// Accumulates encoded packets and writes them in one call.
#[derive(Debug)]
pub struct PacketWriter<W> {
    inner: W,
    buf: BytesMut,
    level: ProtocolLevel,
}

impl<W: AsyncWrite + Unpin> PacketWriter<W> {
    pub fn new(inner: W, level: ProtocolLevel) -> Self {
        PacketWriter {
            inner,
            buf: BytesMut::with_capacity(8 * 1024),
            level,
        }
    }

    pub fn set_level(&mut self, level: ProtocolLevel) {
        self.level = level;
    }

    pub fn queue(&mut self, packet: &Packet) -> Result<(), EncodeError> {
        write_packet(packet, self.level, &mut self.buf)
    }

    pub fn pending_bytes(&self) -> usize {
        self.buf.len()
    }

    pub async fn flush(&mut self) -> std::io::Result<()> {
        if !self.buf.is_empty() {
            self.inner.write_all(&self.buf).await?;
            self.buf.clear();
        }
        Ok(())
    }

    pub async fn send(&mut self, packet: &Packet) -> Result<(), ClientError> {
        self.queue(packet)?;
        self.flush().await?;
        Ok(())
    }

    pub async fn shutdown(&mut self) -> std::io::Result<()> {
        self.flush().await?;
        self.inner.shutdown().await
    }
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub client_id: String,
    pub level: ProtocolLevel,
    pub keep_alive: u16,
}

impl ClientOptions {
    pub fn new(client_id: impl Into<String>) -> Self {
        ClientOptions {
            client_id: client_id.into(),
            level: ProtocolLevel::V5,
            keep_alive: 60,
        }
    }

    pub fn level(mut self, level: ProtocolLevel) -> Self {
        self.level = level;
        self
    }
}

/// A connected, CONNACK-ed client session.
pub struct Connection {
    pub reader: PacketReader<OwnedReadHalf>,
    pub writer: PacketWriter<OwnedWriteHalf>,
    pub options: ClientOptions,
}

impl Connection {
    pub async fn connect(endpoint: &str, options: ClientOptions) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(endpoint).await?;
        stream.set_nodelay(true)?;
        let (rd, wr) = stream.into_split();
        let mut conn = Connection {
            reader: PacketReader::new(rd, options.level),
            writer: PacketWriter::new(wr, options.level),
            options,
        };
        let connect = Packet::Connect(Connect {
            protocol_level: conn.options.level,
            client_id: conn.options.client_id.clone(),
            keep_alive: conn.options.keep_alive,
            clean_start: true,
        });
        conn.writer.send(&connect).await?;
        match conn.expect("CONNACK").await? {
            Packet::Connack(ack) if ack.code == 0 => Ok(conn),
            Packet::Connack(ack) => Err(ClientError::Refused(ack.code)),
            other => Err(ClientError::Unexpected {
                expected: "CONNACK",
                got: other.kind(),
            }),
        }
    }

    /// Subscribes and waits for the SUBACK. Any refused entry is an error.
    pub async fn subscribe(
        &mut self,
        filters: &[TopicFilter],
        qos: QoS,
    ) -> Result<Vec<QoS>, ClientError> {
        let packet = Packet::Subscribe(Subscribe {
            packet_id: 1,
            entries: filters.iter().map(|f| (f.clone(), qos)).collect(),
        });
        self.writer.send(&packet).await?;
        match self.expect("SUBACK").await? {
            Packet::Suback(ack) => ack
                .reason_codes
                .iter()
                .zip(filters)
                .map(|(code, f)| {
                    QoS::try_from(*code)
                        .map_err(|_| ClientError::SubscriptionRejected(f.to_string()))
                })
                .collect(),
            other => Err(ClientError::Unexpected {
                expected: "SUBACK",
                got: other.kind(),
            }),
        }
    }

    async fn expect(&mut self, what: &'static str) -> Result<Packet, ClientError> {
        match tokio::time::timeout(HANDSHAKE_TIMEOUT, self.reader.read_packet()).await {
            Err(_) => Err(ClientError::Timeout(what)),
            Ok(res) => res?.ok_or(ClientError::Closed),
        }
    }

    pub async fn disconnect(mut self) -> Result<(), ClientError> {
        self.writer.queue(&Packet::Disconnect)?;
        self.writer.shutdown().await?;
        Ok(())
    }
}

/// Client-id prefix unique within this host: process id plus a counter.
pub fn unique_client_prefix(role: &str) -> String {
    use std::sync::atomic::{AtomicU64, Ordering};
    static NEXT: AtomicU64 = AtomicU64::new(0);
    format!(
        "testbed-{}-{}-{}",
        std::process::id(),
        NEXT.fetch_add(1, Ordering::Relaxed),
        role
    )
}

/// Microseconds since the Unix epoch.
pub fn unix_micros() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}
