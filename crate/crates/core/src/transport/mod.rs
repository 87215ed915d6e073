//! Length-prefixed binary frames, CRC-protected weight blobs, and two
//! interchangeable carriers: in-process channels and TCP.
//!
//! Frame layout, all integers little-endian:
//!
//! ```text
//! "FME1" | kind u8 | round u32 | client_id u32 | payload_len u32 | payload
//! ```

mod blob;
mod loopback;
mod payload;
mod tcp;

use std::time::Duration;

use thiserror::Error;

pub use blob::{deserialize_weights, serialize_weights, BLOB_VERSION};
pub use loopback::{loopback_transport, LoopbackClient, LoopbackServer};
pub use payload::{RoundSummary, UpdatePayload, WelcomePayload};
pub use tcp::{TcpClient, TcpServer, DEFAULT_PORT};

pub const MAGIC: [u8; 4] = *b"FME1";
pub const HEADER_LEN: usize = 17;
pub const DEFAULT_MAX_PAYLOAD: usize = 256 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("malformed frame: bad magic {0:02x?}")]
    MalformedFrame([u8; 4]),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("payload of {len} bytes exceeds the {max} byte limit")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("tensor {tensor} holds a non-finite value at index {index}")]
    NonFiniteValue { tensor: String, index: usize },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("malformed weight blob: {0}")]
    MalformedBlob(String),
    #[error("malformed {kind:?} payload: {reason}")]
    MalformedPayload { kind: MessageKind, reason: String },
    #[error("channel closed")]
    ChannelClosed,
    #[error("timed out")]
    Timeout,
    #[error("unknown connection {0}")]
    UnknownConnection(usize),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => {
                TransportError::Timeout
            }
            std::io::ErrorKind::UnexpectedEof
            | std::io::ErrorKind::ConnectionReset
            | std::io::ErrorKind::ConnectionAborted
            | std::io::ErrorKind::BrokenPipe => TransportError::ChannelClosed,
            _ => TransportError::Io(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, TransportError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 1,
    Welcome = 2,
    GlobalModel = 3,
    Update = 4,
    RoundDone = 5,
    Shutdown = 6,
    Error = 7,
}

impl MessageKind {
    pub const ALL: [MessageKind; 7] = [
        MessageKind::Hello,
        MessageKind::Welcome,
        MessageKind::GlobalModel,
        MessageKind::Update,
        MessageKind::RoundDone,
        MessageKind::Shutdown,
        MessageKind::Error,
    ];
}

impl TryFrom<u8> for MessageKind {
    type Error = TransportError;

    fn try_from(v: u8) -> Result<Self> {
        MessageKind::ALL
            .get((v as usize).wrapping_sub(1))
            .copied()
            .ok_or(TransportError::UnknownKind(v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub round: u32,
    pub client_id: u32,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(kind: MessageKind, round: u32, client_id: u32, payload: Vec<u8>) -> Self {
        Self {
            kind,
            round,
            client_id,
            payload,
        }
    }

    pub fn empty(kind: MessageKind, round: u32, client_id: u32) -> Self {
        Self::new(kind, round, client_id, Vec::new())
    }
}

pub fn encode_message(msg: &Message) -> Result<Vec<u8>> {
    encode_message_with_limit(msg, DEFAULT_MAX_PAYLOAD)
}

pub fn encode_message_with_limit(msg: &Message, max_payload: usize) -> Result<Vec<u8>> {
    let len = msg.payload.len();
    if len > max_payload || len > u32::MAX as usize {
        return Err(TransportError::PayloadTooLarge {
            len,
            max: max_payload,
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + len);
    out.extend_from_slice(&MAGIC);
    out.push(msg.kind as u8);
    out.extend_from_slice(&msg.round.to_le_bytes());
    out.extend_from_slice(&msg.client_id.to_le_bytes());
    out.extend_from_slice(&(len as u32).to_le_bytes());
    out.extend_from_slice(&msg.payload);
    Ok(out)
}

/// Parsed header fields plus the payload length it announces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub kind: MessageKind,
    pub round: u32,
    pub client_id: u32,
    pub payload_len: usize,
}

pub fn decode_header(bytes: &[u8], max_payload: usize) -> Result<FrameHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(TransportError::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(TransportError::MalformedFrame(magic));
    }
    let kind = MessageKind::try_from(bytes[4])?;
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let payload_len = u32_at(13) as usize;
    if payload_len > max_payload {
        return Err(TransportError::PayloadTooLarge {
            len: payload_len,
            max: max_payload,
        });
    }
    Ok(FrameHeader {
        kind,
        round: u32_at(5),
        client_id: u32_at(9),
        payload_len,
    })
}

/// Decodes the first frame in `bytes`, returning it with the number of bytes
/// it occupied. Nothing is consumed unless a whole frame is present.
pub fn decode_message(bytes: &[u8]) -> Result<(Message, usize)> {
    decode_message_with_limit(bytes, DEFAULT_MAX_PAYLOAD)
}

pub fn decode_message_with_limit(bytes: &[u8], max_payload: usize) -> Result<(Message, usize)> {
    let h = decode_header(bytes, max_payload)?;
    let total = HEADER_LEN + h.payload_len;
    if bytes.len() < total {
        return Err(TransportError::Truncated {
            needed: total,
            available: bytes.len(),
        });
    }
    let msg = Message::new(
        h.kind,
        h.round,
        h.client_id,
        bytes[HEADER_LEN..total].to_vec(),
    );
    Ok((msg, total))
}

/// Index of a client connection on the server side.
pub type ConnId = usize;

/// Server end of a transport: one inbox fed by every connection.
pub trait ServerTransport: Send {
    /// Next message from any connection. `None` waits indefinitely.
    fn recv_any(&mut self, timeout: Option<Duration>) -> Result<(ConnId, Message)>;
    fn send(&mut self, conn: ConnId, msg: &Message) -> Result<()>;
    fn connections(&self) -> usize;
    fn close(&mut self);
}

/// Client end of a transport.
pub trait ClientTransport: Send {
    fn send(&mut self, msg: &Message) -> Result<()>;
    fn recv(&mut self, timeout: Option<Duration>) -> Result<Message>;
    fn close(&mut self);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hello_frame_bytes() {
        let bytes = encode_message(&Message::empty(MessageKind::Hello, 0, 2)).unwrap();
        assert_eq!(
            bytes,
            [0x46, 0x4D, 0x45, 0x31, 0x01, 0, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0]
        );
    }

    #[test]
    fn decode_errors() {
        let mut bytes =
            encode_message(&Message::new(MessageKind::Update, 3, 1, vec![1, 2, 3])).unwrap();
        assert!(matches!(
            decode_message(&bytes[..bytes.len() - 1]),
            Err(TransportError::Truncated {
                needed: 20,
                available: 19
            })
        ));
        assert!(matches!(
            decode_message(&bytes[..5]),
            Err(TransportError::Truncated { .. })
        ));
        bytes[4] = 9;
        assert_eq!(decode_message(&bytes), Err(TransportError::UnknownKind(9)));
        bytes[0] = b'X';
        assert!(matches!(
            decode_message(&bytes),
            Err(TransportError::MalformedFrame(_))
        ));
    }

    #[test]
    fn payload_limit() {
        let msg = Message::new(MessageKind::Error, 0, 0, vec![0; 10]);
        assert!(matches!(
            encode_message_with_limit(&msg, 9),
            Err(TransportError::PayloadTooLarge { len: 10, max: 9 })
        ));
        let bytes = encode_message(&msg).unwrap();
        assert!(matches!(
            decode_message_with_limit(&bytes, 9),
            Err(TransportError::PayloadTooLarge { .. })
        ));
    }

    #[test]
    fn decodes_first_of_concatenated_frames() {
        let a = Message::new(MessageKind::RoundDone, 1, 0, vec![7; 4]);
        let b = Message::empty(MessageKind::Shutdown, 2, 0);
        let mut bytes = encode_message(&a).unwrap();
        bytes.extend(encode_message(&b).unwrap());
        let (m, used) = decode_message(&bytes).unwrap();
        assert_eq!((m, used), (a, 21));
        assert_eq!(decode_message(&bytes[used..]).unwrap().0, b);
    }

    proptest! {
        #[test]
        fn frame_round_trip(
            kind in 1u8..=7,
            round: u32,
            client_id: u32,
            payload in proptest::collection::vec(any::<u8>(), 0..=1024),
        ) {
            let msg = Message::new(MessageKind::try_from(kind).unwrap(), round, client_id, payload);
            let bytes = encode_message(&msg).unwrap();
            prop_assert_eq!(bytes.len(), HEADER_LEN + msg.payload.len());
            let (back, used) = decode_message(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back, msg);
        }

        #[test]
        fn every_strict_prefix_is_truncated(
            payload in proptest::collection::vec(any::<u8>(), 0..=64),
            cut in 0usize..1000,
        ) {
            let bytes = encode_message(&Message::new(MessageKind::Update, 1, 2, payload)).unwrap();
            let cut = cut % bytes.len();
            let is_truncated = matches!(decode_message(&bytes[..cut]), Err(TransportError::Truncated { .. }));
            prop_assert!(is_truncated);
        }
    }
}
