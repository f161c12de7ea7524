//! Binary frame codec shared by every actor.
//!
//! ```text
//! magic "PANA" (4) || version (1) || kind (1) || correlation_id (8)
//! || src (3) || dst (3) || sent_at (8) || payload_len (4) || payload
//! ```
//!
//! An address is a kind code byte followed by a 16-bit instance index.
//! All integers are big-endian.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::Tick;

pub const MAGIC: [u8; 4] = *b"PANA";
pub const WIRE_VERSION: u8 = 1;
pub const MAX_PAYLOAD: usize = 1 << 16;
/// Bytes preceding the payload.
pub const HEADER_LEN: usize = 4 + 1 + 1 + 8 + 3 + 3 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActorKind {
    MobileClient,
    Aco,
    Telecom,
    AccessProvider,
    ServiceProvider,
}

impl ActorKind {
    pub const ALL: [ActorKind; 5] = [
        ActorKind::MobileClient,
        ActorKind::Aco,
        ActorKind::Telecom,
        ActorKind::AccessProvider,
        ActorKind::ServiceProvider,
    ];

    pub fn code(self) -> u8 {
        match self {
            ActorKind::MobileClient => 1,
            ActorKind::Aco => 2,
            ActorKind::Telecom => 3,
            ActorKind::AccessProvider => 4,
            ActorKind::ServiceProvider => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    /// Telecom and access provider exist once per scenario.
    pub fn is_singleton(self) -> bool {
        matches!(self, ActorKind::Telecom | ActorKind::AccessProvider)
    }

    fn label(self) -> &'static str {
        match self {
            ActorKind::MobileClient => "client",
            ActorKind::Aco => "aco",
            ActorKind::Telecom => "telecom",
            ActorKind::AccessProvider => "provider",
            ActorKind::ServiceProvider => "sp",
        }
    }
}

/// Address of one protocol actor. Singletons always carry index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActorAddr {
    kind: ActorKind,
    index: u16,
}

impl ActorAddr {
    pub const TELECOM: ActorAddr = ActorAddr { kind: ActorKind::Telecom, index: 0 };
    pub const ACCESS_PROVIDER: ActorAddr =
        ActorAddr { kind: ActorKind::AccessProvider, index: 0 };

    pub fn new(kind: ActorKind, index: u16) -> Option<Self> {
        if kind.is_singleton() && index != 0 {
            return None;
        }
        Some(ActorAddr { kind, index })
    }

    pub const fn client(index: u16) -> Self {
        ActorAddr { kind: ActorKind::MobileClient, index }
    }

    pub const fn aco(index: u16) -> Self {
        ActorAddr { kind: ActorKind::Aco, index }
    }

    pub const fn service_provider(index: u16) -> Self {
        ActorAddr { kind: ActorKind::ServiceProvider, index }
    }

    pub fn kind(self) -> ActorKind {
        self.kind
    }

    pub fn index(self) -> u16 {
        self.index
    }

    pub fn to_bytes(self) -> [u8; 3] {
        let [hi, lo] = self.index.to_be_bytes();
        [self.kind.code(), hi, lo]
    }

    pub fn from_bytes(bytes: [u8; 3]) -> Option<Self> {
        let kind = ActorKind::from_code(bytes[0])?;
        ActorAddr::new(kind, u16::from_be_bytes([bytes[1], bytes[2]]))
    }
}

impl fmt::Display for ActorAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kind.is_singleton() {
            f.write_str(self.kind.label())
        } else {
            write!(f, "{}:{}", self.kind.label(), self.index)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid actor address {0:?}")]
pub struct ParseAddrError(pub String);

impl FromStr for ActorAddr {
    type Err = ParseAddrError;

    /// Parses the `Display` form: `client:3`, `aco:0`, `sp:1`, `telecom`, `provider`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseAddrError(s.to_string());
        let (label, index) = match s.split_once(':') {
            Some((label, idx)) => (label, Some(idx.parse::<u16>().map_err(|_| err())?)),
            None => (s, None),
        };
        let kind = ActorKind::ALL
            .into_iter()
            .find(|k| k.label() == label)
            .ok_or_else(err)?;
        match (kind.is_singleton(), index) {
            (true, None) | (true, Some(0)) => Ok(ActorAddr { kind, index: 0 }),
            (false, Some(index)) => Ok(ActorAddr { kind, index }),
            _ => Err(err()),
        }
    }
}

impl<'de> serde::Deserialize<'de> for ActorAddr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    AccessRequest,
    ChallengeToken,
    KeyRequest,
    AuthDecision,
    ServiceAccessRequest,
    ServicePermit,
    ServiceUse,
    ServiceReply,
    ErrorMsg,
}

impl MessageKind {
    pub const ALL: [MessageKind; 9] = [
        MessageKind::AccessRequest,
        MessageKind::ChallengeToken,
        MessageKind::KeyRequest,
        MessageKind::AuthDecision,
        MessageKind::ServiceAccessRequest,
        MessageKind::ServicePermit,
        MessageKind::ServiceUse,
        MessageKind::ServiceReply,
        MessageKind::ErrorMsg,
    ];

    pub fn code(self) -> u8 {
        match self {
            MessageKind::AccessRequest => 1,
            MessageKind::ChallengeToken => 2,
            MessageKind::KeyRequest => 3,
            MessageKind::AuthDecision => 4,
            MessageKind::ServiceAccessRequest => 5,
            MessageKind::ServicePermit => 6,
            MessageKind::ServiceUse => 7,
            MessageKind::ServiceReply => 8,
            MessageKind::ErrorMsg => 9,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// One framed message on a simulated link.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Envelope {
    pub kind: MessageKind,
    /// Shared by every message and audit record of one access attempt.
    pub correlation_id: u64,
    pub src: ActorAddr,
    pub dst: ActorAddr,
    pub sent_at: Tick,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    OversizePayload(usize),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message kind code {0}")]
    UnknownKind(u8),
    #[error("invalid actor address in `{field}`")]
    BadAddress { field: &'static str },
    #[error("frame truncated in `{field}`")]
    TruncatedFrame { field: &'static str },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}

pub fn encode(msg: &Envelope) -> Result<Vec<u8>, WireError> {
    if msg.payload.len() > MAX_PAYLOAD {
        return Err(WireError::OversizePayload(msg.payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + msg.payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(WIRE_VERSION);
    out.push(msg.kind.code());
    out.extend_from_slice(&msg.correlation_id.to_be_bytes());
    out.extend_from_slice(&msg.src.to_bytes());
    out.extend_from_slice(&msg.dst.to_bytes());
    out.extend_from_slice(&msg.sent_at.to_be_bytes());
    out.extend_from_slice(&(msg.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&msg.payload);
    Ok(out)
}

/// Bounds-checked big-endian reader used by every decoder in the crate.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Option<u8> {
        self.array::<1>().map(|[b]| b)
    }

    pub(crate) fn u16(&mut self) -> Option<u16> {
        self.array().map(u16::from_be_bytes)
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        self.array().map(u32::from_be_bytes)
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        self.array().map(u64::from_be_bytes)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<Envelope, WireError> {
    let mut r = Reader::new(bytes);
    let truncated = |field| WireError::TruncatedFrame { field };

    let magic = r.array::<4>().ok_or(truncated("magic"))?;
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let version = r.u8().ok_or(truncated("version"))?;
    if version != WIRE_VERSION {
        return Err(WireError::BadVersion(version));
    }
    let code = r.u8().ok_or(truncated("kind"))?;
    let kind = MessageKind::from_code(code).ok_or(WireError::UnknownKind(code))?;
    let correlation_id = r.u64().ok_or(truncated("correlation_id"))?;
    let src = r.array::<3>().ok_or(truncated("src"))?;
    let src = ActorAddr::from_bytes(src).ok_or(WireError::BadAddress { field: "src" })?;
    let dst = r.array::<3>().ok_or(truncated("dst"))?;
    let dst = ActorAddr::from_bytes(dst).ok_or(WireError::BadAddress { field: "dst" })?;
    let sent_at = r.u64().ok_or(truncated("sent_at"))?;
    let len = r.u32().ok_or(truncated("payload_len"))? as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::OversizePayload(len));
    }
    let payload = r.take(len).ok_or(truncated("payload"))?.to_vec();
    if r.remaining() > 0 {
        return Err(WireError::TrailingBytes(r.remaining()));
    }
    Ok(Envelope { kind, correlation_id, src, dst, sent_at, payload })
}
