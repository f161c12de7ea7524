//! Fixed-layout payload schemas, one per [`MessageKind`].
//!
//! | kind | layout |
//! |------|--------|
//! | AccessRequest | service_type u16, client_nonce [16] |
//! | ChallengeToken | token_nonce [16], sealed token tag |
//! | KeyRequest | client addr, infra_ok u8, digest [16], sealed token tag |
//! | AuthDecision | client addr, granted u8, reason u8, amount u32, [sealed access key if granted] |
//! | ServiceAccessRequest | client addr, service_type u16, sealed access key |
//! | ServicePermit | client addr, service_type u16, expires_at u64 |
//! | ServiceUse | client addr, use_seq u32, flags u8, data_len u16, data |
//! | ServiceReply | client addr, use_seq u32, data_len u16, data |
//! | ErrorMsg | client addr, code u8 |
//!
//! Addresses are the 3-byte wire form; sealed boxes use [`SealedBox::write`].

use thiserror::Error;

use crate::crypto::{Digest, SealedBox};
use crate::wire::{ActorAddr, MessageKind, Reader};
use crate::Tick;

pub type Nonce = [u8; 16];

pub fn nonce_hex(n: &Nonce) -> String {
    hex::encode(n)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed {kind} payload")]
pub struct PayloadError {
    pub kind: MessageKind,
}

/// Why the access provider refused a key request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DenyReason {
    TokenInvalid,
    TokenReplayOrExpired,
    BadCredential,
    InsufficientFunds,
    NoPrivilege,
    AccountClosed,
    InfraError,
}

impl DenyReason {
    pub const ALL: [DenyReason; 7] = [
        DenyReason::TokenInvalid,
        DenyReason::TokenReplayOrExpired,
        DenyReason::BadCredential,
        DenyReason::InsufficientFunds,
        DenyReason::NoPrivilege,
        DenyReason::AccountClosed,
        DenyReason::InfraError,
    ];

    pub fn code(self) -> u8 {
        DenyReason::ALL.iter().position(|&r| r == self).unwrap() as u8 + 1
    }

    pub fn from_code(code: u8) -> Option<Self> {
        DenyReason::ALL.get(usize::from(code).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DenyReason::TokenInvalid => "TokenInvalid",
            DenyReason::TokenReplayOrExpired => "TokenReplayOrExpired",
            DenyReason::BadCredential => "BadCredential",
            DenyReason::InsufficientFunds => "InsufficientFunds",
            DenyReason::NoPrivilege => "NoPrivilege",
            DenyReason::AccountClosed => "AccountClosed",
            DenyReason::InfraError => "InfraError",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        DenyReason::ALL.into_iter().find(|r| r.name() == name)
    }
}

/// Error codes carried by `ErrorMsg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorCode {
    UnknownServiceType,
    KeyInvalid,
    KeyConsumed,
    KeyExpired,
    NotAuthorized,
    ClientProhibited,
    ServiceFault,
    NoSession,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 8] = [
        ErrorCode::UnknownServiceType,
        ErrorCode::KeyInvalid,
        ErrorCode::KeyConsumed,
        ErrorCode::KeyExpired,
        ErrorCode::NotAuthorized,
        ErrorCode::ClientProhibited,
        ErrorCode::ServiceFault,
        ErrorCode::NoSession,
    ];

    pub fn code(self) -> u8 {
        ErrorCode::ALL.iter().position(|&c| c == self).unwrap() as u8 + 1
    }

    pub fn from_code(code: u8) -> Option<Self> {
        ErrorCode::ALL.get(usize::from(code).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCode::UnknownServiceType => "UnknownServiceType",
            ErrorCode::KeyInvalid => "KeyInvalid",
            ErrorCode::KeyConsumed => "KeyConsumed",
            ErrorCode::KeyExpired => "KeyExpired",
            ErrorCode::NotAuthorized => "NotAuthorized",
            ErrorCode::ClientProhibited => "ClientProhibited",
            ErrorCode::ServiceFault => "ServiceFault",
            ErrorCode::NoSession => "NoSession",
        }
    }

    /// Errors after which the service provider refuses the client for good.
    pub fn prohibits(self) -> bool {
        matches!(self, ErrorCode::ServiceFault | ErrorCode::ClientProhibited)
    }
}

/// The tag an ACO seals into every challenge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenTag {
    pub service_type: u16,
    pub issued_at: Tick,
    pub event_place: ActorAddr,
    pub token_nonce: Nonce,
    pub price: u32,
}

impl TokenTag {
    pub const LEN: usize = 2 + 8 + 3 + 16 + 4;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.extend_from_slice(&self.service_type.to_be_bytes());
        out.extend_from_slice(&self.issued_at.to_be_bytes());
        out.extend_from_slice(&self.event_place.to_bytes());
        out.extend_from_slice(&self.token_nonce);
        out.extend_from_slice(&self.price.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<TokenTag> {
        let mut r = Reader::new(bytes);
        let tag = TokenTag {
            service_type: r.u16()?,
            issued_at: r.u64()?,
            event_place: ActorAddr::from_bytes(r.array()?)?,
            token_nonce: r.array()?,
            price: r.u32()?,
        };
        (r.remaining() == 0).then_some(tag)
    }
}

/// Plaintext of the access key the provider seals for the service provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessGrant {
    pub client: ActorAddr,
    pub aco: ActorAddr,
    pub service_type: u16,
    pub token_nonce: Nonce,
    pub expires_at: Tick,
}

impl AccessGrant {
    pub const LEN: usize = 3 + 3 + 2 + 16 + 8;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.extend_from_slice(&self.client.to_bytes());
        out.extend_from_slice(&self.aco.to_bytes());
        out.extend_from_slice(&self.service_type.to_be_bytes());
        out.extend_from_slice(&self.token_nonce);
        out.extend_from_slice(&self.expires_at.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<AccessGrant> {
        let mut r = Reader::new(bytes);
        let grant = AccessGrant {
            client: ActorAddr::from_bytes(r.array()?)?,
            aco: ActorAddr::from_bytes(r.array()?)?,
            service_type: r.u16()?,
            token_nonce: r.array()?,
            expires_at: r.u64()?,
        };
        (r.remaining() == 0).then_some(grant)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Granted { amount: u32, access_key: SealedBox },
    Denied { reason: DenyReason },
}

pub const USE_FLAG_END: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    AccessRequest { service_type: u16, client_nonce: Nonce },
    ChallengeToken { token_nonce: Nonce, sealed_tag: SealedBox },
    KeyRequest { client: ActorAddr, infra_ok: bool, digest: Digest, sealed_tag: SealedBox },
    AuthDecision { client: ActorAddr, decision: Decision },
    ServiceAccessRequest { client: ActorAddr, service_type: u16, access_key: SealedBox },
    ServicePermit { client: ActorAddr, service_type: u16, expires_at: Tick },
    ServiceUse { client: ActorAddr, use_seq: u32, flags: u8, data: Vec<u8> },
    ServiceReply { client: ActorAddr, use_seq: u32, data: Vec<u8> },
    ErrorMsg { client: ActorAddr, code: ErrorCode },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::AccessRequest { .. } => MessageKind::AccessRequest,
            Payload::ChallengeToken { .. } => MessageKind::ChallengeToken,
            Payload::KeyRequest { .. } => MessageKind::KeyRequest,
            Payload::AuthDecision { .. } => MessageKind::AuthDecision,
            Payload::ServiceAccessRequest { .. } => MessageKind::ServiceAccessRequest,
            Payload::ServicePermit { .. } => MessageKind::ServicePermit,
            Payload::ServiceUse { .. } => MessageKind::ServiceUse,
            Payload::ServiceReply { .. } => MessageKind::ServiceReply,
            Payload::ErrorMsg { .. } => MessageKind::ErrorMsg,
        }
    }

    /// The mobile client a provider-side message concerns, used by relays for routing.
    pub fn client(&self) -> Option<ActorAddr> {
        match self {
            Payload::AccessRequest { .. } | Payload::ChallengeToken { .. } => None,
            Payload::KeyRequest { client, .. }
            | Payload::AuthDecision { client, .. }
            | Payload::ServiceAccessRequest { client, .. }
            | Payload::ServicePermit { client, .. }
            | Payload::ServiceUse { client, .. }
            | Payload::ServiceReply { client, .. }
            | Payload::ErrorMsg { client, .. } => Some(*client),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Payload::AccessRequest { service_type, client_nonce } => {
                out.extend_from_slice(&service_type.to_be_bytes());
                out.extend_from_slice(client_nonce);
            }
            Payload::ChallengeToken { token_nonce, sealed_tag } => {
                out.extend_from_slice(token_nonce);
                sealed_tag.write(&mut out);
            }
            Payload::KeyRequest { client, infra_ok, digest, sealed_tag } => {
                out.extend_from_slice(&client.to_bytes());
                out.push(u8::from(*infra_ok));
                out.extend_from_slice(&digest.0);
                sealed_tag.write(&mut out);
            }
            Payload::AuthDecision { client, decision } => {
                out.extend_from_slice(&client.to_bytes());
                match decision {
                    Decision::Granted { amount, access_key } => {
                        out.extend_from_slice(&[1, 0]);
                        out.extend_from_slice(&amount.to_be_bytes());
                        access_key.write(&mut out);
                    }
                    Decision::Denied { reason } => {
                        out.extend_from_slice(&[0, reason.code()]);
                        out.extend_from_slice(&0u32.to_be_bytes());
                    }
                }
            }
            Payload::ServiceAccessRequest { client, service_type, access_key } => {
                out.extend_from_slice(&client.to_bytes());
                out.extend_from_slice(&service_type.to_be_bytes());
                access_key.write(&mut out);
            }
            Payload::ServicePermit { client, service_type, expires_at } => {
                out.extend_from_slice(&client.to_bytes());
                out.extend_from_slice(&service_type.to_be_bytes());
                out.extend_from_slice(&expires_at.to_be_bytes());
            }
            Payload::ServiceUse { client, use_seq, flags, data } => {
                out.extend_from_slice(&client.to_bytes());
                out.extend_from_slice(&use_seq.to_be_bytes());
                out.push(*flags);
                out.extend_from_slice(&(data.len() as u16).to_be_bytes());
                out.extend_from_slice(data);
            }
            Payload::ServiceReply { client, use_seq, data } => {
                out.extend_from_slice(&client.to_bytes());
                out.extend_from_slice(&use_seq.to_be_bytes());
                out.extend_from_slice(&(data.len() as u16).to_be_bytes());
                out.extend_from_slice(data);
            }
            Payload::ErrorMsg { client, code } => {
                out.extend_from_slice(&client.to_bytes());
                out.push(code.code());
            }
        }
        out
    }

    pub fn decode(kind: MessageKind, bytes: &[u8]) -> Result<Payload, PayloadError> {
        let mut r = Reader::new(bytes);
        let payload = Self::read(kind, &mut r).ok_or(PayloadError { kind })?;
        if r.remaining() != 0 {
            return Err(PayloadError { kind });
        }
        Ok(payload)
    }

    fn read(kind: MessageKind, r: &mut Reader<'_>) -> Option<Payload> {
        let addr = |r: &mut Reader<'_>| ActorAddr::from_bytes(r.array()?);
        let data = |r: &mut Reader<'_>| {
            let len = r.u16()? as usize;
            Some(r.take(len)?.to_vec())
        };
        Some(match kind {
            MessageKind::AccessRequest => {
                Payload::AccessRequest { service_type: r.u16()?, client_nonce: r.array()? }
            }
            MessageKind::ChallengeToken => Payload::ChallengeToken {
                token_nonce: r.array()?,
                sealed_tag: SealedBox::read(r)?,
            },
            MessageKind::KeyRequest => Payload::KeyRequest {
                client: addr(r)?,
                infra_ok: match r.u8()? {
                    0 => false,
                    1 => true,
                    _ => return None,
                },
                digest: Digest(r.array()?),
                sealed_tag: SealedBox::read(r)?,
            },
            MessageKind::AuthDecision => {
                let client = addr(r)?;
                let granted = r.u8()?;
                let reason = r.u8()?;
                let amount = r.u32()?;
                let decision = match (granted, reason) {
                    (1, 0) => Decision::Granted { amount, access_key: SealedBox::read(r)? },
                    (0, code) if amount == 0 => {
                        Decision::Denied { reason: DenyReason::from_code(code)? }
                    }
                    _ => return None,
                };
                Payload::AuthDecision { client, decision }
            }
            MessageKind::ServiceAccessRequest => Payload::ServiceAccessRequest {
                client: addr(r)?,
                service_type: r.u16()?,
                access_key: SealedBox::read(r)?,
            },
            MessageKind::ServicePermit => Payload::ServicePermit {
                client: addr(r)?,
                service_type: r.u16()?,
                expires_at: r.u64()?,
            },
            MessageKind::ServiceUse => Payload::ServiceUse {
                client: addr(r)?,
                use_seq: r.u32()?,
                flags: r.u8()?,
                data: data(r)?,
            },
            MessageKind::ServiceReply => {
                Payload::ServiceReply { client: addr(r)?, use_seq: r.u32()?, data: data(r)? }
            }
            MessageKind::ErrorMsg => {
                Payload::ErrorMsg { client: addr(r)?, code: ErrorCode::from_code(r.u8()?)? }
            }
        })
    }
}
